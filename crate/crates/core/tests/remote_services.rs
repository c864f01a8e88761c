mod common;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde_json::{json, Value};

use common::{dead_url, fast_client, MockServer};
use retrievalbench_core::chunker::{chunk_id, Chunk};
use retrievalbench_core::embedder::{EmbedError, RemoteEmbedder, TextEmbedder};
use retrievalbench_core::qa_synth::{generate_question, GenError, QuestionGenerator};
use retrievalbench_core::reranker::{rerank_top_n, RerankError, Reranker};
use retrievalbench_core::vector_index::SearchHit;

/// Deterministic fake embedding: one-hot on the text length modulo dim.
fn fake_embedding(text: &str, dim: usize) -> Vec<f32> {
    let mut v = vec![0.0; dim];
    v[text.len() % dim] = 1.0;
    v
}

fn embed_server(dim: usize, reverse: bool) -> MockServer {
    MockServer::start(move |_, body| {
        let inputs = body["input"].as_array().cloned().unwrap_or_default();
        let mut data: Vec<Value> = inputs
            .iter()
            .enumerate()
            .map(|(i, t)| json!({"index": i, "embedding": fake_embedding(t.as_str().unwrap(), dim)}))
            .collect();
        if reverse {
            data.reverse();
        }
        (200, json!({"data": data}))
    })
}

fn texts(n: usize) -> Vec<String> {
    (0..n).map(|i| "x".repeat(i + 1)).collect()
}

#[test]
fn remote_embedder_batches_and_reorders_by_index() {
    let server = embed_server(16, true);
    let e = RemoteEmbedder::with_client(fast_client(&server.url), "m", 16, 3, 2);
    let out = e.embed_batch(&texts(10)).unwrap();
    assert_eq!(server.requests(), 4);
    for (i, v) in out.iter().enumerate() {
        assert_eq!(v.values(), fake_embedding(&"x".repeat(i + 1), 16).as_slice());
    }
}

#[test]
fn remote_embedder_sends_model_and_input() {
    let seen = Arc::new(std::sync::Mutex::new(Vec::new()));
    let log = seen.clone();
    let server = MockServer::start(move |_, body| {
        log.lock().unwrap().push(body.clone());
        (200, json!({"data": [{"index": 0, "embedding": [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]}]}))
    });
    let e = RemoteEmbedder::with_client(fast_client(&server.url), "bge-m3", 8, 32, 1);
    e.embed_one("hello").unwrap();
    assert_eq!(seen.lock().unwrap()[0], json!({"model": "bge-m3", "input": ["hello"]}));
}

#[test]
fn dimension_mismatch_is_fatal() {
    let server = embed_server(12, false);
    let e = RemoteEmbedder::with_client(fast_client(&server.url), "m", 16, 4, 1);
    match e.embed_batch(&texts(3)) {
        Err(EmbedError::DimensionMismatch { expected: 16, actual: 12 }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn transient_failures_are_retried() {
    let server = MockServer::start(|n, body| {
        if n == 0 {
            return (503, json!({"error": "busy"}));
        }
        let k = body["input"].as_array().unwrap().len();
        let data: Vec<Value> = (0..k).map(|i| json!({"index": i, "embedding": fake_embedding("ab", 8)})).collect();
        (200, json!({"data": data}))
    });
    let e = RemoteEmbedder::with_client(fast_client(&server.url), "m", 8, 8, 1);
    assert_eq!(e.embed_batch(&texts(2)).unwrap().len(), 2);
    assert_eq!(server.requests(), 2);
}

#[test]
fn exhausted_batches_are_listed() {
    // Batch 1 (texts 2 and 3) always fails.
    let server = MockServer::start(|_, body| {
        let inputs = body["input"].as_array().unwrap();
        if inputs[0].as_str().unwrap().len() == 3 {
            return (500, json!({}));
        }
        let data: Vec<Value> =
            inputs.iter().enumerate().map(|(i, t)| json!({"index": i, "embedding": fake_embedding(t.as_str().unwrap(), 8)})).collect();
        (200, json!({"data": data}))
    });
    let e = RemoteEmbedder::with_client(fast_client(&server.url), "m", 8, 2, 2);
    match e.embed_batch(&texts(6)) {
        Err(EmbedError::Remote { failed_batches, .. }) => assert_eq!(failed_batches, vec![1]),
        other => panic!("{other:?}"),
    }
    // Two good batches once each plus three attempts at the bad one.
    assert_eq!(server.requests(), 5);
}

#[test]
fn unreachable_endpoint_reports_remote_error() {
    let e = RemoteEmbedder::with_client(fast_client(&dead_url()), "m", 8, 2, 1);
    assert!(matches!(e.embed_batch(&texts(1)), Err(EmbedError::Remote { .. })));
}

fn hits(ids: &[&str]) -> Vec<SearchHit> {
    ids.iter().enumerate().map(|(i, id)| SearchHit { chunk_id: id.to_string(), score: 0.9 - i as f32 * 0.1, rank: i + 1 }).collect()
}

fn chunk_texts(ids: &[&str]) -> HashMap<String, String> {
    ids.iter().map(|id| (id.to_string(), format!("text of {id}"))).collect()
}

#[test]
fn cross_encoder_reorders_top_n() {
    let calls = Arc::new(AtomicUsize::new(0));
    let c = calls.clone();
    let server = MockServer::start(move |_, body| {
        c.fetch_add(1, Ordering::SeqCst);
        assert_eq!(body["model"], "bge-reranker");
        assert_eq!(body["query"], "zoning");
        let docs = body["documents"].as_array().unwrap();
        assert_eq!(docs.len(), 3);
        (200, json!({"scores": [0.1, 0.7, 0.7]}))
    });
    let reranker = Reranker::Remote { client: fast_client(&server.url), model_name: "bge-reranker".into() };
    let ids = ["c", "b", "a", "d"];
    let out = rerank_top_n(&reranker, "zoning", &hits(&ids), &chunk_texts(&ids), 3).unwrap();
    let order: Vec<&str> = out.iter().map(|h| h.chunk_id.as_str()).collect();
    assert_eq!(order, ["a", "b", "c", "d"]);
    assert_eq!(out.iter().map(|h| h.rank).collect::<Vec<_>>(), [1, 2, 3, 4]);
    assert_eq!(out[3].score, hits(&ids)[3].score);
    assert_eq!(calls.load(Ordering::SeqCst), 1);
}

#[test]
fn cross_encoder_score_count_mismatch_names_query() {
    let server = MockServer::start(|_, _| (200, json!({"scores": [1.0]})));
    let reranker = Reranker::Remote { client: fast_client(&server.url), model_name: "m".into() };
    let ids = ["a", "b"];
    match rerank_top_n(&reranker, "my query", &hits(&ids), &chunk_texts(&ids), 10) {
        Err(RerankError::Remote { query, .. }) => assert_eq!(query, "my query"),
        other => panic!("{other:?}"),
    }
}

fn chunk(text: &str) -> Chunk {
    Chunk { chunk_id: chunk_id("d", 0), doc_id: "d".into(), seq: 0, text: text.into(), span_start: 0, span_end: text.chars().count() }
}

fn llm(url: &str) -> QuestionGenerator {
    QuestionGenerator::Remote {
        client: fast_client(url),
        model_name: "mixtral".into(),
        prompt_template: "Q for: {chunk}".into(),
        temperature: 0.2,
        in_flight: 2,
    }
}

#[test]
fn llm_prompt_and_first_line() {
    let server = MockServer::start(|_, body| {
        assert_eq!(body["model"], "mixtral");
        assert_eq!(body["temperature"], 0.2);
        assert_eq!(body["messages"][0]["role"], "user");
        assert_eq!(body["messages"][0]["content"], "Q for: The zoning board met.");
        (200, json!({"choices": [{"message": {"role": "assistant", "content": "\n  What did the zoning board do?  \nExplanation: ..."}}]}))
    });
    let q = generate_question(&llm(&server.url), &chunk("The zoning board met.")).unwrap();
    assert_eq!(q, "What did the zoning board do?");
}

#[test]
fn llm_empty_completion_and_failure() {
    let server = MockServer::start(|_, _| (200, json!({"choices": [{"message": {"content": "   "}}]})));
    assert!(matches!(generate_question(&llm(&server.url), &chunk("x y")), Err(GenError::EmptyCompletion)));
    assert!(matches!(generate_question(&llm(&dead_url()), &chunk("x y")), Err(GenError::Remote(_))));
}
