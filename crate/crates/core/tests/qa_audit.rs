mod common;

use std::collections::{BTreeMap, HashSet};

use retrievalbench_core::chunker::{chunk_document, chunk_id, Chunk, ChunkingStrategy};
use retrievalbench_core::corpus::{load_documents, normalize_text};
use retrievalbench_core::qa_synth::{build_dataset, GenConfig};
use retrievalbench_core::stopwords::is_stopword;

fn audit_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out.retain(|t| !is_stopword(t));
    out
}

/// The template rule and the three filter rules, written out independently.
fn audit(text: &str) -> Option<&'static str> {
    let mut freq: BTreeMap<String, i64> = BTreeMap::new();
    for t in audit_tokens(text) {
        *freq.entry(t).or_insert(0) += 1;
    }
    let mut best: Vec<(i64, String)> = freq.into_iter().map(|(t, n)| (-n, t)).collect();
    best.sort();
    let question = match best.len() {
        0 => return Some("no_content_tokens"),
        1 => format!("What is discussed regarding {}?", best[0].1),
        _ => format!("What is discussed regarding {} and {}?", best[0].1, best[1].1),
    };
    let n = question.chars().count();
    if n < 10 {
        return Some("too_short");
    }
    if n > 300 {
        return Some("too_long");
    }
    if !question.ends_with('?') {
        return Some("no_question_mark");
    }
    let chunk_tokens: HashSet<String> = audit_tokens(text).into_iter().collect();
    if !audit_tokens(&question).iter().any(|t| chunk_tokens.contains(t)) {
        return Some("no_overlap");
    }
    None
}

fn fixture_chunks(n: usize) -> Vec<Chunk> {
    let loaded = load_documents(&common::fixture_dir(), &["txt".to_string()]).unwrap();
    let strategy = ChunkingStrategy::Recursive { max_chars: 160 };
    let chunks: Vec<Chunk> = loaded
        .documents
        .iter()
        .flat_map(|d| chunk_document(&normalize_text(d, true), &strategy, None).unwrap())
        .take(n)
        .collect();
    assert_eq!(chunks.len(), n, "fixture too small");
    chunks
}

#[test]
fn hundred_fixture_chunks_match_audit() {
    let chunks = fixture_chunks(100);
    let dataset = build_dataset(&GenConfig::default(), &chunks).unwrap();
    assert_eq!(dataset.pairs.len(), 100);
    let expected: Vec<Option<&str>> = chunks.iter().map(|c| audit(&c.text)).collect();
    let audited_failures = expected.iter().filter(|e| e.is_some()).count();
    assert_eq!(dataset.summary.filtered, audited_failures);
    // Every template question names tokens taken from its own chunk, so on
    // real text nothing should fail.
    assert_eq!(audited_failures, 0);
    for (pair, want) in dataset.pairs.iter().zip(&expected) {
        assert_eq!(pair.filter_reason.as_deref(), *want, "{}", pair.chunk_id);
    }
    let ids: HashSet<&str> = chunks.iter().map(|c| c.chunk_id.as_str()).collect();
    assert!(dataset.retained().all(|p| ids.contains(p.chunk_id.as_str())));
}

#[test]
fn mixed_chunks_match_audit() {
    let mut chunks = fixture_chunks(40);
    let crafted = [
        "the of and to in a".to_string(),
        format!("{} {}", "a".repeat(140) + "x", "b".repeat(140) + "y"),
        "??? ... !!!".to_string(),
        "Zoning".to_string(),
    ];
    for (i, text) in crafted.iter().enumerate() {
        let seq = 900 + i;
        chunks.push(Chunk {
            chunk_id: chunk_id("crafted", seq),
            doc_id: "crafted".into(),
            seq,
            text: text.clone(),
            span_start: 0,
            span_end: text.chars().count(),
        });
    }
    let dataset = build_dataset(&GenConfig::default(), &chunks).unwrap();
    let audited: Vec<Option<&str>> = chunks.iter().map(|c| audit(&c.text)).collect();
    assert_eq!(audited.iter().filter(|a| a.is_some()).count(), 3);
    for (pair, want) in dataset.pairs.iter().zip(&audited) {
        assert_eq!(pair.filter_reason.as_deref(), *want, "{}", pair.chunk_id);
        assert_eq!(pair.filtered, want.is_some());
    }
    assert_eq!(dataset.summary.retained, 41);
}

#[test]
fn template_dataset_is_reproducible() {
    let chunks = fixture_chunks(60);
    let a = build_dataset(&GenConfig::TemplateStub { seed: Some(1) }, &chunks).unwrap();
    let b = build_dataset(&GenConfig::TemplateStub { seed: Some(2) }, &chunks).unwrap();
    assert_eq!(a.pairs, b.pairs);
    assert_eq!(serde_json::to_string(&a.pairs).unwrap(), serde_json::to_string(&b.pairs).unwrap());
}
