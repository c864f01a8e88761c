use criterion::{criterion_group, criterion_main, Criterion};
use retrievalbench_bench::{synthetic_document, synthetic_text};
use retrievalbench_core::chunker::{chunk_document, ChunkingStrategy};
use retrievalbench_core::corpus::normalize_str;
use retrievalbench_core::embedder::HashProjection;
use retrievalbench_core::evaluator::{ndcg_at_k, topk_accuracy, PerQueryResult};

fn normalize(c: &mut Criterion) {
    let raw = synthetic_text(100_000, 3).replace(". ", ".  \r\n call 555-123-4567 or a@b.org ");
    c.bench_function("normalize_100k", |b| b.iter(|| normalize_str(&raw, true)));
}

fn chunking(c: &mut Criterion) {
    let doc = synthetic_document(100_000);
    let embedder = HashProjection::new(256, 42);
    let mut g = c.benchmark_group("chunk_100k");
    g.sample_size(20);
    for (name, strategy) in [("recursive", ChunkingStrategy::default()), ("semantic", ChunkingStrategy::semantic_default())] {
        g.bench_function(name, |b| b.iter(|| chunk_document(&doc, &strategy, Some(&embedder)).unwrap()));
    }
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let results: Vec<PerQueryResult> = (0..100_000)
        .map(|i| PerQueryResult {
            query_id: format!("q{i:06}"),
            gt_chunk_id: format!("d:{i:05}"),
            rank_of_truth: if i % 4 == 0 { None } else { Some(1 + i % 13) },
        })
        .collect();
    c.bench_function("metrics_100k", |b| {
        b.iter(|| (topk_accuracy(&results, 10).unwrap(), ndcg_at_k(&results, 10).unwrap()))
    });
}

criterion_group!(benches, normalize, chunking, metrics);
criterion_main!(benches);
