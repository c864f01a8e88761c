use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use retrievalbench_bench::{synthetic_queries, synthetic_vectors};
use retrievalbench_core::vector_index::{build_index, IndexKind};

const DIM: usize = 128;

fn kinds() -> [(&'static str, IndexKind); 3] {
    [
        ("flat", IndexKind::FlatExact),
        ("hnsw", IndexKind::Hnsw { m: 16, ef_construction: 100, ef_search: 64 }),
        ("ivf", IndexKind::IvfFlat { nlist: 64, nprobe: 8 }),
    ]
}

fn build(c: &mut Criterion) {
    let (ids, vectors) = synthetic_vectors(2000, DIM);
    let mut g = c.benchmark_group("build_2000");
    g.sample_size(10);
    for (name, kind) in kinds() {
        g.bench_function(name, |b| b.iter(|| build_index(&vectors, &ids, kind, 7).unwrap()));
    }
    g.finish();
}

fn search(c: &mut Criterion) {
    let (ids, vectors) = synthetic_vectors(5000, DIM);
    let queries = synthetic_queries(100, DIM);
    let mut g = c.benchmark_group("search_5000_x100");
    for (name, kind) in kinds() {
        let index = build_index(&vectors, &ids, kind, 7).unwrap();
        for k in [10, 50] {
            g.bench_with_input(BenchmarkId::new(name, k), &k, |b, &k| {
                b.iter(|| queries.iter().map(|q| index.search(q, k).unwrap().len()).sum::<usize>())
            });
        }
    }
    g.finish();
}

criterion_group!(benches, build, search);
criterion_main!(benches);
