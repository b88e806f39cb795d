use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use warp_core::{
    build_index, build_upsilon, plan, reduce_document_level, reduce_token_level, score_cluster,
    search, synth_corpus, synth_queries, CompressedIndex, IndexConfig, NCentroids, QueryEmbeddings,
    SearchParams, TokenStrideSet,
};

struct Fixture {
    index: CompressedIndex,
    queries: Vec<QueryEmbeddings>,
}

fn fixture() -> Fixture {
    let collection = synth_corpus(7, 2_000, (16, 48), 64);
    let index = build_index(
        &collection,
        &IndexConfig {
            n_centroids: NCentroids::Fixed(256),
            seed: 7,
            ..IndexConfig::default()
        },
    )
    .expect("fixture index");
    let (queries, _) = synth_queries(8, &collection, 8, (32, 32), 0.1);
    Fixture { index, queries }
}

fn bench_retrieval(c: &mut Criterion) {
    let f = fixture();
    let q = &f.queries[0];
    let params = SearchParams::default();

    c.bench_function("plan", |b| {
        b.iter(|| plan(black_box(q), &f.index, &params).unwrap())
    });

    let upsilon = build_upsilon(q, f.index.buckets());
    let largest = (0..f.index.n_centroids())
        .max_by_key(|&c| f.index.cluster_sizes()[c])
        .unwrap();
    c.bench_function("score_cluster/largest", |b| {
        b.iter(|| score_cluster(&f.index, black_box(largest), 0, 0.5, &upsilon).unwrap())
    });

    let probe_plan = plan(q, &f.index, &params).unwrap();
    let token_strides: Vec<_> = probe_plan
        .probes
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let strides = p
                .ids
                .iter()
                .zip(&p.scores)
                .map(|(&c, &s)| score_cluster(&f.index, c as usize, i, s, &upsilon).unwrap())
                .collect();
            reduce_token_level(strides)
        })
        .collect();
    let set = TokenStrideSet::new(token_strides);
    c.bench_function("reduce_document_level", |b| {
        b.iter(|| reduce_document_level(black_box(&set), &probe_plan.missing).unwrap())
    });

    let mut group = c.benchmark_group("search");
    for n_probe in [4usize, 16, 32] {
        let p = SearchParams {
            n_probe,
            ..SearchParams::default()
        };
        group.bench_with_input(BenchmarkId::from_parameter(n_probe), &p, |b, p| {
            b.iter(|| search(&f.index, black_box(q), p).unwrap())
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = bench_retrieval
}
criterion_main!(benches);
