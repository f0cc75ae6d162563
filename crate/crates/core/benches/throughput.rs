//! Parallel vs sequential throughput on the data-parallel inner loops.
//!
//! The default `parallel` feature routes batch work through rayon; the
//! sequential path stays compiled either way, so one bench run compares
//! both. Build with `--no-default-features` to confirm the sequential
//! fallback matches the "seq" numbers here.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use aqa_core::datamodel::{Passage, QARecord};
use aqa_core::exec;
use aqa_core::gateway::Gateway;
use aqa_core::normalize::MatchPolicy;
use aqa_core::pipeline::{answer_adaptive, RunOptions};
use aqa_core::retriever::{build_index, retrieve_top_k, IndexedCorpus};
use aqa_core::testing::rescue_suite;

fn corpus(n: usize) -> IndexedCorpus {
    let passages = (0..n).map(|i| Passage {
        id: format!("p{i:05}"),
        title: None,
        body: format!(
            "passage number {i} talks about topic t{} and topic t{} in item k{i:05}",
            i % 97,
            i % 31
        ),
    });
    build_index(passages).expect("bench corpus")
}

fn bench_batch_retrieval(c: &mut Criterion) {
    let index = corpus(2000);
    let queries: Vec<String> = (0..500)
        .map(|i| format!("what about topic t{} in item k{:05}", i % 97, i % 2000))
        .collect();

    let mut group = c.benchmark_group("batch_retrieval");
    group.bench_with_input(BenchmarkId::new("par", queries.len()), &queries, |b, qs| {
        b.iter(|| exec::map(qs, 0, |q| retrieve_top_k(&index, q, 3).unwrap().ranked.len()))
    });
    group.bench_with_input(BenchmarkId::new("seq", queries.len()), &queries, |b, qs| {
        b.iter(|| exec::map_sequential(qs, |q| retrieve_top_k(&index, q, 3).unwrap().ranked.len()))
    });
    group.finish();
}

fn bench_adaptive_run(c: &mut Criterion) {
    let suite = rescue_suite();
    let index = build_index(suite.passages.clone()).expect("suite corpus");
    let gateway = Gateway::new(suite.model.clone());
    let policy = MatchPolicy::default();
    let opts = RunOptions::default();

    let answer = |record: &QARecord| {
        answer_adaptive(record, &gateway, &index, &policy, &opts)
            .expect("scripted backend cannot fail")
            .correct
    };

    let mut group = c.benchmark_group("adaptive_run");
    group.bench_with_input(
        BenchmarkId::new("par", suite.records.len()),
        &suite.records,
        |b, records| b.iter(|| exec::map(records, 0, answer)),
    );
    group.bench_with_input(
        BenchmarkId::new("seq", suite.records.len()),
        &suite.records,
        |b, records| b.iter(|| exec::map_sequential(records, answer)),
    );
    group.finish();
}

criterion_group!(benches, bench_batch_retrieval, bench_adaptive_run);
criterion_main!(benches);
