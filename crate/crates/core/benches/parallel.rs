//! Parallel-versus-sequential comparison on the crate's data-parallel inner
//! loops: batch forward evaluation, key collection, and the KL metric.
//!
//! Requires the default `parallel` feature; `map_slice` then runs on rayon
//! while `map_slice_seq` is the sequential fallback the crate compiles to
//! without the feature.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use editlab_core::harness::fixtures::{default_model, generate_counterfactual};
use editlab_core::metrics::kl_divergence;
use editlab_core::model::last_token_logits;
use editlab_core::par::{map_slice, map_slice_seq};
use editlab_core::TokenId;

fn tokenized_queries() -> (editlab_core::ToyTransformer, Vec<Vec<TokenId>>) {
    let model = default_model();
    let dataset = generate_counterfactual(&model, 42).expect("fixture generation");
    let queries: Vec<Vec<TokenId>> = dataset
        .preservation_query_strings()
        .iter()
        .map(|q| model.vocab().tokenize(q).expect("fixture queries tokenize"))
        .collect();
    (model, queries)
}

fn bench_batch_forward(c: &mut Criterion) {
    let (model, queries) = tokenized_queries();
    let mut group = c.benchmark_group("batch_forward");
    group.bench_with_input(BenchmarkId::new("parallel", queries.len()), &queries, |b, qs| {
        b.iter(|| {
            black_box(map_slice(qs, |tokens| {
                last_token_logits(&model, tokens).unwrap().scores[0]
            }))
        })
    });
    group.bench_with_input(BenchmarkId::new("sequential", queries.len()), &queries, |b, qs| {
        b.iter(|| {
            black_box(map_slice_seq(qs, |tokens| {
                last_token_logits(&model, tokens).unwrap().scores[0]
            }))
        })
    });
    group.finish();
}

fn bench_key_collection(c: &mut Criterion) {
    let (model, queries) = tokenized_queries();
    let layer = 2usize;
    let mut group = c.benchmark_group("key_collection");
    group.bench_function("parallel", |b| {
        b.iter(|| {
            black_box(map_slice(&queries, |tokens| {
                model.extract_key(tokens, layer, tokens.len() - 1).unwrap()[0]
            }))
        })
    });
    group.bench_function("sequential", |b| {
        b.iter(|| {
            black_box(map_slice_seq(&queries, |tokens| {
                model.extract_key(tokens, layer, tokens.len() - 1).unwrap()[0]
            }))
        })
    });
    group.finish();
}

fn bench_kl_suite(c: &mut Criterion) {
    let (model, queries) = tokenized_queries();
    // compare against a perturbed model so the KL work is non-trivial
    let (d, ff) = (model.config().d_model, model.config().d_ff());
    let delta = nalgebra::DMatrix::from_fn(d, ff, |r, c| 1e-3 * ((r * 7 + c) as f64).sin());
    let edited = model.apply_delta(2, &delta).unwrap();

    let per_query = |tokens: &Vec<TokenId>| {
        let p = last_token_logits(&model, tokens).unwrap().softmax();
        let q = last_token_logits(&edited, tokens).unwrap().softmax();
        kl_divergence(&p, &q)
    };

    let mut group = c.benchmark_group("kl_specificity");
    group.bench_function("parallel", |b| {
        b.iter(|| black_box(map_slice(&queries, per_query)))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| black_box(map_slice_seq(&queries, per_query)))
    });
    group.finish();
}

criterion_group!(benches, bench_batch_forward, bench_key_collection, bench_kl_suite);
criterion_main!(benches);
