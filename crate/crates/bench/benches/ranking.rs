use std::collections::BTreeSet;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use tracebench_core::corpus::build_queries;
use tracebench_core::metrics::average_precision;
use tracebench_core::parsing::parse_ranking;
use tracebench_core::sampler::sample_parents;
use tracebench_core::seeded::SeededRng;
use tracebench_core::synthetic::{generate, DRONOLOGY_PL};
use tracebench_core::vsm::{fit_corpus, vsm_rank};

fn ranking(c: &mut Criterion) {
    let dataset = generate(&DRONOLOGY_PL, 1).unwrap();
    let sample = sample_parents(&dataset, 1).unwrap();
    let queries = build_queries(&dataset, &sample.ids()).unwrap();
    let query = &queries[4];

    c.bench_function("fit_corpus/458 children", |b| {
        b.iter(|| fit_corpus(dataset.parents().chain(dataset.children())).unwrap())
    });

    let idf = fit_corpus(dataset.parents().chain(dataset.children())).unwrap();
    c.bench_function("vsm_rank/458 candidates", |b| b.iter(|| vsm_rank(black_box(query), &idf)));

    let ranked: Vec<String> = vsm_rank(query, &idf).into_iter().map(|(id, _)| id).collect();
    c.bench_function("average_precision/458", |b| {
        b.iter(|| average_precision(black_box(&ranked), &query.relevant_ids).unwrap())
    });

    let expected: BTreeSet<String> = ranked.iter().cloned().collect();
    // a model answer that drops a third of the ids and repeats some
    let mut rng = SeededRng::new(9);
    let mut tokens: Vec<&str> = ranked.iter().filter(|_| rng.below(3) != 0).map(String::as_str).collect();
    tokens.extend(ranked[..20].iter().map(String::as_str));
    let response = tokens.join(", ");
    c.bench_function("parse_ranking/458 with repair", |b| {
        b.iter_batched(
            || response.clone(),
            |r| parse_ranking(&r, &expected, 3).unwrap(),
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, ranking);
criterion_main!(benches);
