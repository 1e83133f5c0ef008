//! Sequential vs rayon for the batch kernels. Build with
//! `--no-default-features` to see the parallel policy fall back.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use swarmdesk_core::analysis::{find_negation_pairs, rank_markets, DEFAULT_MATCH_THRESHOLD};
use swarmdesk_core::domain::Probability;
use swarmdesk_core::par::ExecPolicy;
use swarmdesk_core::synthetic::{scanner_corpus, swarm_advantage, AdvantageParams, CorpusParams};

const POLICIES: [(&str, ExecPolicy); 2] = [("sequential", ExecPolicy::Sequential), ("parallel", ExecPolicy::Parallel)];

fn negation_scan(c: &mut Criterion) {
    let mut g = c.benchmark_group("negation_scan");
    g.sample_size(10);
    for total in [200, 1000] {
        let corpus = scanner_corpus(&CorpusParams {
            total,
            ..CorpusParams::default()
        });
        for (name, policy) in POLICIES {
            g.bench_with_input(BenchmarkId::new(name, total), &corpus.markets, |b, m| {
                b.iter(|| find_negation_pairs(policy, black_box(m), DEFAULT_MATCH_THRESHOLD))
            });
        }
    }
    g.finish();
}

fn divergence_ranking(c: &mut Criterion) {
    let mut g = c.benchmark_group("divergence_ranking");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for n in [1_000, 50_000] {
        let inputs: Vec<(String, Probability, Probability)> = (0..n)
            .map(|i| {
                let s = Probability::new(rng.random_range(0.01..0.99)).unwrap();
                let m = Probability::new(rng.random_range(0.01..0.99)).unwrap();
                (format!("m{i}"), s, m)
            })
            .collect();
        for (name, policy) in POLICIES {
            g.bench_with_input(BenchmarkId::new(name, n), &inputs, |b, x| {
                b.iter(|| rank_markets(policy, black_box(x)))
            });
        }
    }
    g.finish();
}

fn synthetic_advantage(c: &mut Criterion) {
    let mut g = c.benchmark_group("swarm_advantage");
    g.sample_size(10);
    let p = AdvantageParams {
        markets: 500,
        runs: 16,
        ..AdvantageParams::default()
    };
    for (name, policy) in POLICIES {
        g.bench_function(name, |b| b.iter(|| swarm_advantage(black_box(&p), policy)));
    }
    g.finish();
}

criterion_group!(benches, negation_scan, divergence_ranking, synthetic_advantage);
criterion_main!(benches);
