use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use etcnas_core::controllers::{op_fraction, BoostingConfig, Controller, Mcts, MctsConfig, Surrogate, TrialRecord};
use etcnas_core::engine::PolicyNet;
use etcnas_core::space::{decode, DecisionSequence, SpaceConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn space(c: &mut Criterion) {
    let cfg = SpaceConfig::default();
    let seqs: Vec<DecisionSequence> = (0..64).map(|s| cfg.sample_random(s)).collect();
    c.bench_function("decode/default-space", |b| {
        let mut i = 0;
        b.iter(|| {
            i = (i + 1) % seqs.len();
            black_box(decode(&seqs[i], &cfg).unwrap())
        })
    });
    c.bench_function("count_params/default-space", |b| {
        let g = decode(&seqs[0], &cfg).unwrap();
        b.iter(|| black_box(g.count_params()))
    });
}

fn controllers(c: &mut Criterion) {
    let cfg = SpaceConfig::default();
    let arities = cfg.arities();
    let pairs: Vec<(DecisionSequence, f64)> = (0..100)
        .map(|s| {
            let seq = cfg.sample_random(s);
            let r = op_fraction(&seq, 1);
            (seq, r)
        })
        .collect();
    c.bench_function("surrogate/fit-100", |b| {
        b.iter(|| black_box(Surrogate::fit(&pairs, &BoostingConfig::default()).unwrap()))
    });
    let net = PolicyNet::new(&arities, 100, 0);
    let choices = pairs[0].0.as_slice().to_vec();
    c.bench_function("policy/log_prob_grads-h100", |b| b.iter(|| black_box(net.log_prob_grads(&choices))));
    c.bench_function("mcts/100-proposals", |b| {
        b.iter_batched(
            || (Mcts::new(&arities, MctsConfig::default()), ChaCha8Rng::seed_from_u64(0)),
            |(mut m, mut rng)| {
                for i in 0..100 {
                    let seq = m.propose(&mut rng);
                    let r = op_fraction(&seq, 1);
                    m.observe(&TrialRecord::scored(i, seq, r)).unwrap();
                }
                m
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, space, controllers);
criterion_main!(benches);
