use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ciskip_core::agent::{Agent, AgentConfig};
use ciskip_core::dataset::{Dataset, FeatureSchema, FeatureVector, Label};
use ciskip_core::replay::Transition;
use ciskip_core::tree::{encode_state, greedy_gini_build, random_tree};
use ciskip_core::Action;

fn schema(k: usize) -> FeatureSchema {
    let names: Vec<String> = (0..k).map(|i| format!("f{i:02}")).collect();
    let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
    FeatureSchema::unit_numeric(&refs).unwrap()
}

fn bench_encode_state(c: &mut Criterion) {
    let schema = schema(26);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tree = random_tree(&schema, 4, &mut rng).unwrap();
    c.bench_function("encode_state d4 k26", |b| {
        b.iter(|| encode_state(black_box(&tree), 7, &schema))
    });
}

fn bench_agent_update(c: &mut Criterion) {
    let schema = schema(26);
    let mut agent = Agent::new(&schema, 4, AgentConfig::default(), 3).unwrap();
    let sw = agent.state_width();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch: Vec<Transition> = (0..32)
        .map(|i| Transition {
            state: (0..sw).map(|_| rng.random_range(0.0..1.0)).collect(),
            action: Action { attribute: i % 26, threshold: rng.random_range(0.0..1.0) },
            reward: if i % 15 == 0 { 0.1 } else { 0.0 },
            next_state: (0..sw).map(|_| rng.random_range(0.0..1.0)).collect(),
            terminal: i % 15 == 0,
        })
        .collect();
    let refs: Vec<&Transition> = batch.iter().collect();
    let weights = vec![1.0; refs.len()];
    c.bench_function("agent update batch32", |b| {
        b.iter(|| agent.update(black_box(&refs), &weights).unwrap())
    });
}

fn bench_greedy_build(c: &mut Criterion) {
    let schema = schema(26);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rows: Vec<(FeatureVector, Label)> = (0..1000)
        .map(|_| {
            let v: Vec<f64> = (0..26).map(|_| rng.random_range(0.0..1.0)).collect();
            let label = if v[0] <= 0.3 && v[1] <= 0.6 { Label::Skip } else { Label::Build };
            (FeatureVector(v), label)
        })
        .collect();
    let ds = Dataset::new(schema, rows, "bench").unwrap();
    c.bench_function("greedy gini build d4 n1000", |b| {
        b.iter(|| greedy_gini_build(black_box(&ds), 4, 2).unwrap())
    });
}

criterion_group!(benches, bench_encode_state, bench_agent_update, bench_greedy_build);
criterion_main!(benches);
