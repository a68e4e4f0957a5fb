//! The three costs that dominate wall-clock: dense matmul inside the graph,
//! one full training step (forward, backward, optimizer update), and the
//! compound-divergence measurement the split search calls in its loop.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use duel_bench::{corpus, training_fixture};
use duel_core::grad::Tape;
use duel_core::splits::{
    compound_divergence, extract_profile, standard_split, CompoundRule, DivergenceConfig,
};
use duel_core::train::{batch_gradients, OptimizerConfig, OptimizerState};
use duel_core::{Block, Tensor};

fn bench_matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for (m, k, n) in [(64usize, 32usize, 32usize), (256, 64, 64)] {
        let a = Tensor::<f32>::full(&[m, k], 0.5);
        let b = Tensor::<f32>::full(&[k, n], 0.25);
        group.bench_function(format!("{m}x{k}·{k}x{n}"), |bench| {
            bench.iter(|| {
                let mut tape: Tape<f32> = Tape::new();
                let x = tape.value(a.clone()).unwrap();
                let y = tape.value(b.clone()).unwrap();
                let z = tape.matmul(x, y).unwrap();
                black_box(tape.value_of(z).data()[0])
            })
        });
    }
    group.finish();
}

fn bench_training_step(c: &mut Criterion) {
    let (cfg, mut params, batch) = training_fixture();
    let mut opt = OptimizerState::new(OptimizerConfig::default()).unwrap();
    c.bench_function("training step (batch 8, joint blocks)", |bench| {
        bench.iter(|| {
            let (loss, grads) =
                batch_gradients(&params, &cfg, &batch, 0.1, None, Block::All).unwrap();
            opt.step(&mut params, &grads, Block::All).unwrap();
            black_box(loss)
        })
    });
}

fn bench_divergence(c: &mut Criterion) {
    let data = corpus();
    let rule = CompoundRule::Bigram;
    let div_cfg = DivergenceConfig::default();
    let pair = standard_split(&data, 0.5, 7).unwrap();
    let train = extract_profile(&pair.train, rule).unwrap();
    let test = extract_profile(&pair.test, rule).unwrap();

    c.bench_function("profile extraction (250 examples)", |bench| {
        bench.iter(|| black_box(extract_profile(&pair.train, rule).unwrap()))
    });
    c.bench_function("compound divergence", |bench| {
        bench.iter(|| black_box(compound_divergence(&train, &test, &div_cfg).unwrap()))
    });
}

criterion_group!(benches, bench_matmul, bench_training_step, bench_divergence);
criterion_main!(benches);
