//! Whole-network costs: inference forward and one full training step
//! (forward, backward, optimizer) at the toy preset.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use csnln::adam::{adam_step, AdamState};
use csnln::network::{forward, l1_loss};
use csnln::tape::GradTape;
use csnln::tensor::Shape;
use csnln::{CsnlnParams, ModelConfig};
use csnln_bench::bench_tensor;

fn network(c: &mut Criterion) {
    let params = CsnlnParams::<f32>::init(ModelConfig::toy(2), 0).unwrap();
    let lr = bench_tensor(Shape::new(1, 3, 12, 12), 4);
    let hr = bench_tensor(Shape::new(1, 3, 24, 24), 5);
    c.bench_function("toy_forward_12px", |b| {
        b.iter(|| forward(None, black_box(&lr), &params).unwrap())
    });
    c.bench_function("toy_train_step_12px", |b| {
        b.iter(|| {
            let mut p = params.clone();
            let tape = GradTape::new();
            let sr = forward(Some(&tape), &lr, &p).unwrap();
            let loss = l1_loss(Some(&tape), &sr, black_box(&hr)).unwrap();
            let store = tape.backward(&loss).unwrap();
            let mut grads = std::collections::BTreeMap::new();
            for (name, t) in p.named() {
                if let Some(g) = store.get(&t) {
                    grads.insert(name, g.clone());
                }
            }
            let mut state = AdamState::new();
            let mut slots = p.named_mut();
            adam_step(&mut slots, &grads, &mut state, 1e-4).unwrap();
        })
    });
}

criterion_group!(benches, network);
criterion_main!(benches);
