//! Criterion benchmarks for the hot paths: graph construction, one hybrid
//! forward pass, and one full train step (forward, backward, Adam).

use std::rc::Rc;

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sagechain_core::data::schema::DatasetId;
use sagechain_core::graph::build_graph;
use sagechain_core::layers::sage::NormalizeMode;
use sagechain_core::model::build::HybridModel;
use sagechain_core::model::config::TrainConfig;
use sagechain_core::model::train::total_loss;
use sagechain_core::tensor::adam::AdamState;
use sagechain_core::tensor::tape::Tape;

fn window_features(seed: u64, w: usize, f: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..w * f).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

fn bench_graph_build(c: &mut Criterion) {
    let (w, f) = (20, 9);
    let features = window_features(1, w, f);
    let labels = vec![0usize; w];
    c.bench_function("graph_build_20x9", |b| {
        b.iter(|| build_graph(black_box(&features), w, f, &labels, 0.5, 0.1).unwrap())
    });
}

fn toy_setup() -> (HybridModel, sagechain_core::SampleGraph, Rc<Vec<usize>>) {
    let (w, f) = (20, 9);
    let features = window_features(2, w, f);
    let labels: Vec<usize> = (0..w).map(|i| i % 3).collect();
    let graph = build_graph(&features, w, f, &labels, 0.5, 0.1).unwrap();
    let mut config = TrainConfig::new(DatasetId::SmartLogistics, "traffic_status");
    config.normalize = NormalizeMode::L2;
    let model = HybridModel::build(&config, f, 3, 7).unwrap();
    (model, graph, Rc::new(labels))
}

fn bench_hybrid_forward(c: &mut Criterion) {
    let (mut model, graph, targets) = toy_setup();
    c.bench_function("hybrid_forward_20_nodes", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape, false);
            let heads = model
                .forward_heads(&mut tape, black_box(&graph), &bound, false, 0)
                .unwrap();
            let (loss, _) = total_loss(&mut tape, &targets, &heads, [1.0, 1.0, 1.0]).unwrap();
            black_box(tape.data(loss)[0])
        })
    });
}

fn bench_train_step(c: &mut Criterion) {
    let (mut model, graph, targets) = toy_setup();
    let mut adam = AdamState::new(&model.params, 1e-3, 1e-4, 4e-4);
    c.bench_function("hybrid_train_step_20_nodes", |b| {
        b.iter(|| {
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape, true);
            let heads = model
                .forward_heads(&mut tape, black_box(&graph), &bound, true, 0)
                .unwrap();
            let (loss, _) = total_loss(&mut tape, &targets, &heads, [1.0, 1.0, 1.0]).unwrap();
            tape.backward(loss).unwrap();
            let mut grads = model.params.collect_grads(&tape, &bound);
            adam.step(&mut model.params, &mut grads);
        })
    });
}

criterion_group!(benches, bench_graph_build, bench_hybrid_forward, bench_train_step);
criterion_main!(benches);
