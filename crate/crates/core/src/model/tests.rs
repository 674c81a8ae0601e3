use std::rc::Rc;

use proptest::prelude::*;

use super::build::{stack_dims, DimPattern, HybridModel};
use super::config::{CombineMode, TrainConfig, Variant};
use super::train::{
    argmax_rows, combine_log_probs, fold_graphs, kfold_split, predict, run_experiment_on_table,
    total_loss, train_fold,
};
use crate::data::schema::{DatasetId, DatasetSchema};
use crate::data::table::load_dataset;
use crate::synth;
use crate::tensor::params::ParamGroup;
use crate::tensor::tape::Tape;

fn smart_config(task: &str) -> TrainConfig {
    let mut c = TrainConfig::new(DatasetId::SmartLogistics, task);
    c.epochs = 2;
    c.seed = 17;
    c
}

fn toy_config() -> TrainConfig {
    let mut c = TrainConfig::new(DatasetId::SmartLogistics, "toy");
    c.window_size = 6;
    c.epochs = 50;
    c.k_folds = 2;
    c
}

#[test]
fn stack_dims_follow_the_published_patterns() {
    use DimPattern::{Narrowing, Preserving};
    assert_eq!(stack_dims(8, 3, 4, Narrowing).unwrap(), vec![8, 5, 3, 3]);
    assert_eq!(stack_dims(10, 10, 4, Preserving).unwrap(), vec![10, 10, 10, 10]);
    assert_eq!(stack_dims(12, 4, 4, Narrowing).unwrap(), vec![12, 8, 4, 4]);
    assert_eq!(stack_dims(8, 3, 2, Narrowing).unwrap(), vec![8, 3]);
    assert_eq!(stack_dims(8, 3, 3, Narrowing).unwrap(), vec![8, 5, 3]);
    assert_eq!(stack_dims(8, 3, 5, Narrowing).unwrap(), vec![8, 8, 5, 3, 3]);
    // smart-logistics tasks keep the feature width at any depth
    assert_eq!(stack_dims(9, 3, 4, Preserving).unwrap(), vec![9, 9, 9, 9]);
    assert_eq!(
        DimPattern::for_dataset(DatasetId::SmartLogistics),
        Preserving
    );
    assert_eq!(DimPattern::for_dataset(DatasetId::Shipping), Narrowing);
    assert!(stack_dims(8, 3, 1, Narrowing).is_err());
}

#[test]
fn shipping_hybrid_weight_shapes_under_both_variants() {
    let mut config = smart_config("shipment_mode");
    config.dataset_id = DatasetId::Shipping;
    let model = HybridModel::build(&config, 8, 3, 1).unwrap();
    let shapes: Vec<(usize, usize)> = model
        .params
        .entries()
        .iter()
        .filter(|e| e.name.starts_with("sage") && e.name.ends_with(".weight"))
        .map(|e| (e.rows, e.cols))
        .collect();
    // concat path: [2·in × out] per layer
    assert_eq!(shapes, vec![(16, 8), (16, 5), (10, 3), (6, 3)]);

    let mut config = config.clone();
    config.sage_variant = crate::layers::sage::SageVariant::Convolutional;
    let model = HybridModel::build(&config, 8, 3, 1).unwrap();
    let shapes: Vec<(usize, usize)> = model
        .params
        .entries()
        .iter()
        .filter(|e| e.name.starts_with("sage") && e.name.ends_with(".weight"))
        .map(|e| (e.rows, e.cols))
        .collect();
    assert_eq!(shapes, vec![(8, 8), (8, 5), (5, 3), (3, 3)]);
}

#[test]
fn graph_only_variant_has_no_branch_parameters() {
    let mut config = smart_config("traffic_status");
    config.variant = Variant::SageOnly;
    let model = HybridModel::build(&config, 9, 3, 1).unwrap();
    assert!(model.conv.is_none() && model.lstm.is_none());
    assert!(model
        .params
        .entries()
        .iter()
        .all(|e| !e.name.starts_with("conv.") && !e.name.starts_with("lstm.")));
}

#[test]
fn same_seed_builds_identical_parameters() {
    let config = smart_config("traffic_status");
    let a = HybridModel::build(&config, 9, 3, 99).unwrap();
    let b = HybridModel::build(&config, 9, 3, 99).unwrap();
    assert_eq!(a.checksum(), b.checksum());
    let c = HybridModel::build(&config, 9, 3, 100).unwrap();
    assert_ne!(a.checksum(), c.checksum());
}

#[test]
fn hybrid_and_graph_only_share_the_graph_branch_initialization() {
    let mut config = smart_config("traffic_status");
    let hybrid = HybridModel::build(&config, 9, 3, 5).unwrap();
    config.variant = Variant::SageOnly;
    let single = HybridModel::build(&config, 9, 3, 5).unwrap();
    for e in single.params.entries() {
        let counterpart = hybrid
            .params
            .entries()
            .iter()
            .find(|h| h.name == e.name)
            .expect("graph parameter present in hybrid");
        assert_eq!(counterpart.data, e.data, "{} differs", e.name);
    }
}

#[test]
fn checkpoint_save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = smart_config("traffic_status");
    let mut model = HybridModel::build(&config, 9, 3, 7).unwrap();
    let checksum = model.checksum();
    let prefix = dir.path().join("fold_0");
    model
        .save_checkpoint(&prefix, None, serde_json::json!({"fold": 0}))
        .unwrap();
    let mut restored = HybridModel::build(&config, 9, 3, 8).unwrap();
    assert_ne!(restored.checksum(), checksum);
    restored.load_checkpoint(&prefix).unwrap();
    assert_eq!(restored.checksum(), checksum);
}

fn toy_graph(seed: u64, n: usize, f: usize) -> crate::graph::SampleGraph {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let features: Vec<f64> = (0..n * f).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    crate::graph::build_graph(&features, n, f, &labels, 0.2, 0.1).unwrap()
}

#[test]
fn total_loss_is_the_sum_of_per_head_cross_entropies() {
    let config = smart_config("traffic_status");
    let mut model = HybridModel::build(&config, 4, 3, 3).unwrap();
    let graph = toy_graph(1, 10, 4);
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, false);
    let heads = model.forward_heads(&mut tape, &graph, &bound, false, 0).unwrap();
    let targets = Rc::new(graph.labels.clone());
    let (loss, values) = total_loss(&mut tape, &targets, &heads, [1.0, 1.0, 1.0]).unwrap();
    let total = tape.data(loss)[0];
    assert!((total - (values[0] + values[1] + values[2])).abs() < 1e-12);

    // independent recomputation of each head's cross-entropy
    for (head, expect) in [
        (Some(heads.graph), values[0]),
        (heads.conv, values[1]),
        (heads.lstm, values[2]),
    ] {
        let head = head.unwrap();
        let ce = tape.cross_entropy(head, targets.clone()).unwrap();
        assert!((tape.data(ce)[0] - expect).abs() < 1e-12);
    }

    // masking: λ = (1, 0, 0) equals the graph head term alone
    let (masked, _) = total_loss(&mut tape, &targets, &heads, [1.0, 0.0, 0.0]).unwrap();
    assert!((tape.data(masked)[0] - values[0]).abs() < 1e-12);
}

#[test]
fn perfect_heads_give_zero_loss() {
    // craft log-probs that put all mass on the true class
    let mut tape = Tape::new();
    let labels = vec![0usize, 1, 2];
    let mut data = vec![-40.0; 9];
    for (i, &l) in labels.iter().enumerate() {
        data[i * 3 + l] = -1e-12;
    }
    let lp = tape.leaf(data, 3, 3, false);
    let heads = super::build::HeadOutputs {
        graph: lp,
        conv: Some(lp),
        lstm: Some(lp),
    };
    let (loss, _) = total_loss(&mut tape, &Rc::new(labels), &heads, [1.0, 1.0, 1.0]).unwrap();
    assert!(tape.data(loss)[0].abs() < 1e-9);
}

#[test]
fn branch_parameters_get_zero_gradient_when_masked() {
    let config = smart_config("traffic_status");
    let mut model = HybridModel::build(&config, 4, 3, 4).unwrap();
    let graph = toy_graph(2, 8, 4);
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, true);
    let heads = model.forward_heads(&mut tape, &graph, &bound, true, 0).unwrap();
    let targets = Rc::new(graph.labels.clone());
    let (loss, _) = total_loss(&mut tape, &targets, &heads, [1.0, 0.0, 0.0]).unwrap();
    tape.backward(loss).unwrap();
    let grads = model.params.collect_grads(&tape, &bound);
    for (e, g) in model.params.entries().iter().zip(&grads) {
        if e.group == ParamGroup::Sequence {
            assert!(g.iter().all(|v| *v == 0.0), "{} got gradient", e.name);
        }
    }
    // and the graph head did get gradient
    let graph_grads: f64 = model
        .params
        .entries()
        .iter()
        .zip(&grads)
        .filter(|(e, _)| e.group == ParamGroup::Graph)
        .map(|(_, g)| g.iter().map(|v| v.abs()).sum::<f64>())
        .sum();
    assert!(graph_grads > 0.0);
}

#[test]
fn kfold_is_an_exact_partition() {
    let split = kfold_split(50, 10, 17).unwrap();
    assert_eq!(split.folds.len(), 10);
    assert!(split.folds.iter().all(|f| f.len() == 5));
    let mut seen = vec![false; 50];
    for fold in &split.folds {
        for &w in fold {
            assert!(!seen[w], "window {w} in two folds");
            seen[w] = true;
        }
    }
    assert!(seen.into_iter().all(|s| s));

    assert!(kfold_split(5, 10, 17).is_err());
    let a = kfold_split(53, 10, 1).unwrap();
    let b = kfold_split(53, 10, 2).unwrap();
    assert_ne!(a, b, "different seeds, different assignment");
    let sizes = |s: &super::train::FoldSplit| s.folds.iter().map(|f| f.len()).collect::<Vec<_>>();
    assert_eq!(sizes(&a), sizes(&b));
}

proptest! {
    #[test]
    fn kfold_partitions_for_any_size(n in 10usize..200, k in 2usize..10, seed in 0u64..20) {
        prop_assume!(n >= k);
        let split = kfold_split(n, k, seed).unwrap();
        let mut all: Vec<usize> = split.folds.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        let max = split.folds.iter().map(|f| f.len()).max().unwrap();
        let min = split.folds.iter().map(|f| f.len()).min().unwrap();
        prop_assert!(max - min <= 1);
    }
}

#[test]
fn zero_learning_rate_freezes_parameters() {
    let data = synth::separable_task(36, 4, 2, 6, 3);
    let mut config = toy_config();
    config.epochs = 4;
    config.lr_graph = 0.0;
    config.lr_seq = 0.0;
    config.weight_decay = 0.0;
    let graphs = fold_graphs(&data, &config, &[0, 1, 2, 3]).unwrap();
    let outcome = train_fold(&config, &data, &graphs, 0, &[0, 1, 2, 3], &[4, 5]).unwrap();
    let fresh = HybridModel::build(
        &config,
        data.n_features,
        data.n_classes,
        {
            // same derivation as train_fold uses
            let mut h = config.seed ^ 0x51_7c_c1_b7_27_22_0a_95;
            for &p in &[0u64, 0xbead] {
                h ^= p.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(31);
                h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9) ^ (h >> 27);
            }
            h
        },
    )
    .unwrap();
    assert_eq!(outcome.model.checksum(), fresh.checksum(), "parameters must not move");
    let h = &outcome.history;
    assert!((h.total_loss[0] - h.total_loss[3]).abs() < 1e-9, "loss must stay flat");
}

#[test]
fn separable_toy_reaches_full_training_accuracy() {
    let data = synth::separable_task(72, 4, 3, 6, 5);
    let mut config = toy_config();
    config.epochs = 50;
    config.lr_graph = 0.01;
    config.lr_seq = 0.005;
    let train: Vec<usize> = (0..10).collect();
    let val = vec![10, 11];
    let graphs = fold_graphs(&data, &config, &train).unwrap();
    let outcome = train_fold(&config, &data, &graphs, 0, &train, &val).unwrap();
    let best_train = outcome
        .history
        .train_acc
        .iter()
        .cloned()
        .fold(0.0f64, f64::max);
    assert!(
        (best_train - 100.0).abs() < 1e-9,
        "expected 100% train accuracy within 50 epochs, best was {best_train}"
    );
}

#[test]
fn fixture_training_loss_decreases() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/fixtures/smart_logistics_50.csv");
    let schema = DatasetSchema::builtin(DatasetId::SmartLogistics);
    let table = load_dataset(std::path::Path::new(path), &schema).unwrap();
    let mut config = smart_config("logistics_delay");
    config.window_size = 10;
    config.epochs = 400;
    config.k_folds = 2;
    let run = run_experiment_on_table(&config, &schema, &table).unwrap();
    for f in &run.report.folds {
        let h = &f.history;
        assert!(
            h.total_loss[h.epochs() - 1] < h.total_loss[0],
            "fold {} loss went {} -> {}",
            f.fold,
            h.total_loss[0],
            h.total_loss[h.epochs() - 1]
        );
    }
}

#[test]
fn predict_combiner_behaviour() {
    let config = smart_config("traffic_status");
    let mut model = HybridModel::build(&config, 4, 3, 9).unwrap();
    let graph = toy_graph(4, 8, 4);

    // hybrid output equals the manual average of the dumped head outputs
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape, false);
    let heads = model.forward_heads(&mut tape, &graph, &bound, false, 0).unwrap();
    let manual: Vec<f64> = {
        let g = tape.data(heads.graph);
        let c = tape.data(heads.conv.unwrap());
        let l = tape.data(heads.lstm.unwrap());
        g.iter()
            .zip(c)
            .zip(l)
            .map(|((a, b), d)| (a + b + d) / 3.0)
            .collect()
    };
    let combined = combine_log_probs(&tape, &heads, CombineMode::MeanHeads);
    assert_eq!(combined, manual);

    // identical heads: mean equals any single head
    let fake = super::build::HeadOutputs {
        graph: heads.graph,
        conv: Some(heads.graph),
        lstm: Some(heads.graph),
    };
    let same = combine_log_probs(&tape, &fake, CombineMode::MeanHeads);
    for (a, b) in same.iter().zip(tape.data(heads.graph)) {
        assert!((a - b).abs() < 1e-12);
    }

    // argmax is invariant to a constant shift per row
    let (preds, log_probs) = predict(&mut model, &graph, CombineMode::MeanHeads).unwrap();
    let shifted: Vec<f64> = log_probs.iter().map(|v| v + 7.5).collect();
    assert_eq!(argmax_rows(&shifted, 3), preds);
}

#[test]
fn run_experiment_structural_contract() {
    let csv = synth::smart_logistics_csv(1000, 21);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("smart.csv");
    std::fs::write(&path, csv).unwrap();
    let schema = DatasetSchema::builtin(DatasetId::SmartLogistics);
    let table = load_dataset(&path, &schema).unwrap();
    let mut config = smart_config("traffic_status");
    config.epochs = 2;
    let run = run_experiment_on_table(&config, &schema, &table).unwrap();
    let report = &run.report;
    assert_eq!(report.folds.len(), 10, "10 fold rows");
    assert_eq!(run.models.len(), 10);
    // aggregate confusion is the element-wise fold sum and covers every
    // window's nodes exactly once
    let mut summed = crate::report::metrics::ConfusionMatrix::zeros(3);
    for f in &report.folds {
        summed.merge(&f.confusion);
    }
    assert_eq!(summed, report.aggregate_confusion);
    assert_eq!(
        report.aggregate_confusion.total(),
        (report.n_windows * config.window_size) as u64
    );

    // rerun with the same seed: identical aggregate metrics and identical json
    let run2 = run_experiment_on_table(&config, &schema, &table).unwrap();
    assert_eq!(report.to_json().unwrap(), run2.report.to_json().unwrap());

    // parallel fold execution must not change the result
    let mut par = config.clone();
    par.parallel_folds = 2;
    let run3 = run_experiment_on_table(&par, &schema, &table).unwrap();
    assert_eq!(report.aggregate, run3.report.aggregate);
}

#[test]
fn scaler_never_sees_test_rows() {
    let data = synth::separable_task(48, 4, 2, 6, 8);
    let config = toy_config();
    // folds: train on windows {0..6}, test {6, 7}; scaler must equal a fit on
    // the train rows alone
    let train: Vec<usize> = (0..6).collect();
    let graphs = fold_graphs(&data, &config, &train).unwrap();
    let train_rows: Vec<usize> = (0..36).collect();
    let scaler = crate::data::Scaler::fit_rows(&data.matrix, &train_rows).unwrap();
    let scaled = scaler.transform(&data.matrix);
    // spot-check a test-window node's features against the train-only scaler
    let range = &data.windows.windows[7];
    let mut expect = Vec::new();
    for i in range.clone() {
        expect.extend_from_slice(scaled.row(i));
    }
    assert_eq!(graphs[7].node_features, expect);
}

#[test]
fn non_finite_loss_aborts_with_context() {
    let err = super::train::check_finite_loss(f64::NAN, 3, 12).unwrap_err();
    match err {
        crate::error::Error::TrainingAbort { fold, epoch, .. } => {
            assert_eq!((fold, epoch), (3, 12));
        }
        other => panic!("wrong error: {other}"),
    }
    assert!(super::train::check_finite_loss(1.25, 0, 0).is_ok());
}
