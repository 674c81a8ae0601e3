//! Development harness: compare variants and baselines on the synthetic
//! smart-logistics table. Not part of the test suite.

use sagechain_core::data::schema::{DatasetId, DatasetSchema};
use sagechain_core::data::table::load_dataset;
use sagechain_core::model::config::{TrainConfig, Variant};
use sagechain_core::model::train::{kfold_split, prepare_task, run_experiment_on_table};
use sagechain_core::report::baselines::baseline_cv;
use sagechain_core::synth;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|a| a.parse().ok()).unwrap_or(400);
    let tasks: Vec<String> = args
        .get(2)
        .map(|a| a.split(',').map(|s| s.to_string()).collect())
        .unwrap_or_else(|| vec!["traffic_status".into(), "shipment_status".into(), "logistics_delay".into()]);
    let variants: Vec<Variant> = args
        .get(3)
        .map(|a| a.split(',').map(|s| Variant::parse(s).unwrap()).collect())
        .unwrap_or_else(|| vec![Variant::HybridSage, Variant::SageOnly]);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("smart.csv");
    std::fs::write(&path, synth::smart_logistics_csv(1000, 20260810)).unwrap();
    let schema = DatasetSchema::builtin(DatasetId::SmartLogistics);
    let table = load_dataset(&path, &schema).unwrap();

    for task in &tasks {
        let mut config = TrainConfig::new(DatasetId::SmartLogistics, task);
        config.epochs = epochs;
        config.parallel_folds = 2;
        if std::env::var("SAGECHAIN_L2").is_ok() {
            config.normalize = sagechain_core::layers::sage::NormalizeMode::L2;
        }
        let data = prepare_task(&config, &schema, &table).unwrap();
        let split = kfold_split(data.windows.windows.len(), config.k_folds, config.seed).unwrap();
        let base = baseline_cv(&data, &split, 5, 300, 0.5).unwrap();
        println!(
            "task {task}: majority {:.1}  knn {:.1}  logistic {:.1}",
            base.majority, base.knn, base.logistic
        );
        for &variant in &variants {
            let mut c = config.clone();
            c.variant = variant;
            let t0 = std::time::Instant::now();
            let run = run_experiment_on_table(&c, &schema, &table).unwrap();
            println!(
                "task {task}: {:<6} aggregate {:.2}  ({:.0}s)  fold accs {:?}",
                variant.as_str(),
                run.report.aggregate.accuracy,
                t0.elapsed().as_secs_f64(),
                run.report
                    .folds
                    .iter()
                    .map(|f| (f.metrics.accuracy * 10.0).round() / 10.0)
                    .collect::<Vec<_>>()
            );
        }
    }
}
