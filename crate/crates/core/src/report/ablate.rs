//! Graph-layer-count ablation: one full cross-validated run per depth.

use crate::data::schema::DatasetSchema;
use crate::data::table::RawTable;
use crate::error::{Error, Result};
use crate::model::config::TrainConfig;
use crate::model::train::run_experiment_on_table;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AblationRow {
    pub layers: usize,
    pub aggregate_accuracy: f64,
    /// Mean wall-clock seconds per epoch across folds. Timing only; excluded
    /// from determinism comparisons.
    pub seconds_per_epoch: f64,
}

/// Run the experiment once per layer count, keyed off `base` with only
/// `n_layers` changed.
pub fn layer_ablation(
    base: &TrainConfig,
    layer_counts: &[usize],
    schema: &DatasetSchema,
    table: &RawTable,
) -> Result<Vec<AblationRow>> {
    if layer_counts.is_empty() {
        return Err(Error::Config("ablation needs at least one layer count".into()));
    }
    let mut rows = Vec::with_capacity(layer_counts.len());
    for &layers in layer_counts {
        let mut config = base.clone();
        config.n_layers = layers;
        let run = run_experiment_on_table(&config, schema, table)?;
        let mut seconds = 0.0;
        let mut epochs = 0usize;
        for f in &run.report.folds {
            seconds += f.history.seconds.iter().sum::<f64>();
            epochs += f.history.seconds.len();
        }
        rows.push(AblationRow {
            layers,
            aggregate_accuracy: run.report.aggregate.accuracy,
            seconds_per_epoch: if epochs > 0 { seconds / epochs as f64 } else { 0.0 },
        });
    }
    Ok(rows)
}

/// Deterministic part of the ablation table (layers and accuracy).
pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("layers,aggregate_accuracy\n");
    for r in rows {
        s.push_str(&format!("{},{:.1}\n", r.layers, r.aggregate_accuracy));
    }
    s
}

/// Timing sidecar (seconds per epoch is wall-clock and varies run to run).
pub fn ablation_timing_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("layers,seconds_per_epoch\n");
    for r in rows {
        s.push_str(&format!("{},{}\n", r.layers, crate::report::render::sig6(r.seconds_per_epoch)));
    }
    s
}
