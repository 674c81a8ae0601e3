//! Metrics, baselines, ablation, and report rendering.

pub mod ablate;
pub mod baselines;
pub mod metrics;
pub mod render;

pub use ablate::{ablation_csv, ablation_timing_csv, layer_ablation, AblationRow};
pub use baselines::{knn_baseline, logistic_baseline, majority_baseline};
pub use metrics::{confusion, metrics_from_confusion, ConfusionMatrix, MetricsRow};
pub use render::{load_report, render_report, ExperimentReport, FoldReport, LayerEmbeddings};
