//! Experiment report structure and its on-disk rendering.
//!
//! `report.json` carries the full structure (timings excluded, so reruns with
//! the same seed are byte-identical); CSV sidecars carry percentages with one
//! decimal, histories with wall-clock seconds, confusion counts, and optional
//! per-layer node embeddings for external projection tools.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::TrainConfig;
use crate::model::train::TrainHistory;
use crate::report::metrics::{ConfusionMatrix, MetricsRow};

/// Node representations after one graph layer, concatenated over the test
/// windows of every fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEmbeddings {
    pub layer: usize,
    pub dim: usize,
    pub labels: Vec<usize>,
    /// Row-major `labels.len() × dim`.
    pub rows: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub best_epoch: usize,
    pub metrics: MetricsRow,
    pub confusion: ConfusionMatrix,
    pub history: TrainHistory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    /// Echo of the effective configuration.
    pub config: TrainConfig,
    pub task_classes: Vec<String>,
    pub n_rows_used: usize,
    pub n_windows: usize,
    pub folds: Vec<FoldReport>,
    pub aggregate: MetricsRow,
    pub aggregate_confusion: ConfusionMatrix,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<Vec<LayerEmbeddings>>,
}

/// Format with six significant digits.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let decimals = 5 - x.abs().log10().floor() as i64;
    format!("{:.*}", decimals.clamp(0, 17) as usize, x)
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<ExperimentReport> {
        Ok(serde_json::from_str(text)?)
    }

    /// Human-readable summary: per-fold metrics, aggregate, and the
    /// aggregate confusion matrix as an aligned grid.
    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "dataset {}  task {}  variant {}  seed {}",
            self.config.dataset_id, self.config.task_id, self.config.variant.as_str(), self.config.seed
        );
        let _ = writeln!(
            s,
            "{} rows in {} windows of {}; {} folds",
            self.n_rows_used, self.n_windows, self.config.window_size, self.config.k_folds
        );
        let _ = writeln!(s, "fold  accuracy  precision  recall    f1        best_epoch");
        for f in &self.folds {
            let _ = writeln!(
                s,
                "{:<5} {:<9.1} {:<10.1} {:<9.1} {:<9.1} {}",
                f.fold, f.metrics.accuracy, f.metrics.macro_precision, f.metrics.macro_recall,
                f.metrics.macro_f1, f.best_epoch
            );
        }
        let _ = writeln!(
            s,
            "aggregate: accuracy {:.1}  precision {:.1}  recall {:.1}  f1 {:.1}",
            self.aggregate.accuracy,
            self.aggregate.macro_precision,
            self.aggregate.macro_recall,
            self.aggregate.macro_f1
        );
        let _ = writeln!(s, "\naggregate confusion (rows = true class):");
        let cm = &self.aggregate_confusion;
        let width = cm
            .counts
            .iter()
            .map(|c| c.to_string().len())
            .max()
            .unwrap_or(1)
            .max(6);
        let _ = write!(s, "{:>width$} ", r"true\pred", width = width + 4);
        for p in 0..cm.n_classes {
            let _ = write!(s, "{:>width$} ", format!("c{p}"), width = width);
        }
        let _ = writeln!(s);
        for t in 0..cm.n_classes {
            let _ = write!(s, "{:>width$} ", format!("c{t}"), width = width + 4);
            for p in 0..cm.n_classes {
                let _ = write!(s, "{:>width$} ", cm.get(t, p), width = width);
            }
            let _ = writeln!(s);
        }
        s
    }
}

/// Write `report.json`, `metrics.csv`, `confusion_<task>.csv`,
/// `history_fold<i>.csv`, and optional `embeddings_<layer>.csv` into
/// `out_dir`. An empty fold list is rejected before any file is created.
pub fn render_report(report: &ExperimentReport, out_dir: &Path) -> Result<()> {
    if report.folds.is_empty() {
        return Err(Error::Report("refusing to render a report with no folds".into()));
    }
    fs::create_dir_all(out_dir)?;

    fs::write(out_dir.join("report.json"), report.to_json()?)?;

    // metrics.csv: one-decimal percentages, fold rows then the aggregate
    let mut metrics = String::from("fold,accuracy,macro_precision,macro_recall,macro_f1\n");
    for f in &report.folds {
        let _ = writeln!(
            metrics,
            "{},{:.1},{:.1},{:.1},{:.1}",
            f.fold, f.metrics.accuracy, f.metrics.macro_precision, f.metrics.macro_recall, f.metrics.macro_f1
        );
    }
    let _ = writeln!(
        metrics,
        "aggregate,{:.1},{:.1},{:.1},{:.1}",
        report.aggregate.accuracy,
        report.aggregate.macro_precision,
        report.aggregate.macro_recall,
        report.aggregate.macro_f1
    );
    fs::write(out_dir.join("metrics.csv"), metrics)?;

    // confusion_<task>.csv
    let cm = &report.aggregate_confusion;
    let mut conf = String::from("true\\pred");
    for p in 0..cm.n_classes {
        let _ = write!(conf, ",c{p}");
    }
    conf.push('\n');
    for t in 0..cm.n_classes {
        let _ = write!(conf, "c{t}");
        for p in 0..cm.n_classes {
            let _ = write!(conf, ",{}", cm.get(t, p));
        }
        conf.push('\n');
    }
    fs::write(
        out_dir.join(format!("confusion_{}.csv", report.config.task_id)),
        conf,
    )?;

    // history CSVs carry the wall-clock column
    for f in &report.folds {
        let mut h = String::from("epoch,total_loss,graph_loss,conv_loss,lstm_loss,train_acc,val_acc,seconds\n");
        for e in 0..f.history.epochs() {
            let secs = f.history.seconds.get(e).copied().unwrap_or(0.0);
            let _ = writeln!(
                h,
                "{},{},{},{},{},{},{},{}",
                e,
                sig6(f.history.total_loss[e]),
                sig6(f.history.graph_loss[e]),
                sig6(f.history.conv_loss[e]),
                sig6(f.history.lstm_loss[e]),
                sig6(f.history.train_acc[e]),
                sig6(f.history.val_acc[e]),
                sig6(secs),
            );
        }
        fs::write(out_dir.join(format!("history_fold{}.csv", f.fold)), h)?;
    }

    if let Some(embeddings) = &report.embeddings {
        for e in embeddings {
            let mut text = String::from("label");
            for d in 0..e.dim {
                let _ = write!(text, ",e{d}");
            }
            text.push('\n');
            for (i, label) in e.labels.iter().enumerate() {
                let _ = write!(text, "{label}");
                for d in 0..e.dim {
                    let _ = write!(text, ",{}", sig6(e.rows[i * e.dim + d]));
                }
                text.push('\n');
            }
            fs::write(out_dir.join(format!("embeddings_layer{}.csv", e.layer)), text)?;
        }
    }
    Ok(())
}

/// Parse a rendered `report.json`.
pub fn load_report(path: &Path) -> Result<ExperimentReport> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Report(format!("cannot read report '{}': {e}", path.display())))?;
    ExperimentReport::from_json(&text)
}
