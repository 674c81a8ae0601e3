//! Confusion matrices and accuracy / macro precision / recall / F1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `counts[true][pred]` over evaluated samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub n_classes: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(n_classes: usize) -> Self {
        Self {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.n_classes, other.n_classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// Samples whose true class is `c`.
    pub fn support(&self, c: usize) -> u64 {
        (0..self.n_classes).map(|p| self.get(c, p)).sum()
    }
}

/// Tally predictions against labels.
pub fn confusion(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::zeros(n_classes);
    for (&p, &t) in preds.iter().zip(labels) {
        if p >= n_classes || t >= n_classes {
            return Err(Error::Dimension(format!(
                "class out of range: pred {p}, true {t}, classes {n_classes}"
            )));
        }
        cm.counts[t * n_classes + p] += 1;
    }
    Ok(cm)
}

/// Percent metrics: overall accuracy plus per-class and macro precision,
/// recall, and F1. A class with a zero denominator scores 0 and is flagged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub accuracy: f64,
    pub per_class_precision: Vec<f64>,
    pub per_class_recall: Vec<f64>,
    pub per_class_f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Classes whose precision or recall had a zero denominator.
    pub zero_denominator_classes: Vec<usize>,
}

pub fn metrics_from_confusion(cm: &ConfusionMatrix) -> Result<MetricsRow> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Report("metrics over an empty confusion matrix".into()));
    }
    let c = cm.n_classes;
    let trace: u64 = (0..c).map(|k| cm.get(k, k)).sum();
    let accuracy = 100.0 * trace as f64 / total as f64;
    let mut precision = Vec::with_capacity(c);
    let mut recall = Vec::with_capacity(c);
    let mut f1 = Vec::with_capacity(c);
    let mut flagged = Vec::new();
    for k in 0..c {
        let tp = cm.get(k, k) as f64;
        let fp: f64 = (0..c).filter(|&t| t != k).map(|t| cm.get(t, k) as f64).sum();
        let fn_: f64 = (0..c).filter(|&p| p != k).map(|p| cm.get(k, p) as f64).sum();
        let mut flag = false;
        let p = if tp + fp > 0.0 {
            100.0 * tp / (tp + fp)
        } else {
            flag = true;
            0.0
        };
        let r = if tp + fn_ > 0.0 {
            100.0 * tp / (tp + fn_)
        } else {
            flag = true;
            0.0
        };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        if flag {
            flagged.push(k);
        }
        precision.push(p);
        recall.push(r);
        f1.push(f);
    }
    let macro_precision = precision.iter().sum::<f64>() / c as f64;
    let macro_recall = recall.iter().sum::<f64>() / c as f64;
    let macro_f1 = f1.iter().sum::<f64>() / c as f64;
    Ok(MetricsRow {
        accuracy,
        per_class_precision: precision,
        per_class_recall: recall,
        per_class_f1: f1,
        macro_precision,
        macro_recall,
        macro_f1,
        zero_denominator_classes: flagged,
    })
}
