//! Training configuration with the tuned defaults.

use serde::{Deserialize, Serialize};

use crate::data::schema::DatasetId;
use crate::error::{Error, Result};
use crate::layers::sage::{AggregatorKind, NormalizeMode, SageVariant};

/// Network variant: the full hybrid (graph stack + conv + LSTM branches),
/// the attention hybrid, or the graph-only ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    #[serde(rename = "h-gsn")]
    HybridSage,
    #[serde(rename = "h-gatn")]
    HybridGat,
    #[serde(rename = "gsn")]
    SageOnly,
    #[serde(rename = "gatn")]
    GatOnly,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().replace('_', "-").as_str() {
            "h-gsn" | "hgsn" => Ok(Variant::HybridSage),
            "h-gatn" | "hgatn" => Ok(Variant::HybridGat),
            "gsn" => Ok(Variant::SageOnly),
            "gatn" => Ok(Variant::GatOnly),
            other => Err(Error::Config(format!(
                "unknown variant '{other}' (expected h-gsn, h-gatn, gsn, gatn)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::HybridSage => "h-gsn",
            Variant::HybridGat => "h-gatn",
            Variant::SageOnly => "gsn",
            Variant::GatOnly => "gatn",
        }
    }

    /// Hybrid variants carry the convolutional and LSTM branches.
    pub fn is_hybrid(&self) -> bool {
        matches!(self, Variant::HybridSage | Variant::HybridGat)
    }

    /// Attention variants replace the aggregation stack with GAT layers.
    pub fn uses_attention(&self) -> bool {
        matches!(self, Variant::HybridGat | Variant::GatOnly)
    }
}

/// How the heads combine at inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CombineMode {
    /// Element-wise mean of the heads' log-probabilities.
    MeanHeads,
    /// Ignore the sequence branches and use the graph head alone.
    GraphOnly,
}

impl CombineMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_lowercase().replace('_', "-").as_str() {
            "mean-heads" | "mean" => Ok(CombineMode::MeanHeads),
            "graph-only" | "graph" => Ok(CombineMode::GraphOnly),
            other => Err(Error::Config(format!("unknown combiner '{other}'"))),
        }
    }
}

/// Everything one experiment needs. Defaults are the tuned values: Adam with
/// graph lr 0.001 and sequence lr 0.0001, weight decay 4e-4, window 20,
/// 4 graph layers, 400 epochs, 10 folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dataset_id: DatasetId,
    pub task_id: String,
    pub variant: Variant,
    pub epochs: usize,
    pub window_size: usize,
    pub threshold: f64,
    pub leak_alpha: f64,
    pub lr_graph: f64,
    pub lr_seq: f64,
    pub weight_decay: f64,
    pub loss_weights: [f64; 3],
    pub k_folds: usize,
    pub seed: u64,
    pub n_layers: usize,
    pub aggregator: AggregatorKind,
    pub sage_variant: SageVariant,
    pub normalize: NormalizeMode,
    /// Running-statistics update rate for batch norm.
    pub bn_momentum: f64,
    pub combiner: CombineMode,
    /// LSTM branch hidden size; `None` follows the feature count.
    pub lstm_hidden: Option<usize>,
    /// Attention heads per GAT layer.
    pub n_heads: usize,
    pub grad_clip: Option<f64>,
    pub parallel_folds: usize,
    pub export_embeddings: bool,
}

impl TrainConfig {
    pub fn new(dataset_id: DatasetId, task_id: &str) -> Self {
        Self {
            dataset_id,
            task_id: task_id.to_string(),
            variant: Variant::HybridSage,
            epochs: 400,
            window_size: 20,
            threshold: 0.5,
            leak_alpha: 0.1,
            lr_graph: 1e-3,
            lr_seq: 1e-4,
            weight_decay: 4e-4,
            loss_weights: [1.0, 1.0, 1.0],
            k_folds: 10,
            seed: 17,
            n_layers: 4,
            aggregator: AggregatorKind::Mean,
            sage_variant: SageVariant::Concat,
            normalize: NormalizeMode::BatchNorm,
            bn_momentum: 0.1,
            combiner: CombineMode::MeanHeads,
            lstm_hidden: None,
            n_heads: 1,
            grad_clip: None,
            parallel_folds: 1,
            export_embeddings: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.window_size < 2 {
            return Err(Error::Config("window size must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.threshold) {
            return Err(Error::Config("threshold must be in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.leak_alpha) {
            return Err(Error::Config("leak alpha must be in [0, 1)".into()));
        }
        if self.k_folds < 2 {
            return Err(Error::Config("k-fold cross-validation needs k >= 2".into()));
        }
        if self.n_layers < 2 {
            return Err(Error::Config("graph stack needs at least 2 layers".into()));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("bn momentum must be in [0, 1]".into()));
        }
        if self.n_heads == 0 {
            return Err(Error::Config("attention needs at least 1 head".into()));
        }
        if self.loss_weights.iter().any(|w| *w < 0.0) {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}
