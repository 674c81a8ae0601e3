//! Correlation-graph construction and hybrid graph/sequence classifiers for
//! logistics transaction tables.
//!
//! The pipeline: CSV ingest with schema-driven categorical encoding, class
//! balancing, per-fold standard scaling, fixed-size windowing, correlation-
//! thresholded graph construction, and k-fold training of a three-branch
//! network (a neighborhood-aggregating graph stack in parallel with a 1-D
//! convolutional branch and a stacked LSTM branch, each with its own
//! log-softmax head, trained on summed cross-entropy). Reports carry
//! confusion matrices, macro metrics, training curves, and classical
//! baselines.

pub mod branches;
pub mod data;
pub mod error;
pub mod graph;
pub mod layers;
pub mod model;
pub mod report;
pub mod synth;
pub mod tensor;

pub use data::{DatasetId, DatasetSchema, FeatureMatrix, RawTable, Scaler, WindowSet};
pub use error::{Error, Result};
pub use graph::{AdjacencyMatrix, CorrelationMatrix, SampleGraph};
pub use model::{
    run_experiment, CombineMode, ExperimentRun, FoldSplit, HybridModel, TrainConfig, TrainHistory,
    Variant,
};
pub use report::{ConfusionMatrix, ExperimentReport, MetricsRow};
pub use tensor::{AdamState, ParamGroup, ParamId, ParamSet, Tape, TensorId};
