//! Graph layers: neighborhood aggregation, graph attention, batch
//! normalization, and the unsupervised embedding loss.

pub mod gat;
pub mod loss;
pub mod norm;
pub mod sage;

pub use gat::{gat_attention_coefficients, GatLayer, HeadCombine};
pub use loss::{unsupervised_graph_loss, NegSampleBatch};
pub use norm::BatchNorm;
pub use sage::{
    aggregate_mean, aggregate_pool, AggregatorKind, NormLayer, NormalizeMode, SageLayer,
    SageVariant,
};
