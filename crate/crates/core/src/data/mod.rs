//! Dataset ingest: schemas, CSV loading, encoding, balancing, scaling, and
//! windowing.

pub mod preprocess;
pub mod schema;
pub mod table;

pub use preprocess::{
    balance_classes, standard_scale, to_feature_matrix, window_partition, FeatureMatrix, Scaler,
    WindowSet,
};
pub use schema::{ColumnKind, ColumnSpec, DatasetId, DatasetSchema, TaskSpec};
pub use table::{encode_categoricals, extract_target, load_dataset, Cell, RawTable};
