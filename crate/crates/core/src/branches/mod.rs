//! The two non-graph branches: a 2-layer 1-D convolutional path and a
//! 5-layer LSTM path, each ending in a per-node log-softmax head.

pub mod conv;
pub mod lstm;

pub use conv::{Conv1dLayer, ConvBranch};
pub use lstm::{LstmBranch, LstmCellParams};
