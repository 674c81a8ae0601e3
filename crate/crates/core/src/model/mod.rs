//! Model assembly, configuration, and k-fold training.

pub mod build;
pub mod config;
pub mod train;

pub use build::{stack_dims, DimPattern, GraphStack, HeadOutputs, HybridModel};
pub use config::{CombineMode, TrainConfig, Variant};
pub use train::{
    combine_log_probs, fold_graphs, kfold_split, predict, prepare_task, run_experiment,
    run_experiment_on_table, total_loss, train_fold, ExperimentRun, FoldSplit, TaskData,
    TrainHistory,
};

#[cfg(test)]
mod tests;
