//! Flat baseline training and the iterative two-stage hierarchical loop.

mod cluster;
mod config;
mod hierarchical;
mod plateau;
mod stage;

pub use cluster::{cluster_items, KMeansParams, MergeResult};
pub use config::TrainConfig;
pub use hierarchical::{
    checkpoint_name, item_centroids, run_hierarchical, stage2_stalled, train_flat, FlatOutcome, HierarchicalOutcome,
    HierarchicalReport, IterationModels, IterationReport, StopReason,
};
pub use plateau::{plateau_decay, stale_epochs};
pub use stage::{loss_and_accuracy, train_stage, LabelLevel, StageResult};
