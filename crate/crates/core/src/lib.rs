//! Choosing between pretraining data recipes from small-scale experiments.
//!
//! Evaluation records from a ladder of model sizes are turned into proxy
//! metrics, extrapolated with scaling-law fits or ranked directly at small
//! scale, and scored by how often they order recipe pairs the same way as the
//! target-scale results.

pub mod analysis;
pub mod budget;
pub mod decision;
pub mod error;
pub mod fit;
pub mod ingest;
pub mod metrics;
pub mod stats;
pub mod synthetic;
pub mod tables;

pub use budget::{budget_of_prediction, flops, percent_of_target, target_flops, BudgetReport, PredictionCost};
pub use decision::{
    decision_accuracy, gold_targets, predict_multi_scale, prediction_error, rank_single_scale, seed_attempts,
    DecisionReport, GoldRanking, MethodDescriptor, Prediction, PredictionErrorReport,
};
pub use error::{Error, Result};
pub use fit::{FitChain, FitParams, FitResult, ScalePoint, SizeSubset, VariantSpec};
pub use ingest::{CheckpointKey, ItemScoreRecord, MetricPoint, ModelConfig, PointIndex, SuiteManifest};
pub use metrics::{MetricName, TASK_LOSS};
