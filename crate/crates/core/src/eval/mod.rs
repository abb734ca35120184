//! Cross-validation, metrics, the baseline-versus-test experiment and report
//! export.

mod cv;
mod experiment;
pub mod export;
mod folds;
mod jenks;
mod metrics;

pub use cv::{cross_validate, CvResult, FoldResult, ModelSpec};
pub use experiment::{
    calibrate_gwr, residual_moran, row_points, row_weights, run_experiment, ComparisonReport,
    ConditionRun, Experiment, ExperimentConfig, FoldsMeta, GwrConfig, Metrics, ModelComparison,
    MoranSummary, Pair,
};
pub use folds::{kfold_split, FoldSpec};
pub use jenks::jenks_breaks;
pub use metrics::{r2_score, rmse};
