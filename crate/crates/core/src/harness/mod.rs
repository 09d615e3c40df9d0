//! Evaluation protocol: folds, task grouping, nested cross-validation, scoring
//! and reporting.

pub mod experiment;
pub mod folds;
pub mod grouping;
pub mod metrics;
pub mod report;

pub use experiment::{
    gender_breakdown, run_gender_experiment, run_nested_cv, run_nested_cv_with, worker_count,
    AccessEvent, ExperimentConfig, ExperimentResult, FeatureSet, FeatureStore, FoldResult,
    GenderMode, GenderTable, Hyperparameters, ModelKind, Phase, Prediction, RunOptions, SplitLevel,
};
pub use folds::{build_folds, FoldPlan};
pub use grouping::{evaluation_data, select_task_data, task_group, GroupingStrategy, TASK_GROUPS};
pub use metrics::{f1_score, macro_f1, positive_f1, F1Variant, MeanStd};
pub use report::{build_report, render_report, Report, ReportFormat};
