//! Stratified nested cross-validation and robustness reruns.

pub mod cv;
pub mod folds;
pub mod metrics;
pub mod report;

pub use cv::{
    default_grid, inner_select, robustness_suite, run_experiment, run_with_plan, CvOptions, CvResult, FoldResult,
    RobustnessReport, Selection,
};
pub use folds::{make_fold_plan, make_fold_plan_from, FoldPlan, INNER_FOLDS, OUTER_FOLDS};
pub use metrics::rmse;
