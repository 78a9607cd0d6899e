//! Metrics, stratified splits and nested cross-validation.

pub mod cv;
pub mod metrics;
pub mod report;
pub mod splits;

pub use cv::{evaluate_split, fit_and_score, nested_cv, Aggregate, EvalReport, SplitResult, INNER_FOLDS, OUTER_FOLDS};
pub use metrics::{accuracy, auroc, f1, pr_auc, Metrics};
pub use report::{render_table, GridRow};
pub use splits::{holdout_split, stratified_kfold, FoldPlan};

#[cfg(test)]
mod tests;
