//! Nested cross-validation and fixed-split evaluation.

use serde::{Deserialize, Serialize};

use super::metrics::{auroc, Metrics};
use super::splits::stratified_kfold;
use crate::classifiers::ClassifierConfig;
use crate::error::{Error, Result};
use crate::rng::subseed;
use crate::transfer::FeatureSource;

pub const OUTER_FOLDS: usize = 5;
pub const INNER_FOLDS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub selected: ClassifierConfig,
    /// Mean inner-CV AUROC of every grid entry, in grid order; empty when
    /// the grid has one entry.
    pub inner_auroc: Vec<f64>,
    pub metrics: Metrics,
    pub train_size: usize,
    pub test_size: usize,
    pub test_positives: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: Metrics,
    /// Sample standard deviation (n − 1 denominator).
    pub sd: Metrics,
}

impl Aggregate {
    pub fn of(metrics: &[Metrics]) -> Self {
        let n = metrics.len() as f64;
        let mut mean = [0.0; 4];
        let mut sd = [0.0; 4];
        for k in 0..4 {
            mean[k] = metrics.iter().map(|m| m.values()[k]).sum::<f64>() / n;
            if metrics.len() > 1 {
                let ss: f64 = metrics.iter().map(|m| (m.values()[k] - mean[k]).powi(2)).sum();
                sd[k] = (ss / (n - 1.0)).sqrt();
            }
        }
        Self { mean: Metrics::from_values(mean), sd: Metrics::from_values(sd) }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub k_outer: usize,
    pub k_inner: usize,
    pub grid: Vec<ClassifierConfig>,
    pub folds: Vec<SplitResult>,
    pub aggregate: Aggregate,
    /// Out-of-fold probability of every row.
    pub predictions: Vec<f64>,
}

fn positives(labels: &[u8], rows: &[usize]) -> usize {
    rows.iter().filter(|&&i| labels[i] == 1).count()
}

/// Fits `config` on `train` and returns test-row probabilities.
pub fn fit_and_score(
    source: &FeatureSource,
    labels: &[u8],
    config: &ClassifierConfig,
    train: &[usize],
    test: &[usize],
    seed: u64,
) -> Result<Vec<f64>> {
    let (x_train, x_test, _) = source.split_matrices(train, test)?;
    let y: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
    Ok(config.fit(&x_train, &y, seed)?.predict_proba(&x_test))
}

/// Inner-CV model selection on `train`, refit on all of `train`, scored on
/// `test`. Returns the result and the test probabilities.
pub fn evaluate_split(
    source: &FeatureSource,
    labels: &[u8],
    grid: &[ClassifierConfig],
    train: &[usize],
    test: &[usize],
    k_inner: usize,
    seed: u64,
) -> Result<(SplitResult, Vec<f64>)> {
    if grid.is_empty() {
        return Err(Error::Config("empty hyperparameter grid".into()));
    }
    let mut inner_auroc = Vec::new();
    let mut selected = grid[0];
    if grid.len() > 1 {
        let train_labels: Vec<u8> = train.iter().map(|&i| labels[i]).collect();
        let plan = stratified_kfold(&train_labels, k_inner, subseed(seed, "inner-folds"))
            .map_err(|e| Error::DegenerateTask(format!("inner split: {e}")))?;
        for (g, config) in grid.iter().enumerate() {
            let mut total = 0.0;
            for j in 0..k_inner {
                let (fit_local, val_local) = plan.split(j);
                let fit_rows: Vec<usize> = fit_local.iter().map(|&i| train[i]).collect();
                let val_rows: Vec<usize> = val_local.iter().map(|&i| train[i]).collect();
                let val_labels: Vec<u8> = val_rows.iter().map(|&i| labels[i]).collect();
                let score = fit_and_score(source, labels, config, &fit_rows, &val_rows, subseed(seed, &format!("inner{j}.grid{g}")))
                    .and_then(|p| auroc(&p, &val_labels))
                    .map_err(|e| Error::DegenerateTask(format!("inner fold {j}: {e}")))?;
                total += score;
            }
            let mean = total / k_inner as f64;
            if inner_auroc.iter().all(|&best: &f64| mean > best) {
                selected = *config;
            }
            inner_auroc.push(mean);
        }
    }
    let probs = fit_and_score(source, labels, &selected, train, test, subseed(seed, "refit"))?;
    let test_labels: Vec<u8> = test.iter().map(|&i| labels[i]).collect();
    let metrics = Metrics::compute(&probs, &test_labels)?;
    Ok((
        SplitResult {
            selected,
            inner_auroc,
            metrics,
            train_size: train.len(),
            test_size: test.len(),
            test_positives: positives(labels, test),
        },
        probs,
    ))
}

/// Stratified outer folds, each tuned by inner CV on its training part.
/// All preprocessing is fitted inside the training part of each split.
pub fn nested_cv(
    source: &FeatureSource,
    labels: &[u8],
    grid: &[ClassifierConfig],
    k_outer: usize,
    k_inner: usize,
    seed: u64,
) -> Result<EvalReport> {
    if source.len() != labels.len() {
        return Err(Error::Invalid(format!("{} feature rows for {} labels", source.len(), labels.len())));
    }
    let plan = stratified_kfold(labels, k_outer, subseed(seed, "outer-folds"))?;
    let mut folds = Vec::with_capacity(k_outer);
    let mut predictions = vec![f64::NAN; labels.len()];
    for f in 0..k_outer {
        let (train, test) = plan.split(f);
        let (result, probs) = evaluate_split(source, labels, grid, &train, &test, k_inner, subseed(seed, &format!("outer{f}")))
            .map_err(|e| match e {
                Error::DegenerateTask(m) => Error::DegenerateTask(format!("outer fold {f}, {m}")),
                other => other,
            })?;
        for (&i, p) in test.iter().zip(probs) {
            predictions[i] = p;
        }
        folds.push(result);
    }
    let aggregate = Aggregate::of(&folds.iter().map(|r| r.metrics).collect::<Vec<_>>());
    Ok(EvalReport { seed, k_outer, k_inner, grid: grid.to_vec(), folds, aggregate, predictions })
}
