//! Ranking and threshold metrics for binary labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn class_counts(labels: &[u8]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    (pos, labels.len() - pos)
}

fn check_ranking(scores: &[f64], labels: &[u8], metric: &str) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Invalid(format!("{metric}: {} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Invalid(format!("{metric}: non-finite score")));
    }
    let (pos, neg) = class_counts(labels);
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateTask(format!("{metric} needs both classes")));
    }
    Ok((pos, neg))
}

/// Indices sorted by ascending score, with the half-open index ranges of tied groups.
fn tie_groups(scores: &[f64]) -> (Vec<usize>, Vec<(usize, usize)>) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut groups = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        groups.push((start, end));
        start = end;
    }
    (order, groups)
}

/// Area under the ROC curve via midranks: `P(s⁺ > s⁻) + ½ P(s⁺ = s⁻)`.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_ranking(scores, labels, "AUROC")?;
    let (order, groups) = tie_groups(scores);
    // Twice the rank sum keeps midranks integral.
    let mut twice_rank_sum: u64 = 0;
    for (start, end) in groups {
        let twice_mid = (start + 1 + end) as u64;
        let positives = order[start..end].iter().filter(|&&i| labels[i] == 1).count() as u64;
        twice_rank_sum += twice_mid * positives;
    }
    let twice_u = twice_rank_sum - (pos * (pos + 1)) as u64;
    Ok(twice_u as f64 / (2 * pos * neg) as f64)
}

/// Average precision: `Σ_k (R_k − R_{k−1}) P_k` over descending distinct
/// thresholds, starting from recall 0.
pub fn pr_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, _) = check_ranking(scores, labels, "PR-AUC")?;
    let (order, groups) = tie_groups(scores);
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for &(start, end) in groups.iter().rev() {
        tp += order[start..end].iter().filter(|&&i| labels[i] == 1).count();
        seen += end - start;
        let recall = tp as f64 / pos as f64;
        area += (recall - prev_recall) * (tp as f64 / seen as f64);
        prev_recall = recall;
    }
    Ok(area)
}

fn check_preds(preds: &[u8], labels: &[u8]) -> Result<()> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::Invalid(format!("{} predictions for {} labels", preds.len(), labels.len())));
    }
    Ok(())
}

pub fn accuracy(preds: &[u8], labels: &[u8]) -> Result<f64> {
    check_preds(preds, labels)?;
    let correct = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(correct as f64 / labels.len() as f64)
}

/// `2PR / (P + R)`, defined as 0 when there are no true positives.
pub fn f1(preds: &[u8], labels: &[u8]) -> Result<f64> {
    check_preds(preds, labels)?;
    let tp = preds.iter().zip(labels).filter(|&(&p, &y)| p == 1 && y == 1).count() as f64;
    let fp = preds.iter().zip(labels).filter(|&(&p, &y)| p == 1 && y == 0).count() as f64;
    let fn_ = preds.iter().zip(labels).filter(|&(&p, &y)| p == 0 && y == 1).count() as f64;
    if tp == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * tp / (2.0 * tp + fp + fn_))
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

pub fn threshold(probabilities: &[f64], cut: f64) -> Vec<u8> {
    probabilities.iter().map(|&p| (p >= cut) as u8).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub auroc: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub pr_auc: f64,
}

impl Metrics {
    pub const NAMES: [&'static str; 4] = ["AUROC", "Accuracy", "F1", "PR-AUC"];

    pub fn compute(probabilities: &[f64], labels: &[u8]) -> Result<Self> {
        let preds = threshold(probabilities, DEFAULT_THRESHOLD);
        Ok(Self {
            auroc: auroc(probabilities, labels)?,
            accuracy: accuracy(&preds, labels)?,
            f1: f1(&preds, labels)?,
            pr_auc: pr_auc(probabilities, labels)?,
        })
    }

    pub fn from_values(v: [f64; 4]) -> Self {
        Self { auroc: v[0], accuracy: v[1], f1: v[2], pr_auc: v[3] }
    }

    pub fn values(&self) -> [f64; 4] {
        [self.auroc, self.accuracy, self.f1, self.pr_auc]
    }
}
