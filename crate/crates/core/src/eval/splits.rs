//! Seeded stratified splitting.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::substream;

/// Fold index of every sample and per-fold `[negatives, positives]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignment: Vec<usize>,
    pub class_counts: Vec<[usize; 2]>,
}

impl FoldPlan {
    /// Training and test indices for fold `f`, each ascending.
    pub fn split(&self, f: usize) -> (Vec<usize>, Vec<usize>) {
        let (test, train): (Vec<usize>, Vec<usize>) = (0..self.assignment.len()).partition(|&i| self.assignment[i] == f);
        (train, test)
    }
}

fn class_indices(labels: &[u8]) -> [Vec<usize>; 2] {
    let mut by_class = [Vec::new(), Vec::new()];
    for (i, &y) in labels.iter().enumerate() {
        by_class[(y == 1) as usize].push(i);
    }
    by_class
}

/// Shuffles each class and deals it round-robin over `k` folds; the dealing
/// position carries over from one class to the next so fold sizes differ
/// by at most one.
pub fn stratified_kfold(labels: &[u8], k: usize, seed: u64) -> Result<FoldPlan> {
    let by_class = class_indices(labels);
    let minority = by_class[0].len().min(by_class[1].len());
    if k < 2 || k > minority {
        return Err(Error::Config(format!("cannot make {k} stratified folds with minority class of {minority}")));
    }
    let mut rng = substream(seed, "stratified-kfold");
    let mut assignment = vec![0; labels.len()];
    let mut class_counts = vec![[0usize; 2]; k];
    let mut slot = 0;
    for (c, members) in by_class.iter().enumerate() {
        let mut members = members.clone();
        members.shuffle(&mut rng);
        for i in members {
            assignment[i] = slot % k;
            class_counts[slot % k][c] += 1;
            slot += 1;
        }
    }
    Ok(FoldPlan { k, assignment, class_counts })
}

/// Stratified train/test split with `round(n · fraction)` test samples,
/// allotted to classes by largest remainder.
pub fn holdout_split(labels: &[u8], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("holdout fraction {fraction} outside (0, 1)")));
    }
    let by_class = class_indices(labels);
    let total = (labels.len() as f64 * fraction).round() as usize;
    let quotas: Vec<f64> = by_class.iter().map(|m| m.len() as f64 * fraction).collect();
    let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut by_remainder = [0usize, 1];
    by_remainder.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())));
    let mut left = total.saturating_sub(take.iter().sum());
    for &c in by_remainder.iter().cycle().take(4) {
        if left == 0 {
            break;
        }
        if take[c] < by_class[c].len() {
            take[c] += 1;
            left -= 1;
        }
    }
    let mut rng = substream(seed, "holdout");
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (c, members) in by_class.iter().enumerate() {
        let mut members = members.clone();
        members.shuffle(&mut rng);
        test.extend_from_slice(&members[..take[c]]);
        train.extend_from_slice(&members[take[c]..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
