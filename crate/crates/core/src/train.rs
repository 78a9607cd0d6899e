//! Bookkeeping shared by the pre-training loops.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Record of one optimization run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Mean training loss per completed epoch.
    pub loss_trace: Vec<f64>,
    /// Per-epoch validation metric when early stopping is active.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub validation_trace: Vec<f64>,
    /// Per-epoch means of named loss components.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub component_traces: BTreeMap<String, Vec<f64>>,
    /// Epoch (1-based) whose parameters were kept.
    #[serde(default)]
    pub best_epoch: Option<usize>,
    pub config: serde_json::Value,
}

/// Splits `0..n` into shuffled batches of at most `batch` items, each sorted.
/// `None` or a batch at least `n` gives one full batch in order.
pub fn epoch_batches(n: usize, batch: Option<usize>, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    match batch {
        Some(b) if b > 0 && b < n => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            order
                .chunks(b)
                .map(|c| {
                    let mut c = c.to_vec();
                    c.sort_unstable();
                    c
                })
                .collect()
        }
        _ => vec![(0..n).collect()],
    }
}
