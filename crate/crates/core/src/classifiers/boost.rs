use serde::{Deserialize, Serialize};

use super::check_xy;
use super::logistic::sigmoid;
use super::tree::{grow, Columns, DecisionTree};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostConfig {
    pub n_stages: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self { n_stages: 100, learning_rate: 0.1, max_depth: 3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientBoostModel {
    pub initial_log_odds: f64,
    pub learning_rate: f64,
    pub stages: Vec<DecisionTree>,
    /// Mean training log-loss before the first stage and after each stage.
    pub train_loss: Vec<f64>,
}

/// Mean of `log(1 + e^f) − y f`.
fn log_loss(f: &[f64], y: &[u8]) -> f64 {
    let total: f64 = f
        .iter()
        .zip(y)
        .map(|(&f, &t)| {
            let softplus = if f > 0.0 { f + (-f).exp().ln_1p() } else { f.exp().ln_1p() };
            softplus - t as f64 * f
        })
        .sum();
    total / f.len() as f64
}

impl GradientBoostModel {
    /// Stagewise trees on log-loss residuals `y − p`, split by squared error,
    /// with Newton leaves `Σ(y − p) / Σ p(1 − p)`.
    pub fn fit(x: &[Vec<f64>], y: &[u8], config: &BoostConfig) -> Result<Self> {
        check_xy(x, y)?;
        if !(config.learning_rate >= 0.0) {
            return Err(Error::Config(format!("learning rate {} must be nonnegative", config.learning_rate)));
        }
        if config.max_depth < 1 {
            return Err(Error::Config("max_depth must be at least 1".into()));
        }
        let n = y.len();
        let rate = y.iter().map(|&v| v as f64).sum::<f64>() / n as f64;
        let initial_log_odds = (rate / (1.0 - rate)).ln();
        let cols = Columns::new(x);
        let weight = vec![1.0; n];
        let mut f = vec![initial_log_odds; n];
        let mut model = Self {
            initial_log_odds,
            learning_rate: config.learning_rate,
            stages: Vec::with_capacity(config.n_stages),
            train_loss: vec![log_loss(&f, y)],
        };
        for _ in 0..config.n_stages {
            let p: Vec<f64> = f.iter().map(|&v| sigmoid(v)).collect();
            let residual: Vec<f64> = y.iter().zip(&p).map(|(&t, &q)| t as f64 - q).collect();
            let leaf = |m: &[usize]| {
                let (num, den) = m.iter().fold((0.0, 0.0), |(a, b), &i| (a + residual[i], b + p[i] * (1.0 - p[i])));
                if den > 1e-12 {
                    num / den
                } else {
                    0.0
                }
            };
            let tree = grow(&cols, &residual, &weight, &leaf, config.max_depth, None);
            for (fi, row) in f.iter_mut().zip(x) {
                *fi += config.learning_rate * tree.predict_row(row);
            }
            model.train_loss.push(log_loss(&f, y));
            model.stages.push(tree);
        }
        Ok(model)
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        self.initial_log_odds + self.stages.iter().map(|t| self.learning_rate * t.predict_row(x)).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[Vec<f64>]) -> Vec<f64> {
        x.iter().map(|r| sigmoid(self.decision(r))).collect()
    }
}
