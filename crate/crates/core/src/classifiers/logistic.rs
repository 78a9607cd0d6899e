use serde::{Deserialize, Serialize};

use super::check_xy;
use crate::error::{Error, Result};

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    /// Penalty on `‖w‖²`, scaled by `1/(2n)`; the bias is not penalised.
    pub l2: f64,
    pub epochs: usize,
    /// Gradient step; `None` uses `1/L` for the smoothness bound `L` of the objective.
    pub learning_rate: Option<f64>,
    /// Stops once every gradient entry is below this in magnitude.
    pub tolerance: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self { l2: 1.0, epochs: 1000, learning_rate: None, tolerance: 1e-9 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticModel {
    pub fn zeros(d: usize) -> Self {
        Self { weights: vec![0.0; d], bias: 0.0 }
    }

    pub fn decision(&self, x: &[f64]) -> f64 {
        self.bias + x.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn predict_proba(&self, x: &[Vec<f64>]) -> Vec<f64> {
        x.iter().map(|r| sigmoid(self.decision(r))).collect()
    }

    /// Full-batch gradient descent on mean log-loss plus `l2/(2n)·‖w‖²`.
    pub fn fit(x: &[Vec<f64>], y: &[u8], config: &LogisticConfig) -> Result<Self> {
        let d = check_xy(x, y)?;
        if !(config.l2 >= 0.0) {
            return Err(Error::Config(format!("l2 penalty {} must be nonnegative", config.l2)));
        }
        let n = x.len() as f64;
        let step = match config.learning_rate {
            Some(lr) if lr > 0.0 => lr,
            Some(lr) => return Err(Error::Config(format!("learning rate {lr} must be positive"))),
            None => {
                let mean_sq = x.iter().map(|r| 1.0 + r.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / n;
                1.0 / (0.25 * mean_sq + config.l2 / n)
            }
        };
        let mut m = Self::zeros(d);
        let mut gw = vec![0.0; d];
        for _ in 0..config.epochs {
            gw.iter_mut().zip(&m.weights).for_each(|(g, w)| *g = config.l2 / n * w);
            let mut gb = 0.0;
            for (r, &t) in x.iter().zip(y) {
                let err = (sigmoid(m.decision(r)) - t as f64) / n;
                gb += err;
                gw.iter_mut().zip(r).for_each(|(g, v)| *g += err * v);
            }
            m.weights.iter_mut().zip(&gw).for_each(|(w, g)| *w -= step * g);
            m.bias -= step * gb;
            if gb.abs() < config.tolerance && gw.iter().all(|g| g.abs() < config.tolerance) {
                break;
            }
        }
        Ok(m)
    }
}
