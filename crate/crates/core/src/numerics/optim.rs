//! First-order optimizers.

use serde::{Deserialize, Serialize};

use crate::numerics::{ParamStore, Tensor};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
    Sgd { lr: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self::adam(1e-3)
    }
}

impl OptimizerConfig {
    pub fn adam(lr: f64) -> Self {
        Self::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            Self::Adam { lr, .. } | Self::Sgd { lr } => lr,
        }
    }

    pub fn build<T: Real>(&self, store: &ParamStore<T>) -> Optimizer<T> {
        let moments = || store.iter().map(|p| Tensor::zeros(p.value.rows(), p.value.cols())).collect();
        Optimizer { config: *self, m: moments(), v: moments(), t: 0 }
    }
}

/// Optimizer state bound to one [`ParamStore`] layout.
#[derive(Clone, Debug)]
pub struct Optimizer<T: Real> {
    config: OptimizerConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: i32,
}

impl<T: Real> Optimizer<T> {
    /// Applies one update from the accumulated gradients.
    pub fn step(&mut self, store: &mut ParamStore<T>) {
        self.t += 1;
        match self.config {
            OptimizerConfig::Sgd { lr } => {
                let lr = T::lit(lr);
                for p in store.iter_mut() {
                    for (w, &g) in p.value.data_mut().iter_mut().zip(p.grad.data()) {
                        *w -= lr * g;
                    }
                }
            }
            OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                let (b1, b2) = (T::lit(beta1), T::lit(beta2));
                let bc1 = T::one() - b1.powi(self.t);
                let bc2 = T::one() - b2.powi(self.t);
                let (lr, eps) = (T::lit(lr), T::lit(eps));
                for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
                    let iter = p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m.data_mut()).zip(v.data_mut());
                    for (((w, &g), m), v) in iter {
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                        let m_hat = *m / bc1;
                        let v_hat = *v / bc2;
                        *w -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}
