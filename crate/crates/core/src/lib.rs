//! Hypergraph transformer pre-training for sparse binary patient cohorts.
//!
//! Diagnostic features become hypergraph nodes and each patient becomes one
//! hyperedge. An attention-based encoder is pre-trained on a large cohort,
//! either against labels or with a contrastive objective over stochastic
//! hypergraph views, and its frozen hyperedge embeddings are transferred to a
//! small target cohort where lightweight classifiers are evaluated under
//! nested cross-validation.
//!
//! The differentiable stack is generic over [`Real`]; the aliases below fix
//! the reference double-precision types.

pub mod augment;
pub mod classifiers;
pub mod contrastive;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod hypergraph;
pub mod io;
pub mod numerics;
pub mod rng;
pub mod scalar;
pub mod supervised;
pub mod synth;
pub mod train;
pub mod transfer;
#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};
pub use hypergraph::Hypergraph;
pub use scalar::Real;

pub type Tensor = numerics::Tensor<f64>;
pub type Graph = numerics::Graph<f64>;
pub type ParamStore = numerics::ParamStore<f64>;
