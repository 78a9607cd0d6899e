//! Stochastic two-view augmentation of a hypergraph.
//!
//! Nodes are masked with a per-node probability derived from their
//! duplication weight. Each hyperedge then draws one of three operations by
//! Gumbel-Softmax over logits `α_e = W x_e`: keep it, drop it, or drop each
//! of its members independently. Augmentation only ever deletes incidences.

use rand::Rng;
use rand_distr::{Distribution, Gumbel, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergraph::{incidence_stats, Hypergraph, IncidenceStats};
use crate::numerics::{softmax_in_place, Graph, ParamId, ParamStore, Tensor, Var};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskDirection {
    /// `(w_max − w_v) / (w_max − w_avg)`: less duplicated nodes are masked more.
    #[default]
    Formula,
    /// `(w_v − w_min) / (w_max − w_avg)`: more duplicated nodes are masked more.
    Prose,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskingPolicy {
    pub p_node: f64,
    /// Upper bound on any node's masking probability.
    pub p_tau: f64,
    pub direction: MaskDirection,
}

impl Default for MaskingPolicy {
    fn default() -> Self {
        Self { p_node: 0.3, p_tau: 0.7, direction: MaskDirection::Formula }
    }
}

impl MaskingPolicy {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("p_node", self.p_node), ("p_tau", self.p_tau)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// `p_v = min{ratio_v · p_node, p_τ}`; isolated nodes get 0. When every
/// node has the same weight the ratio is undefined and all nodes get
/// `min{p_node, p_τ}`.
pub fn node_mask_probabilities(stats: &IncidenceStats, policy: &MaskingPolicy) -> Vec<f64> {
    let denom = stats.w_max - stats.w_avg;
    stats
        .log_weight
        .iter()
        .map(|w| match *w {
            None => 0.0,
            Some(_) if denom <= 0.0 => policy.p_node.min(policy.p_tau),
            Some(w) => {
                let num = match policy.direction {
                    MaskDirection::Formula => stats.w_max - w,
                    MaskDirection::Prose => w - stats.w_min,
                };
                (num.max(0.0) / denom * policy.p_node).min(policy.p_tau)
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeOp {
    Preserve = 0,
    Remove = 1,
    MaskInside = 2,
}

impl EdgeOp {
    pub const ALL: [EdgeOp; 3] = [EdgeOp::Preserve, EdgeOp::Remove, EdgeOp::MaskInside];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GumbelDraw {
    pub noise: [f64; 3],
    pub soft: [f64; 3],
    pub op: EdgeOp,
}

/// `g_k = softmax((α + γ) / τ_g)_k` with `γ_k ~ Gumbel(0, 1)`; the hard
/// operation is the arg-max (lowest index on ties).
pub fn gumbel_softmax_sample(alpha: [f64; 3], tau_g: f64, rng: &mut impl Rng) -> GumbelDraw {
    let gumbel = Gumbel::new(0.0, 1.0).expect("unit scale");
    let noise = [gumbel.sample(rng), gumbel.sample(rng), gumbel.sample(rng)];
    gumbel_softmax_with_noise(alpha, noise, tau_g)
}

pub fn gumbel_softmax_with_noise(alpha: [f64; 3], noise: [f64; 3], tau_g: f64) -> GumbelDraw {
    let logits = [alpha[0] + noise[0], alpha[1] + noise[1], alpha[2] + noise[2]];
    let mut soft = logits.map(|l| l / tau_g);
    softmax_in_place(&mut soft);
    let mut best = 0;
    for k in 1..3 {
        if logits[k] > logits[best] {
            best = k;
        }
    }
    GumbelDraw { noise, soft, op: EdgeOp::ALL[best] }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub masking: MaskingPolicy,
    /// Gumbel-Softmax temperature.
    pub tau_g: f64,
    /// Per-member drop probability under `mask_inside`.
    pub p_inside: f64,
    /// Let the loss reach `W` through a straight-through gate on kept edges.
    pub learnable: bool,
    /// Bypass sampling and apply one operation to every edge.
    pub fixed_op: Option<EdgeOp>,
    pub max_resamples: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            masking: MaskingPolicy::default(),
            tau_g: 1.0,
            p_inside: 0.3,
            learnable: false,
            fixed_op: None,
            max_resamples: 10,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        self.masking.validate()?;
        if !(self.tau_g > 0.0 && self.tau_g.is_finite()) {
            return Err(Error::Config(format!("tau_g = {} must be positive", self.tau_g)));
        }
        if !(0.0..=1.0).contains(&self.p_inside) {
            return Err(Error::Config(format!("p_inside = {} outside [0, 1]", self.p_inside)));
        }
        Ok(())
    }
}

/// The `d_hi × 3` projection producing edge-operation logits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeAugmentor {
    w: ParamId,
}

const AUGMENTOR_W: &str = "augmentor.w";

impl EdgeAugmentor {
    pub fn new<T: Real>(store: &mut ParamStore<T>, d_hi: usize, rng: &mut impl Rng) -> Result<Self> {
        let normal = Normal::new(0.0, 1.0 / (d_hi as f64).sqrt()).expect("positive deviation");
        let data = (0..d_hi * 3).map(|_| T::lit(normal.sample(rng))).collect();
        Ok(Self { w: store.register(AUGMENTOR_W, Tensor::from_vec(d_hi, 3, data)?)? })
    }

    pub fn from_store<T: Real>(store: &ParamStore<T>, d_hi: usize) -> Result<Self> {
        Ok(Self { w: store.expect(AUGMENTOR_W, [d_hi, 3])? })
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    /// `α_e = x_e W` for every row of `edge_embeddings`.
    pub fn logits<T: Real>(&self, store: &ParamStore<T>, edge_embeddings: &Tensor<T>) -> Result<Vec<[f64; 3]>> {
        let a = edge_embeddings.matmul(store.value(self.w))?;
        Ok((0..a.rows()).map(|e| [0, 1, 2].map(|k| a.get(e, k).as_f64())).collect())
    }

    /// Straight-through gates for the kept edges of `view`, in view order.
    /// Each gate has value 1 (up to rounding) and the gradient of the soft
    /// Gumbel-Softmax probability of the chosen operation.
    pub fn gates<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        edge_embeddings: &Tensor<T>,
        view: &View,
        tau_g: f64,
    ) -> Result<Var> {
        let m = edge_embeddings.rows();
        let x = g.constant(edge_embeddings.clone())?;
        let w = g.param(store, self.w)?;
        let alpha = g.matmul(x, w)?;
        let noise = view.noise.iter().flat_map(|n| n.map(T::lit)).collect();
        let noise = g.constant(Tensor::from_vec(m, 3, noise)?)?;
        let logits = g.add(alpha, noise)?;
        let scaled = g.scale(logits, T::lit(1.0 / tau_g))?;
        let soft = g.row_softmax(scaled)?;
        let picks: std::sync::Arc<[(usize, usize)]> =
            view.edge_ids.iter().map(|&e| (e, view.ops[e].index())).collect();
        let chosen = g.pick(soft, picks)?;
        let inverse = g.value(chosen).map(|p| T::one() / p);
        let inverse = g.constant(inverse)?;
        g.mul(chosen, inverse)
    }
}

/// One augmented view. Node indices match the base hypergraph; masked nodes
/// are isolated in `hypergraph`.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub hypergraph: Hypergraph,
    pub node_mask: Vec<bool>,
    /// Operation drawn for every base edge.
    pub ops: Vec<EdgeOp>,
    /// Gumbel noise drawn for every base edge.
    pub noise: Vec<[f64; 3]>,
    /// Base edge index of each edge in the view, in view order.
    pub edge_ids: Vec<usize>,
}

impl View {
    /// Whether node `v` has at least one incidence in this view.
    pub fn node_present(&self, v: usize) -> bool {
        !self.hypergraph.is_isolated(v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewPair {
    pub a: View,
    pub b: View,
}

#[derive(Serialize)]
struct ViewDump<'a> {
    incidences: Vec<(usize, usize)>,
    edge_ids: &'a [usize],
    node_mask: &'a [bool],
    ops: &'a [EdgeOp],
}

impl ViewPair {
    /// Both views as incidence coordinate lists (node, base edge) with the
    /// mask and operation vectors.
    pub fn debug_json(&self) -> serde_json::Value {
        let dump = |v: &'_ View| {
            let incidences = (0..v.hypergraph.edge_count())
                .flat_map(|e| v.hypergraph.nodes_of_edge(e).iter().map(move |&n| (n, v.edge_ids[e])))
                .collect();
            serde_json::to_value(ViewDump { incidences, edge_ids: &v.edge_ids, node_mask: &v.node_mask, ops: &v.ops })
                .expect("serializable")
        };
        serde_json::json!({ "view_a": dump(&self.a), "view_b": dump(&self.b) })
    }
}

/// Draws views for a fixed base hypergraph.
#[derive(Clone, Debug)]
pub struct ViewSampler {
    config: AugmentConfig,
    probabilities: Vec<f64>,
}

impl ViewSampler {
    pub fn new(hg: &Hypergraph, config: AugmentConfig) -> Result<Self> {
        config.validate()?;
        let stats = incidence_stats(hg)?;
        Ok(Self { config, probabilities: node_mask_probabilities(&stats, &config.masking) })
    }

    pub fn config(&self) -> &AugmentConfig {
        &self.config
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    fn attempt(&self, hg: &Hypergraph, alpha: &[[f64; 3]], rng: &mut impl Rng) -> Result<Option<View>> {
        let n = hg.node_count();
        let node_mask: Vec<bool> = (0..n).map(|v| rng.random::<f64>() < self.probabilities[v]).collect();
        let mut ops = Vec::with_capacity(hg.edge_count());
        let mut noise = Vec::with_capacity(hg.edge_count());
        let mut kept = Vec::new();
        for (e, a) in alpha.iter().enumerate() {
            let draw = gumbel_softmax_sample(*a, self.config.tau_g, rng);
            let op = self.config.fixed_op.unwrap_or(draw.op);
            ops.push(op);
            noise.push(draw.noise);
            let members = hg.nodes_of_edge(e).iter().copied().filter(|&v| !node_mask[v]);
            let members: Vec<usize> = match op {
                EdgeOp::Preserve => members.collect(),
                EdgeOp::Remove => continue,
                EdgeOp::MaskInside => members.filter(|_| rng.random::<f64>() >= self.config.p_inside).collect(),
            };
            if !members.is_empty() {
                kept.push((e, members));
            }
        }
        if kept.is_empty() {
            return Ok(None);
        }
        let edge_ids = kept.iter().map(|(e, _)| *e).collect();
        let edges = kept.into_iter().map(|(e, m)| (hg.edge_labels()[e].clone(), m)).collect();
        let hypergraph = Hypergraph::from_edge_lists(hg.node_labels().to_vec(), edges)?;
        Ok(Some(View { hypergraph, node_mask, ops, noise, edge_ids }))
    }

    /// One view, resampled up to `max_resamples` times if it loses every edge.
    pub fn sample_view(&self, hg: &Hypergraph, alpha: &[[f64; 3]], rng: &mut impl Rng) -> Result<View> {
        if alpha.len() != hg.edge_count() || self.probabilities.len() != hg.node_count() {
            return Err(Error::Invalid("augmentation inputs do not match the hypergraph".into()));
        }
        for _ in 0..=self.config.max_resamples {
            if let Some(view) = self.attempt(hg, alpha, rng)? {
                return Ok(view);
            }
        }
        Err(Error::EmptyView { attempts: self.config.max_resamples + 1 })
    }

    /// Two independently drawn views.
    pub fn sample_pair(&self, hg: &Hypergraph, alpha: &[[f64; 3]], rng: &mut impl Rng) -> Result<ViewPair> {
        let a = self.sample_view(hg, alpha, rng)?;
        let b = self.sample_view(hg, alpha, rng)?;
        Ok(ViewPair { a, b })
    }
}

/// Computes masking probabilities and edge logits, then draws a view pair.
/// `edge_embeddings` are the encoder's hyperedge embeddings of `hg`.
pub fn generate_views<T: Real>(
    hg: &Hypergraph,
    edge_embeddings: &Tensor<T>,
    augmentor: &EdgeAugmentor,
    store: &ParamStore<T>,
    config: AugmentConfig,
    rng: &mut impl Rng,
) -> Result<ViewPair> {
    let sampler = ViewSampler::new(hg, config)?;
    let alpha = augmentor.logits(store, edge_embeddings)?;
    sampler.sample_pair(hg, &alpha, rng)
}

#[cfg(test)]
mod tests;
