//! Self-supervised pre-training over pairs of augmented views.
//!
//! Five terms are summed: a mean squared alignment of shared node
//! embeddings, a one-directional hyperedge InfoNCE term, symmetric node and
//! hyperedge InfoNCE terms, and a node–hyperedge membership term. All
//! InfoNCE terms use cosine similarity with temperature `tau_level` and draw
//! candidates from the opposite view. Items missing from either view take no
//! part in a term, neither as anchors nor as negatives.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentConfig, EdgeAugmentor, View, ViewPair, ViewSampler};
use crate::encoder::{EncoderConfig, EncoderState};
use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;
use crate::numerics::{Graph, OptimizerConfig, Tensor, Var};
use crate::rng::{substream, StreamRng};
use crate::scalar::Real;
use crate::train::{epoch_batches, TrainRun};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContrastiveConfig {
    pub tau_level: f64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        Self { tau_level: 0.5 }
    }
}

/// `−log[exp(cos(x_i, c_pos)/τ) / Σ_q exp(cos(x_i, c_q)/τ)]` on plain vectors.
pub fn contrastive_pair(x_i: &[f64], positive: usize, candidates: &[Vec<f64>], tau: f64) -> Result<f64> {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let ni = norm(x_i);
    if ni == 0.0 {
        return Err(Error::ZeroVector("contrastive anchor"));
    }
    if positive >= candidates.len() {
        return Err(Error::Invalid("positive is not among the candidates".into()));
    }
    let scores = candidates
        .iter()
        .map(|c| {
            let nc = norm(c);
            if nc == 0.0 {
                return Err(Error::ZeroVector("contrastive candidate"));
            }
            Ok(x_i.iter().zip(c).map(|(a, b)| a * b).sum::<f64>() / (ni * nc) / tau)
        })
        .collect::<Result<Vec<f64>>>()?;
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    Ok(lse - scores[positive])
}

/// Mean of `ℓ(anchor_r, candidate_c)` over `pairs = (r, c)`; every row of
/// `candidates` is in each anchor's denominator.
pub fn info_nce<T: Real>(
    g: &mut Graph<T>,
    anchors: Var,
    candidates: Var,
    pairs: Arc<[(usize, usize)]>,
    tau: f64,
) -> Result<Var> {
    if pairs.is_empty() {
        return Err(Error::EmptySet("contrastive term"));
    }
    let a = g.row_normalize(anchors)?;
    let c = g.row_normalize(candidates)?;
    let sim = g.matmul_nt(a, c)?;
    let logits = g.scale(sim, T::lit(1.0 / tau))?;
    let log_p = g.row_log_softmax(logits)?;
    let picked = g.pick(log_p, pairs)?;
    let mean = g.mean(picked)?;
    g.scale(mean, -T::one())
}

fn diagonal(k: usize) -> Arc<[(usize, usize)]> {
    (0..k).map(|i| (i, i)).collect()
}

/// Mean squared difference of row-aligned node tables.
pub fn loss_sim<T: Real>(g: &mut Graph<T>, nodes_a: Var, nodes_b: Var) -> Result<Var> {
    if g.shape(nodes_a)[0] == 0 {
        return Err(Error::DisjointViews("no node is present in both views"));
    }
    g.mse(nodes_a, nodes_b)
}

/// One-directional InfoNCE from view-A hyperedges to row-aligned view-B hyperedges.
pub fn loss_hyper<T: Real>(g: &mut Graph<T>, edges_a: Var, edges_b: Var, tau: f64) -> Result<Var> {
    let k = g.shape(edges_a)[0];
    if k == 0 {
        return Err(Error::DisjointViews("no hyperedge is present in both views"));
    }
    info_nce(g, edges_a, edges_b, diagonal(k), tau)
}

/// `½(ℓ̄(A→B) + ℓ̄(B→A))` over row-aligned tables; used for both nodes and hyperedges.
pub fn loss_symmetric<T: Real>(g: &mut Graph<T>, a: Var, b: Var, tau: f64) -> Result<Var> {
    let k = g.shape(a)[0];
    if k == 0 {
        return Err(Error::DisjointViews("no item is present in both views"));
    }
    let ab = info_nce(g, a, b, diagonal(k), tau)?;
    let ba = info_nce(g, b, a, diagonal(k), tau)?;
    let s = g.add(ab, ba)?;
    g.scale(s, T::lit(0.5))
}

/// `(1/2K) Σ [ℓ(x_v^A, x_e^B) + ℓ(x_v^B, x_e^A)]` over `memberships = (node row, edge row)`
/// into row-aligned node and hyperedge tables.
pub fn loss_membership<T: Real>(
    g: &mut Graph<T>,
    nodes: (Var, Var),
    edges: (Var, Var),
    memberships: Arc<[(usize, usize)]>,
    tau: f64,
) -> Result<Var> {
    if memberships.is_empty() {
        return Err(Error::DisjointViews("no surviving memberships"));
    }
    let ab = info_nce(g, nodes.0, edges.1, memberships.clone(), tau)?;
    let ba = info_nce(g, nodes.1, edges.0, memberships, tau)?;
    let s = g.add(ab, ba)?;
    g.scale(s, T::lit(0.5))
}

/// Which items of two views correspond to each other.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Alignment {
    /// Base node ids present in both views.
    pub nodes: Vec<usize>,
    /// Row of each shared hyperedge in view A's and view B's edge tables.
    pub edges: Vec<(usize, usize)>,
    /// Incidences present in both views, as (index into `nodes`, index into `edges`).
    pub memberships: Vec<(usize, usize)>,
}

impl Alignment {
    pub fn between(a: &View, b: &View) -> Self {
        let n = a.hypergraph.node_count();
        let mut node_pos = vec![usize::MAX; n];
        let mut nodes = Vec::new();
        for v in 0..n {
            if a.node_present(v) && b.node_present(v) {
                node_pos[v] = nodes.len();
                nodes.push(v);
            }
        }
        let mut row_in_b = BTreeMap::new();
        for (i, &e) in b.edge_ids.iter().enumerate() {
            row_in_b.insert(e, i);
        }
        let mut edges = Vec::new();
        let mut memberships = Vec::new();
        for (ia, e) in a.edge_ids.iter().enumerate() {
            let Some(&ib) = row_in_b.get(e) else { continue };
            let k = edges.len();
            edges.push((ia, ib));
            let members_b = b.hypergraph.nodes_of_edge(ib);
            for &v in a.hypergraph.nodes_of_edge(ia) {
                if members_b.binary_search(&v).is_ok() {
                    memberships.push((node_pos[v], k));
                }
            }
        }
        Self { nodes, edges, memberships }
    }
}

/// Node and hyperedge tables of one encoded view.
#[derive(Clone, Copy, Debug)]
pub struct ViewEncoding {
    pub nodes: Var,
    pub edges: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub sim: Var,
    pub hyper: Var,
    pub node: Var,
    pub edge: Var,
    pub membership: Var,
    pub total: Var,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub sim: f64,
    pub hyper: f64,
    pub node: f64,
    pub edge: f64,
    pub membership: f64,
    pub total: f64,
}

impl LossReport {
    pub fn read<T: Real>(g: &Graph<T>, t: &LossTerms) -> Self {
        let v = |x: Var| g.value(x).item().as_f64();
        Self {
            sim: v(t.sim),
            hyper: v(t.hyper),
            node: v(t.node),
            edge: v(t.edge),
            membership: v(t.membership),
            total: v(t.total),
        }
    }

    fn named(&self) -> [(&'static str, f64); 6] {
        [
            ("sim", self.sim),
            ("hyper", self.hyper),
            ("node", self.node),
            ("edge", self.edge),
            ("membership", self.membership),
            ("total", self.total),
        ]
    }
}

/// All five terms and their sum.
pub fn contrastive_losses<T: Real>(
    g: &mut Graph<T>,
    a: ViewEncoding,
    b: ViewEncoding,
    align: &Alignment,
    config: &ContrastiveConfig,
) -> Result<LossTerms> {
    let tau = config.tau_level;
    let node_ids: Arc<[usize]> = align.nodes.as_slice().into();
    if node_ids.is_empty() {
        return Err(Error::DisjointViews("no node is present in both views"));
    }
    if align.edges.is_empty() {
        return Err(Error::DisjointViews("no hyperedge is present in both views"));
    }
    let na = g.gather_rows(a.nodes, node_ids.clone())?;
    let nb = g.gather_rows(b.nodes, node_ids)?;
    let ea = g.gather_rows(a.edges, align.edges.iter().map(|p| p.0).collect())?;
    let eb = g.gather_rows(b.edges, align.edges.iter().map(|p| p.1).collect())?;

    let sim = loss_sim(g, na, nb)?;
    let hyper = loss_hyper(g, ea, eb, tau)?;
    let node = loss_symmetric(g, na, nb, tau)?;
    let edge = loss_symmetric(g, ea, eb, tau)?;
    let membership = loss_membership(g, (na, nb), (ea, eb), align.memberships.as_slice().into(), tau)?;
    let mut total = g.add(sim, hyper)?;
    for term in [node, edge, membership] {
        total = g.add(total, term)?;
    }
    Ok(LossTerms { sim, hyper, node, edge, membership, total })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnsupervisedConfig {
    pub encoder: EncoderConfig,
    pub augment: AugmentConfig,
    pub contrastive: ContrastiveConfig,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    /// Hyperedges per step; `None` trains on the whole hypergraph each step.
    pub batch_size: Option<usize>,
}

impl Default for UnsupervisedConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            augment: AugmentConfig::default(),
            contrastive: ContrastiveConfig::default(),
            optimizer: OptimizerConfig::default(),
            epochs: 50,
            batch_size: None,
        }
    }
}

impl UnsupervisedConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.augment.validate()?;
        if !(self.contrastive.tau_level > 0.0) {
            return Err(Error::Config(format!("tau_level = {} must be positive", self.contrastive.tau_level)));
        }
        Ok(())
    }
}

/// Encodes both views of `pair` on `g` and records the five losses. With a
/// learnable augmentor, each kept hyperedge embedding is multiplied by its
/// straight-through gate.
pub fn encode_pair<T: Real>(
    g: &mut Graph<T>,
    state: &EncoderState<T>,
    augmentor: Option<(&EdgeAugmentor, &Tensor<T>, f64)>,
    pair: &ViewPair,
    align: &Alignment,
    config: &ContrastiveConfig,
    mut dropout: Option<&mut StreamRng>,
) -> Result<LossTerms> {
    let mut enc = |g: &mut Graph<T>, view: &View| -> Result<ViewEncoding> {
        let out = state.encoder.forward(g, &state.params, &view.hypergraph, true, dropout.as_deref_mut())?;
        let mut edges = out.edges;
        if let Some((aug, x_e, tau_g)) = augmentor {
            let gates = aug.gates(g, &state.params, x_e, view, tau_g)?;
            edges = g.mul_col(edges, gates)?;
        }
        Ok(ViewEncoding { nodes: out.nodes.expect("final nodes requested"), edges })
    };
    let a = enc(g, &pair.a)?;
    let b = enc(g, &pair.b)?;
    contrastive_losses(g, a, b, align, config)
}

/// Draws view pairs until one shares at least one incidence, up to the
/// sampler's resample budget.
pub fn sample_aligned_pair(
    sampler: &ViewSampler,
    hg: &Hypergraph,
    alpha: &[[f64; 3]],
    rng: &mut StreamRng,
) -> Result<(ViewPair, Alignment)> {
    for _ in 0..=sampler.config().max_resamples {
        let pair = sampler.sample_pair(hg, alpha, rng)?;
        let align = Alignment::between(&pair.a, &pair.b);
        if !align.memberships.is_empty() {
            return Ok((pair, align));
        }
    }
    Err(Error::DisjointViews("no incidence survives in both views"))
}

/// Contrastive pre-training on an unlabeled hypergraph.
pub fn fit_unsupervised<T: Real>(
    hg: &Hypergraph,
    config: &UnsupervisedConfig,
    seed: u64,
) -> Result<(EncoderState<T>, TrainRun)> {
    config.validate()?;
    let mut init_rng = substream(seed, "encoder-init");
    let mut state = EncoderState::<T>::init(config.encoder, hg.node_labels().to_vec(), &mut init_rng)?;
    let augmentor = EdgeAugmentor::new(&mut state.params, config.encoder.d_hi, &mut init_rng)?;
    let sampler = ViewSampler::new(hg, config.augment)?;
    let mut optimizer = config.optimizer.build(&state.params);
    let mut batch_rng = substream(seed, "batches");
    let mut view_rng = substream(seed, "views");
    let mut dropout_rng = substream(seed, "dropout");

    let mut run = TrainRun {
        epochs: 0,
        learning_rate: config.optimizer.lr(),
        seed,
        config: serde_json::to_value(config)?,
        ..Default::default()
    };
    for epoch in 0..config.epochs {
        let mut sums = LossReport::default();
        let batches = epoch_batches(hg.edge_count(), config.batch_size, &mut batch_rng);
        for batch in &batches {
            let sub;
            let graph = if batch.len() == hg.edge_count() {
                hg
            } else {
                sub = hg.select_edges(batch);
                &sub
            };
            let x_e = state.embed_edges(graph)?;
            let alpha = augmentor.logits(&state.params, &x_e)?;
            let (pair, align) = sample_aligned_pair(&sampler, graph, &alpha, &mut view_rng)?;
            let mut g = Graph::new();
            let gate = config.augment.learnable.then_some((&augmentor, &x_e, config.augment.tau_g));
            let terms = encode_pair(&mut g, &state, gate, &pair, &align, &config.contrastive, Some(&mut dropout_rng))?;
            let report = LossReport::read(&g, &terms);
            state.params.zero_grad();
            g.backward(terms.total, &mut state.params)?;
            optimizer.step(&mut state.params);
            sums.sim += report.sim;
            sums.hyper += report.hyper;
            sums.node += report.node;
            sums.edge += report.edge;
            sums.membership += report.membership;
            sums.total += report.total;
        }
        let k = batches.len() as f64;
        for (name, value) in sums.named() {
            run.component_traces.entry(name.to_string()).or_default().push(value / k);
        }
        run.loss_trace.push(sums.total / k);
        run.epochs = epoch + 1;
        log::debug!("contrastive epoch {} loss {:.6}", epoch + 1, sums.total / k);
    }
    Ok((state, run))
}

#[cfg(test)]
mod tests;
