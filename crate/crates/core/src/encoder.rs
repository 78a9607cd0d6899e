//! Hypergraph transformer encoder.
//!
//! Each layer runs multi-head set attention twice: within every hyperedge
//! over its member nodes (node → edge), then within every node over its
//! incident hyperedges (edge → node). Attended member rows are mean-pooled
//! into one vector per set. Node sets carry the node's own current embedding
//! as an extra leading row, so a node attends jointly to itself and its
//! hyperedges. Isolated nodes keep their previous embedding.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;
use crate::numerics::checkpoint::{load_checkpoint, save_checkpoint};
use crate::numerics::{Graph, ParamId, ParamStore, SetIndex, Tensor, Var};
use crate::rng::StreamRng;
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    /// Embedding width.
    pub d_hi: usize,
    pub heads: usize,
    pub layers: usize,
    /// Dropout on the attention output projection during training.
    pub dropout: f64,
    pub layer_norm_eps: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { d_hi: 32, heads: 4, layers: 2, dropout: 0.0, layer_norm_eps: 1e-5 }
    }
}

impl EncoderConfig {
    /// Per-head width, `⌊d_hi / heads⌋`.
    pub fn d_k(&self) -> usize {
        self.d_hi.checked_div(self.heads).unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.d_k() == 0 {
            return Err(Error::Config(format!("d_hi {} too small for {} heads", self.d_hi, self.heads)));
        }
        if self.layers == 0 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Parameters of one multi-head set-attention block.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionBlock {
    /// `(W_Q, W_K, W_V)` per head, each `d_hi × d_k`.
    heads: Vec<[ParamId; 3]>,
    out_w: ParamId,
    out_b: ParamId,
    ln_gamma: ParamId,
    ln_beta: ParamId,
}

fn gaussian<T: Real>(rng: &mut impl Rng, rows: usize, cols: usize, std: f64) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("positive deviation");
    let data = (0..rows * cols).map(|_| T::lit(dist.sample(rng))).collect();
    Tensor::from_vec(rows, cols, data).expect("sized buffer")
}

impl AttentionBlock {
    fn names(prefix: &str, heads: usize) -> (Vec<[String; 3]>, [String; 4]) {
        let per_head = (0..heads)
            .map(|h| ["wq", "wk", "wv"].map(|w| format!("{prefix}.head{h}.{w}")))
            .collect();
        (per_head, ["out.w", "out.b", "ln.gamma", "ln.beta"].map(|s| format!("{prefix}.{s}")))
    }

    fn register<T: Real>(store: &mut ParamStore<T>, prefix: &str, cfg: &EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        let (d, dk, h) = (cfg.d_hi, cfg.d_k(), cfg.heads);
        let (head_names, [ow, ob, lg, lb]) = Self::names(prefix, h);
        let std = 1.0 / (d as f64).sqrt();
        let mut heads = Vec::with_capacity(h);
        for names in head_names {
            let [q, k, v] = names;
            heads.push([
                store.register(q, gaussian(rng, d, dk, std))?,
                store.register(k, gaussian(rng, d, dk, std))?,
                store.register(v, gaussian(rng, d, dk, std))?,
            ]);
        }
        Ok(Self {
            heads,
            out_w: store.register(ow, gaussian(rng, h * dk, d, 1.0 / ((h * dk) as f64).sqrt()))?,
            out_b: store.register(ob, Tensor::zeros(1, d))?,
            ln_gamma: store.register(lg, Tensor::filled(1, d, T::one()))?,
            ln_beta: store.register(lb, Tensor::zeros(1, d))?,
        })
    }

    fn lookup<T: Real>(store: &ParamStore<T>, prefix: &str, cfg: &EncoderConfig) -> Result<Self> {
        let (d, dk, h) = (cfg.d_hi, cfg.d_k(), cfg.heads);
        let (head_names, [ow, ob, lg, lb]) = Self::names(prefix, h);
        let heads = head_names
            .iter()
            .map(|[q, k, v]| Ok([store.expect(q, [d, dk])?, store.expect(k, [d, dk])?, store.expect(v, [d, dk])?]))
            .collect::<Result<_>>()?;
        Ok(Self {
            heads,
            out_w: store.expect(&ow, [h * dk, d])?,
            out_b: store.expect(&ob, [1, d])?,
            ln_gamma: store.expect(&lg, [1, d])?,
            ln_beta: store.expect(&lb, [1, d])?,
        })
    }

    /// Attends within each set of rows of `table` and returns one updated row
    /// per set member: `LN(x_S + proj(concat_h Attention_h(x_S)))`.
    pub fn apply<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        table: Var,
        sets: &Arc<SetIndex>,
        cfg: &EncoderConfig,
        dropout: Option<&mut StreamRng>,
    ) -> Result<Var> {
        if sets.is_empty() || (0..sets.len()).any(|s| sets.set(s).is_empty()) {
            return Err(Error::EmptySet("set attention"));
        }
        let scale = T::one() / T::lit(cfg.d_k() as f64).sqrt();
        let mut head_out = Vec::with_capacity(self.heads.len());
        for [wq, wk, wv] in &self.heads {
            let (wq, wk, wv) = (g.param(store, *wq)?, g.param(store, *wk)?, g.param(store, *wv)?);
            let q = g.matmul(table, wq)?;
            let k = g.matmul(table, wk)?;
            let v = g.matmul(table, wv)?;
            head_out.push(g.segment_attention(q, k, v, sets.clone(), scale)?);
        }
        let concat = g.concat_cols(&head_out)?;
        let (ow, ob) = (g.param(store, self.out_w)?, g.param(store, self.out_b)?);
        let proj = g.matmul(concat, ow)?;
        let mut proj = g.add_row(proj, ob)?;
        if let Some(rng) = dropout {
            if cfg.dropout > 0.0 {
                let [r, c] = g.shape(proj);
                let keep = 1.0 - cfg.dropout;
                let mask = (0..r * c)
                    .map(|_| if rng.random::<f64>() < keep { T::lit(1.0 / keep) } else { T::zero() })
                    .collect();
                let mask = g.constant(Tensor::from_vec(r, c, mask)?)?;
                proj = g.mul(proj, mask)?;
            }
        }
        let residual = g.gather_rows(table, sets.flat().into())?;
        let summed = g.add(residual, proj)?;
        let normed = g.layer_norm(summed, T::lit(cfg.layer_norm_eps))?;
        let (gamma, beta) = (g.param(store, self.ln_gamma)?, g.param(store, self.ln_beta)?);
        let scaled = g.mul_row(normed, gamma)?;
        g.add_row(scaled, beta)
    }
}

/// Multi-head set attention over all rows of `x_s` as a single set.
pub fn set_attention<T: Real>(
    g: &mut Graph<T>,
    store: &ParamStore<T>,
    block: &AttentionBlock,
    x_s: Var,
    cfg: &EncoderConfig,
) -> Result<Var> {
    let n = g.shape(x_s)[0];
    if n == 0 {
        return Err(Error::EmptySet("set attention"));
    }
    block.apply(g, store, x_s, &Arc::new(SetIndex::from_sets([0..n])), cfg, None)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    pub to_edge: AttentionBlock,
    pub to_node: AttentionBlock,
}

/// Result of a forward pass, as handles on the graph.
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    /// Final-layer node embeddings (`node_count × d_hi`); absent when the
    /// last node update was skipped.
    pub nodes: Option<Var>,
    /// Final-layer hyperedge embeddings (`edge_count × d_hi`).
    pub edges: Var,
}

/// Parameter layout of the encoder. Values live in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct HypergraphEncoder {
    config: EncoderConfig,
    node_labels: Vec<String>,
    table: ParamId,
    layers: Vec<EncoderLayer>,
}

const TABLE: &str = "encoder.node_table";

fn block_prefix(layer: usize, dir: &str) -> String {
    format!("encoder.layer{layer}.{dir}")
}

impl HypergraphEncoder {
    /// Registers freshly initialized parameters for a vocabulary.
    pub fn new<T: Real>(
        config: EncoderConfig,
        node_labels: Vec<String>,
        store: &mut ParamStore<T>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.d_hi;
        let table = store.register(TABLE, gaussian(rng, node_labels.len(), d, 1.0 / (d as f64).sqrt()))?;
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            layers.push(EncoderLayer {
                to_edge: AttentionBlock::register(store, &block_prefix(l, "v2e"), &config, rng)?,
                to_node: AttentionBlock::register(store, &block_prefix(l, "e2v"), &config, rng)?,
            });
        }
        Ok(Self { config, node_labels, table, layers })
    }

    /// Rebinds to parameters already present in `store` (e.g. a checkpoint).
    pub fn from_store<T: Real>(config: EncoderConfig, node_labels: Vec<String>, store: &ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let table = store.expect(TABLE, [node_labels.len(), config.d_hi])?;
        let layers = (0..config.layers)
            .map(|l| {
                Ok(EncoderLayer {
                    to_edge: AttentionBlock::lookup(store, &block_prefix(l, "v2e"), &config)?,
                    to_node: AttentionBlock::lookup(store, &block_prefix(l, "e2v"), &config)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { config, node_labels, table, layers })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn node_labels(&self) -> &[String] {
        &self.node_labels
    }

    pub fn layers(&self) -> &[EncoderLayer] {
        &self.layers
    }

    pub fn node_table(&self) -> ParamId {
        self.table
    }

    /// Records the full forward pass on `g`.
    ///
    /// With `final_nodes = false` the last edge → node update is skipped;
    /// hyperedge embeddings do not depend on it.
    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        hg: &Hypergraph,
        final_nodes: bool,
        mut dropout: Option<&mut StreamRng>,
    ) -> Result<EncoderOutput> {
        let n = hg.node_count();
        if n != self.node_labels.len() {
            return Err(Error::ShapeMismatch {
                op: "encoder forward",
                left: [self.node_labels.len(), self.config.d_hi],
                right: [n, self.config.d_hi],
            });
        }
        if hg.edge_count() == 0 {
            return Err(Error::EmptySet("encoder forward: hypergraph has no hyperedges"));
        }
        let edge_sets = Arc::new(SetIndex::from_sets((0..hg.edge_count()).map(|e| hg.nodes_of_edge(e).iter().copied())));
        let owners: Vec<usize> = (0..n).filter(|&v| !hg.is_isolated(v)).collect();
        let node_sets = Arc::new(SetIndex::from_sets(
            owners.iter().map(|&v| std::iter::once(v).chain(hg.edges_of_node(v).iter().map(|&e| n + e))),
        ));
        // Row v of the assembled table: pooled update if v has edges, else its previous row.
        let assemble: Option<Arc<[usize]>> = (owners.len() < n).then(|| {
            let mut pos = 0;
            (0..n)
                .map(|v| {
                    if hg.is_isolated(v) {
                        v
                    } else {
                        pos += 1;
                        n + pos - 1
                    }
                })
                .collect()
        });

        let mut x_v = g.param(store, self.table)?;
        let mut x_e = None;
        let mut nodes_out = None;
        for (l, layer) in self.layers.iter().enumerate() {
            let rows = layer.to_edge.apply(g, store, x_v, &edge_sets, &self.config, dropout.as_deref_mut())?;
            let edges = g.segment_mean(rows, edge_sets.clone())?;
            x_e = Some(edges);
            let last = l + 1 == self.layers.len();
            if last && !final_nodes {
                break;
            }
            let combined = g.concat_rows(&[x_v, edges])?;
            let rows = layer.to_node.apply(g, store, combined, &node_sets, &self.config, dropout.as_deref_mut())?;
            let pooled = g.segment_mean(rows, node_sets.clone())?;
            x_v = match &assemble {
                None => pooled,
                Some(index) => {
                    let stacked = g.concat_rows(&[x_v, pooled])?;
                    g.gather_rows(stacked, index.clone())?
                }
            };
            if last {
                nodes_out = Some(x_v);
            }
        }
        Ok(EncoderOutput { nodes: nodes_out, edges: x_e.expect("at least one layer") })
    }
}

/// An encoder together with its parameter values.
#[derive(Clone, Debug)]
pub struct EncoderState<T: Real = f64> {
    pub encoder: HypergraphEncoder,
    pub params: ParamStore<T>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct EncoderMetadata {
    kind: String,
    encoder: EncoderConfig,
    node_labels: Vec<String>,
    #[serde(default)]
    extra: serde_json::Value,
}

impl<T: Real> EncoderState<T> {
    pub fn init(config: EncoderConfig, node_labels: Vec<String>, rng: &mut impl Rng) -> Result<Self> {
        let mut params = ParamStore::new();
        let encoder = HypergraphEncoder::new(config, node_labels, &mut params, rng)?;
        Ok(Self { encoder, params })
    }

    /// Final-layer hyperedge embeddings, `edge_count × d_hi`.
    pub fn embed_edges(&self, hg: &Hypergraph) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let out = self.encoder.forward(&mut g, &self.params, hg, false, None)?;
        Ok(g.value(out.edges).clone())
    }

    /// Final-layer node and hyperedge embeddings.
    pub fn embed(&self, hg: &Hypergraph) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut g = Graph::new();
        let out = self.encoder.forward(&mut g, &self.params, hg, true, None)?;
        let nodes = out.nodes.expect("final nodes requested");
        Ok((g.value(nodes).clone(), g.value(out.edges).clone()))
    }

    /// Saves every parameter in the store plus the encoder metadata.
    pub fn save(&self, dir: &Path, extra: serde_json::Value) -> Result<()> {
        let meta = EncoderMetadata {
            kind: "hypergraph-encoder".into(),
            encoder: self.encoder.config,
            node_labels: self.encoder.node_labels.clone(),
            extra,
        };
        save_checkpoint(dir, &self.params, serde_json::to_value(meta)?)?;
        Ok(())
    }

    /// Loads an encoder checkpoint; returns the state and the `extra` data
    /// that was saved with it.
    pub fn load(dir: &Path) -> Result<(Self, serde_json::Value)> {
        let (params, manifest) = load_checkpoint::<T>(dir)?;
        let meta: EncoderMetadata = serde_json::from_value(manifest.metadata).map_err(|e| Error::Checkpoint {
            path: dir.to_path_buf(),
            message: format!("not an encoder checkpoint: {e}"),
        })?;
        let encoder = HypergraphEncoder::from_store(meta.encoder, meta.node_labels, &params)?;
        Ok((Self { encoder, params }, meta.extra))
    }
}

/// Embedding row of one patient's hyperedge.
pub fn patient_embedding<T: Real>(edge_embeddings: &Tensor<T>, hg: &Hypergraph, patient_id: &str) -> Result<Vec<T>> {
    let e = hg.edge_index(patient_id).ok_or_else(|| Error::UnknownPatient(patient_id.to_string()))?;
    Ok(edge_embeddings.row(e).to_vec())
}

#[cfg(test)]
mod tests;
