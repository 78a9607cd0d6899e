//! Supervised pre-training: a softmax head over patient hyperedge embeddings
//! trained jointly with the encoder by cross-entropy.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, EncoderState};
use crate::error::{Error, Result};
use crate::eval::{auroc, holdout_split};
use crate::hypergraph::Hypergraph;
use crate::numerics::{Graph, OptimizerConfig, ParamId, ParamStore, Tensor, Var};
use crate::rng::{subseed, substream};
use crate::scalar::Real;
use crate::train::{epoch_batches, TrainRun};

/// `−(1/n) Σ_p Σ_c t_pc log softmax(logits)_pc` for arbitrary nonnegative targets.
fn soft_cross_entropy<T: Real>(g: &mut Graph<T>, logits: Var, targets: Tensor<T>) -> Result<Var> {
    let n = targets.rows();
    let t = g.constant(targets)?;
    let log_p = g.row_log_softmax(logits)?;
    let prod = g.mul(log_p, t)?;
    let s = g.sum(prod)?;
    g.scale(s, T::lit(-1.0 / n as f64))
}

/// Mean cross-entropy against one-hot label rows.
pub fn cross_entropy<T: Real>(g: &mut Graph<T>, logits: Var, one_hot: &Tensor<T>) -> Result<Var> {
    if one_hot.rows() == 0 {
        return Err(Error::EmptySet("cross entropy"));
    }
    for r in 0..one_hot.rows() {
        let row = one_hot.row(r);
        let ones = row.iter().filter(|&&x| x == T::one()).count();
        let zeros = row.iter().filter(|&&x| x == T::zero()).count();
        if ones != 1 || ones + zeros != row.len() {
            return Err(Error::Invalid(format!("label row {r} is not one-hot")));
        }
    }
    soft_cross_entropy(g, logits, one_hot.clone())
}

/// One-hot rows for class indices, scaled per class by `class_weight`.
pub fn one_hot<T: Real>(labels: &[u8], classes: usize, class_weight: &[f64]) -> Tensor<T> {
    let mut t = Tensor::zeros(labels.len(), classes);
    for (r, &y) in labels.iter().enumerate() {
        t.set(r, y as usize, T::lit(class_weight.get(y as usize).copied().unwrap_or(1.0)));
    }
    t
}

/// Linear classification head `logits = x W + b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupervisedHead {
    pub w: ParamId,
    pub b: ParamId,
    pub classes: usize,
}

impl SupervisedHead {
    pub fn new<T: Real>(store: &mut ParamStore<T>, d_hi: usize, classes: usize, rng: &mut impl Rng) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Config("a head needs at least two classes".into()));
        }
        let normal = Normal::new(0.0, 1.0 / (d_hi as f64).sqrt()).expect("positive deviation");
        let w = (0..d_hi * classes).map(|_| T::lit(normal.sample(rng))).collect();
        Ok(Self {
            w: store.register("head.w", Tensor::from_vec(d_hi, classes, w)?)?,
            b: store.register("head.b", Tensor::zeros(1, classes))?,
            classes,
        })
    }

    pub fn from_store<T: Real>(store: &ParamStore<T>, d_hi: usize, classes: usize) -> Result<Self> {
        Ok(Self { w: store.expect("head.w", [d_hi, classes])?, b: store.expect("head.b", [1, classes])?, classes })
    }

    pub fn logits<T: Real>(&self, g: &mut Graph<T>, store: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(store, self.w)?;
        let b = g.param(store, self.b)?;
        let z = g.matmul(x, w)?;
        g.add_row(z, b)
    }

    /// Probability of class 1 for every hyperedge of `hg`.
    pub fn predict_proba<T: Real>(&self, state: &EncoderState<T>, hg: &Hypergraph) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let out = state.encoder.forward(&mut g, &state.params, hg, false, None)?;
        let logits = self.logits(&mut g, &state.params, out.edges)?;
        let p = g.row_softmax(logits)?;
        Ok((0..hg.edge_count()).map(|e| g.value(p).get(e, 1).as_f64()).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupervisedConfig {
    pub encoder: EncoderConfig,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    /// Hyperedges per step; `None` is full-batch.
    pub batch_size: Option<usize>,
    /// Share of labelled hyperedges held out for early stopping.
    pub validation_fraction: f64,
    /// Epochs without validation AUROC improvement before stopping;
    /// `None` disables early stopping and the validation split.
    pub patience: Option<usize>,
    /// Loss weight of the positive class.
    pub positive_weight: f64,
}

impl Default for SupervisedConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            optimizer: OptimizerConfig::default(),
            epochs: 200,
            batch_size: None,
            validation_fraction: 0.1,
            patience: Some(20),
            positive_weight: 1.0,
        }
    }
}

fn snapshot<T: Real>(store: &ParamStore<T>) -> Vec<Tensor<T>> {
    store.iter().map(|p| p.value.clone()).collect()
}

fn restore<T: Real>(store: &mut ParamStore<T>, values: Vec<Tensor<T>>) {
    for (p, v) in store.iter_mut().zip(values) {
        p.value = v;
    }
}

/// Jointly trains an encoder and a two-class head on labelled hyperedges.
pub fn fit_supervised<T: Real>(
    hg: &Hypergraph,
    labels: &[u8],
    config: &SupervisedConfig,
    seed: u64,
) -> Result<(EncoderState<T>, SupervisedHead, TrainRun)> {
    config.encoder.validate()?;
    if labels.len() != hg.edge_count() {
        return Err(Error::Invalid(format!("{} labels for {} hyperedges", labels.len(), hg.edge_count())));
    }
    if labels.iter().any(|&y| y > 1) {
        return Err(Error::Invalid("labels must be 0 or 1".into()));
    }
    if !labels.contains(&0) || !labels.contains(&1) {
        return Err(Error::DegenerateTask("pre-training labels contain a single class".into()));
    }

    let mut init_rng = substream(seed, "encoder-init");
    let mut state = EncoderState::<T>::init(config.encoder, hg.node_labels().to_vec(), &mut init_rng)?;
    let head = SupervisedHead::new(&mut state.params, config.encoder.d_hi, 2, &mut substream(seed, "head-init"))?;
    let mut optimizer = config.optimizer.build(&state.params);

    let (train_ids, val_ids) = match config.patience {
        Some(_) if config.validation_fraction > 0.0 => {
            let (train, val) = holdout_split(labels, config.validation_fraction, subseed(seed, "validation"))?;
            let val_labels: Vec<u8> = val.iter().map(|&i| labels[i]).collect();
            if val_labels.contains(&0) && val_labels.contains(&1) {
                (train, val)
            } else {
                log::warn!("validation slice holds a single class; early stopping disabled");
                ((0..labels.len()).collect(), Vec::new())
            }
        }
        _ => ((0..labels.len()).collect(), Vec::new()),
    };
    let train_hg = hg.select_edges(&train_ids);
    let train_labels: Vec<u8> = train_ids.iter().map(|&i| labels[i]).collect();
    if !train_labels.contains(&0) || !train_labels.contains(&1) {
        return Err(Error::DegenerateTask("training slice contains a single class".into()));
    }
    let val_hg = (!val_ids.is_empty()).then(|| hg.select_edges(&val_ids));
    let val_labels: Vec<u8> = val_ids.iter().map(|&i| labels[i]).collect();
    let class_weight = [1.0, config.positive_weight];

    let mut batch_rng = substream(seed, "batches");
    let mut dropout_rng = substream(seed, "dropout");
    let mut run = TrainRun {
        learning_rate: config.optimizer.lr(),
        seed,
        config: serde_json::to_value(config)?,
        ..Default::default()
    };
    let mut best: Option<(f64, usize, Vec<Tensor<T>>)> = None;
    for epoch in 0..config.epochs {
        let batches = epoch_batches(train_hg.edge_count(), config.batch_size, &mut batch_rng);
        let mut total = 0.0;
        for batch in &batches {
            let sub;
            let graph = if batch.len() == train_hg.edge_count() {
                &train_hg
            } else {
                sub = train_hg.select_edges(batch);
                &sub
            };
            let y: Vec<u8> = batch.iter().map(|&i| train_labels[i]).collect();
            let mut g = Graph::new();
            let out = state.encoder.forward(&mut g, &state.params, graph, false, Some(&mut dropout_rng))?;
            let logits = head.logits(&mut g, &state.params, out.edges)?;
            let loss = soft_cross_entropy(&mut g, logits, one_hot(&y, 2, &class_weight))?;
            total += g.value(loss).item().as_f64();
            state.params.zero_grad();
            g.backward(loss, &mut state.params)?;
            optimizer.step(&mut state.params);
        }
        run.loss_trace.push(total / batches.len() as f64);
        run.epochs = epoch + 1;

        if let (Some(val_hg), Some(patience)) = (&val_hg, config.patience) {
            let score = auroc(&head.predict_proba(&state, val_hg)?, &val_labels)?;
            run.validation_trace.push(score);
            if best.as_ref().is_none_or(|b| score > b.0) {
                best = Some((score, epoch + 1, snapshot(&state.params)));
            } else if epoch + 1 - best.as_ref().map_or(0, |b| b.1) >= patience {
                break;
            }
        }
        log::debug!("supervised epoch {} loss {:.6}", epoch + 1, run.loss_trace[epoch]);
    }
    if let Some((_, epoch, values)) = best {
        restore(&mut state.params, values);
        run.best_epoch = Some(epoch);
    }
    Ok((state, head, run))
}
