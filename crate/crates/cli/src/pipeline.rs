//! In-memory pipeline stages shared by the commands and the acceptance runs.

use anyhow::{bail, Result};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use hyperpretrain::classifiers::Family;
use hyperpretrain::contrastive::fit_unsupervised;
use hyperpretrain::encoder::EncoderState;
use hyperpretrain::eval::{evaluate_split, holdout_split, nested_cv, Aggregate, EvalReport, GridRow, Metrics};
use hyperpretrain::hypergraph::{EmptyRowPolicy, Hypergraph};
use hyperpretrain::io::{check_same_patients, BinaryMatrix};
use hyperpretrain::rng::{subseed, substream};
use hyperpretrain::supervised::fit_supervised;
use hyperpretrain::train::TrainRun;
use hyperpretrain::transfer::{align_vocabulary, extract_embeddings, FeatureSource, TargetCohort, TransferEmbeddings, LABELS_FILE};
use hyperpretrain::Error;

use crate::config::{Mode, RunConfig};

/// Pre-training hypergraph with the labels of its kept patients.
#[derive(Clone, Debug)]
pub struct PretrainData {
    pub hypergraph: Hypergraph,
    pub labels: Option<Vec<u8>>,
    /// Patients without any diagnosis, dropped under [`EmptyRowPolicy::Drop`].
    pub dropped: Vec<String>,
}

impl PretrainData {
    pub fn build(diagnoses: &BinaryMatrix, labels: Option<&[(String, u8)]>, policy: EmptyRowPolicy) -> Result<Self> {
        if let Some(labels) = labels {
            let ids: Vec<String> = labels.iter().map(|(id, _)| id.clone()).collect();
            check_same_patients(LABELS_FILE, &diagnoses.ids(), &ids)?;
        }
        let (hypergraph, dropped) = Hypergraph::from_binary_matrix(diagnoses, policy)?;
        let labels = labels.map(|l| l.iter().filter(|(id, _)| !dropped.contains(id)).map(|&(_, y)| y).collect());
        Ok(Self { hypergraph, labels, dropped })
    }
}

pub fn pretrain_seed(seed: u64, mode: Mode) -> u64 {
    subseed(seed, &format!("pretrain.{}", mode.key()))
}

/// Pre-trains an encoder in a transfer mode.
pub fn pretrain(config: &RunConfig, mode: Mode, data: &PretrainData) -> Result<(EncoderState, TrainRun)> {
    let seed = pretrain_seed(config.seed, mode);
    Ok(match mode {
        Mode::Supervised => {
            let Some(labels) = &data.labels else {
                bail!(Error::Config("supervised pre-training needs labels".into()));
            };
            let (state, _, run) = fit_supervised::<f64>(&data.hypergraph, labels, &config.supervised, seed)?;
            (state, run)
        }
        Mode::Unsupervised => fit_unsupervised::<f64>(&data.hypergraph, &config.unsupervised, seed)?,
        Mode::FromScratch => bail!(Error::Config("from_scratch mode has no pre-training".into())),
    })
}

/// Alignment summary kept in manifests and `alignment.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferSummary {
    pub coverage: f64,
    pub matched: usize,
    pub dropped_features: Vec<String>,
    pub zero_embedding_patients: Vec<String>,
}

/// Target embeddings from a frozen encoder.
pub fn embed(config: &RunConfig, state: &EncoderState, cohort: &TargetCohort) -> Result<(TransferEmbeddings, TransferSummary)> {
    let alignment = align_vocabulary(state.encoder.node_labels(), &cohort.diagnoses.feature_names, config.data.coverage_floor)?;
    let emb = extract_embeddings(state, &alignment, &cohort.diagnoses)?;
    if !emb.zero_flagged.is_empty() {
        log::warn!("{} target patients have no aligned diagnosis; their embedding is zero", emb.zero_flagged.len());
    }
    let summary = TransferSummary {
        coverage: alignment.coverage,
        matched: alignment.matched.len(),
        dropped_features: alignment.dropped,
        zero_embedding_patients: emb.zero_flagged.clone(),
    };
    Ok((emb, summary))
}

/// Classifier input for a mode; pre-trained modes need their encoder.
pub fn feature_source(
    config: &RunConfig,
    mode: Mode,
    cohort: &TargetCohort,
    state: Option<&EncoderState>,
) -> Result<(FeatureSource, Option<TransferSummary>)> {
    match (mode, state) {
        (Mode::FromScratch, _) => Ok((FeatureSource::from_scratch(cohort), None)),
        (_, Some(state)) => {
            let (emb, summary) = embed(config, state, cohort)?;
            Ok((FeatureSource::with_embeddings(cohort, &emb), Some(summary)))
        }
        (_, None) => bail!(Error::Config(format!("mode {} needs a checkpoint", mode.key()))),
    }
}

pub fn eval_seed(seed: u64) -> u64 {
    subseed(seed, "eval")
}

/// Nested CV for every configured classifier. All classifiers and modes
/// share the same outer folds for a given seed.
pub fn evaluate(config: &RunConfig, source: &FeatureSource, labels: &[u8]) -> Result<Vec<(Family, EvalReport)>> {
    config
        .eval
        .classifiers
        .iter()
        .map(|&family| {
            let grid = config.eval.grid(family)?;
            let report = nested_cv(source, labels, grid, config.eval.k_outer, config.eval.k_inner, eval_seed(config.seed))?;
            Ok((family, report))
        })
        .collect()
}

pub fn grid_rows(mode: Mode, reports: &[(Family, EvalReport)]) -> Vec<GridRow> {
    reports
        .iter()
        .map(|(f, r)| GridRow { method: mode.label().into(), classifier: f.name().into(), aggregate: r.aggregate.clone() })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationPoint {
    pub classifier: Family,
    pub fraction: f64,
    pub train_size: usize,
    pub test_size: usize,
    pub metrics: Metrics,
}

/// Training-pool subsets, one per fraction of the whole cohort. Each class
/// of the pool is shuffled once and subsets take prefixes of it, so smaller
/// subsets are nested in larger ones.
pub fn nested_subsets(labels: &[u8], pool: &[usize], fractions: &[f64], total: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut rng = substream(seed, "ablation.order");
    let mut by_class = [Vec::new(), Vec::new()];
    for &i in pool {
        by_class[labels[i] as usize].push(i);
    }
    by_class.iter_mut().for_each(|c| c.shuffle(&mut rng));
    fractions
        .iter()
        .map(|&f| {
            let want = (f * total as f64).round() as usize;
            if !(f > 0.0) || want > pool.len() {
                bail!(Error::Config(format!("training fraction {f} needs {want} patients; the pool holds {}", pool.len())));
            }
            // Class counts by largest remainder, proportional to the pool.
            let quota: Vec<f64> = by_class.iter().map(|c| c.len() as f64 * want as f64 / pool.len() as f64).collect();
            let mut take: Vec<usize> = quota.iter().map(|q| q.floor() as usize).collect();
            if take.iter().sum::<usize>() < want {
                let c = if quota[0] - quota[0].floor() >= quota[1] - quota[1].floor() { 0 } else { 1 };
                take[c] += 1;
            }
            let mut rows: Vec<usize> = by_class.iter().zip(&take).flat_map(|(c, &k)| c[..k].iter().copied()).collect();
            rows.sort_unstable();
            Ok(rows)
        })
        .collect()
}

/// Fixed stratified test split; each fraction trains on a nested subset of
/// the remaining pool with inner-CV model selection.
pub fn ablate(config: &RunConfig, source: &FeatureSource, labels: &[u8]) -> Result<Vec<AblationPoint>> {
    let a = &config.ablation;
    let (pool, test) = holdout_split(labels, a.test_fraction, subseed(config.seed, "ablation.holdout"))?;
    let subsets = nested_subsets(labels, &pool, &a.fractions, labels.len(), config.seed)?;
    let mut out = Vec::new();
    for &family in &config.eval.classifiers {
        let grid = config.eval.grid(family)?;
        for (k, (rows, &fraction)) in subsets.iter().zip(&a.fractions).enumerate() {
            let (result, _) =
                evaluate_split(source, labels, grid, rows, &test, config.eval.k_inner, subseed(config.seed, &format!("ablation.fraction{k}")))?;
            out.push(AblationPoint { classifier: family, fraction, train_size: rows.len(), test_size: test.len(), metrics: result.metrics });
        }
    }
    Ok(out)
}

/// Mean and sample sd over several aggregates' means, e.g. across seeds.
pub fn across(aggregates: &[Aggregate]) -> Aggregate {
    Aggregate::of(&aggregates.iter().map(|a| a.mean).collect::<Vec<_>>())
}
