//! Moving a frozen encoder onto a target cohort.
//!
//! Target diagnostic columns are matched to the encoder vocabulary by exact
//! name; unmatched columns are dropped. Baseline columns are median-imputed
//! and min–max scaled with statistics fitted on training rows only. The
//! final representation is the preprocessed baseline followed by either the
//! patient's hyperedge embedding or, from scratch, the raw diagnostic vector.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderState;
use crate::error::{Error, Result};
use crate::hypergraph::Hypergraph;
use crate::io::{check_same_patients, read_baseline, read_binary_matrix, read_labels, BaselineTable, BinaryMatrix};
use crate::scalar::Real;

pub const DEFAULT_COVERAGE_FLOOR: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabularyAlignment {
    /// `(target column, encoder node id)` for every matched name, in target order.
    pub mapping: Vec<(usize, usize)>,
    pub matched: Vec<String>,
    pub dropped: Vec<String>,
    /// Matched share of the target vocabulary.
    pub coverage: f64,
}

pub fn align_vocabulary(node_labels: &[String], target: &[String], floor: f64) -> Result<VocabularyAlignment> {
    let index: HashMap<&str, usize> = node_labels.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let (mut mapping, mut matched, mut dropped) = (Vec::new(), Vec::new(), Vec::new());
    for (c, name) in target.iter().enumerate() {
        match index.get(name.as_str()) {
            Some(&v) => {
                mapping.push((c, v));
                matched.push(name.clone());
            }
            None => dropped.push(name.clone()),
        }
    }
    let coverage = if target.is_empty() { 0.0 } else { mapping.len() as f64 / target.len() as f64 };
    if coverage < floor {
        return Err(Error::VocabularyMismatch { coverage, floor });
    }
    Ok(VocabularyAlignment { mapping, matched, dropped, coverage })
}

/// Per-column median imputation followed by min–max scaling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineTransform {
    pub medians: Vec<f64>,
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

impl BaselineTransform {
    pub fn fit(rows: &[&[Option<f64>]], names: &[String]) -> Result<Self> {
        let d = names.len();
        let (mut medians, mut mins, mut maxs) = (Vec::with_capacity(d), Vec::with_capacity(d), Vec::with_capacity(d));
        for c in 0..d {
            let mut observed: Vec<f64> = rows.iter().filter_map(|r| r[c]).collect();
            if observed.is_empty() {
                return Err(Error::Invalid(format!("baseline column {:?} has no observed value in the fitting rows", names[c])));
            }
            let med = median(&mut observed);
            // Imputed cells equal the median, which lies inside the observed range.
            medians.push(med);
            mins.push(observed[0]);
            maxs.push(observed[observed.len() - 1]);
        }
        Ok(Self { medians, mins, maxs })
    }

    pub fn apply_row(&self, row: &[Option<f64>]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(c, v)| {
                let x = v.unwrap_or(self.medians[c]);
                let range = self.maxs[c] - self.mins[c];
                if range > 0.0 {
                    (x - self.mins[c]) / range
                } else {
                    0.0
                }
            })
            .collect()
    }
}

/// Fits on all rows and returns the transformed matrix with the transform.
pub fn preprocess_baseline(table: &BaselineTable) -> Result<(Vec<Vec<f64>>, BaselineTransform)> {
    let rows: Vec<&[Option<f64>]> = table.rows.iter().map(|(_, r)| r.as_slice()).collect();
    let t = BaselineTransform::fit(&rows, &table.feature_names)?;
    Ok((rows.iter().map(|r| t.apply_row(r)).collect(), t))
}

/// Baseline, diagnoses and labels of one cohort, row-aligned by patient.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetCohort {
    pub baseline: BaselineTable,
    pub diagnoses: BinaryMatrix,
    pub labels: Vec<u8>,
}

pub const BASELINE_FILE: &str = "baseline.csv";
pub const DIAGNOSES_FILE: &str = "diagnoses.csv";
pub const LABELS_FILE: &str = "labels.csv";

impl TargetCohort {
    pub fn new(baseline: BaselineTable, diagnoses: BinaryMatrix, labels: Vec<(String, u8)>) -> Result<Self> {
        let ids = diagnoses.ids();
        check_same_patients(BASELINE_FILE, &ids, &baseline.ids())?;
        let label_ids: Vec<String> = labels.iter().map(|(id, _)| id.clone()).collect();
        check_same_patients(LABELS_FILE, &ids, &label_ids)?;
        Ok(Self { baseline, diagnoses, labels: labels.into_iter().map(|(_, y)| y).collect() })
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Self::new(
            read_baseline(&dir.join(BASELINE_FILE))?,
            read_binary_matrix(&dir.join(DIAGNOSES_FILE))?,
            read_labels(&dir.join(LABELS_FILE))?,
        )
    }

    pub fn ids(&self) -> Vec<String> {
        self.diagnoses.ids()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Subset of patients, in the given order.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            baseline: BaselineTable {
                feature_names: self.baseline.feature_names.clone(),
                rows: rows.iter().map(|&i| self.baseline.rows[i].clone()).collect(),
            },
            diagnoses: BinaryMatrix {
                feature_names: self.diagnoses.feature_names.clone(),
                rows: rows.iter().map(|&i| self.diagnoses.rows[i].clone()).collect(),
            },
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Hyperedge embeddings of a target cohort.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferEmbeddings {
    pub ids: Vec<String>,
    pub embeddings: Vec<Vec<f64>>,
    /// Patients without any aligned diagnosis; their embedding is zero.
    pub zero_flagged: Vec<String>,
}

/// Encodes every target patient over the aligned vocabulary. Patients with
/// no aligned diagnosis get a zero vector and are flagged.
pub fn extract_embeddings<T: Real>(
    state: &EncoderState<T>,
    alignment: &VocabularyAlignment,
    diagnoses: &BinaryMatrix,
) -> Result<TransferEmbeddings> {
    let d = state.encoder.config().d_hi;
    let mut edges = Vec::new();
    let mut slot = Vec::with_capacity(diagnoses.rows.len());
    let mut zero_flagged = Vec::new();
    for (id, row) in &diagnoses.rows {
        let members: Vec<usize> = alignment.mapping.iter().filter(|&&(c, _)| row[c] == 1).map(|&(_, v)| v).collect();
        if members.is_empty() {
            slot.push(None);
            zero_flagged.push(id.clone());
        } else {
            slot.push(Some(edges.len()));
            edges.push((id.clone(), members));
        }
    }
    let table = if edges.is_empty() {
        None
    } else {
        let hg = Hypergraph::from_edge_lists(state.encoder.node_labels().to_vec(), edges)?;
        Some(state.embed_edges(&hg)?)
    };
    let embeddings = slot
        .iter()
        .map(|s| match (s, &table) {
            (Some(e), Some(t)) => t.row(*e).iter().map(|x| x.as_f64()).collect(),
            _ => vec![0.0; d],
        })
        .collect();
    Ok(TransferEmbeddings { ids: diagnoses.ids(), embeddings, zero_flagged })
}

/// `preprocessed x_b ⊕ x_tr` for every patient, with a transform fitted elsewhere.
pub fn extract_and_concat<T: Real>(
    state: &EncoderState<T>,
    alignment: &VocabularyAlignment,
    cohort: &TargetCohort,
    transform: &BaselineTransform,
) -> Result<Vec<Vec<f64>>> {
    let emb = extract_embeddings(state, alignment, &cohort.diagnoses)?;
    Ok(cohort
        .baseline
        .rows
        .iter()
        .zip(emb.embeddings)
        .map(|((_, b), z)| {
            let mut x = transform.apply_row(b);
            x.extend(z);
            x
        })
        .collect())
}

/// Raw baseline columns plus fixed extra columns (an embedding or the
/// diagnostic vector). Baseline preprocessing is fitted per split.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSource {
    pub baseline_names: Vec<String>,
    pub baseline: Vec<Vec<Option<f64>>>,
    pub extra_names: Vec<String>,
    pub extra: Vec<Vec<f64>>,
}

impl FeatureSource {
    /// Baseline followed by the raw diagnostic vector.
    pub fn from_scratch(cohort: &TargetCohort) -> Self {
        Self {
            baseline_names: cohort.baseline.feature_names.clone(),
            baseline: cohort.baseline.rows.iter().map(|(_, r)| r.clone()).collect(),
            extra_names: cohort.diagnoses.feature_names.clone(),
            extra: cohort.diagnoses.rows.iter().map(|(_, r)| r.iter().map(|&v| v as f64).collect()).collect(),
        }
    }

    /// Baseline followed by hyperedge embeddings.
    pub fn with_embeddings(cohort: &TargetCohort, embeddings: &TransferEmbeddings) -> Self {
        let d = embeddings.embeddings.first().map_or(0, Vec::len);
        Self {
            baseline_names: cohort.baseline.feature_names.clone(),
            baseline: cohort.baseline.rows.iter().map(|(_, r)| r.clone()).collect(),
            extra_names: (0..d).map(|i| format!("z_{i}")).collect(),
            extra: embeddings.embeddings.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.baseline.len()
    }

    pub fn is_empty(&self) -> bool {
        self.baseline.is_empty()
    }

    pub fn width(&self) -> usize {
        self.baseline_names.len() + self.extra_names.len()
    }

    pub fn column_names(&self) -> Vec<String> {
        self.baseline_names.iter().chain(&self.extra_names).cloned().collect()
    }

    /// Feature matrices for `train` and `test` rows with preprocessing fitted
    /// on `train` only.
    pub fn split_matrices(&self, train: &[usize], test: &[usize]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, BaselineTransform)> {
        let fit_rows: Vec<&[Option<f64>]> = train.iter().map(|&i| self.baseline[i].as_slice()).collect();
        let transform = BaselineTransform::fit(&fit_rows, &self.baseline_names)?;
        let build = |rows: &[usize]| {
            rows.iter()
                .map(|&i| {
                    let mut x = transform.apply_row(&self.baseline[i]);
                    x.extend_from_slice(&self.extra[i]);
                    x
                })
                .collect()
        };
        Ok((build(train), build(test), transform))
    }
}
