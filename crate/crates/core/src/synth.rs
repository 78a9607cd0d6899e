//! Seeded paired cohorts with shared latent structure.
//!
//! Latent factors split into three groups: shared by both cohorts,
//! pre-training only and target only. Every diagnostic feature has sparse
//! loadings and is drawn as `Bernoulli(sigmoid(a·z + c))` from the factors
//! active in the patient's cohort, with the bias `c` calibrated per cohort to
//! the feature's rate. Features present in both vocabularies keep their
//! loadings, so co-occurrence learned on one cohort carries over to the other.
//! Pre-training labels follow a linear rule over the shared and
//! pre-training-only factors; target labels follow a perturbed copy of the
//! shared part of that rule (or target-only factors when nothing is shared).

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{write_baseline, write_binary_matrix, write_labels, BaselineTable, BinaryMatrix};
use crate::rng::{substream, StreamRng};
use crate::transfer::{BASELINE_FILE, DIAGNOSES_FILE, LABELS_FILE};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub n_patients: usize,
    pub d_diag: usize,
    pub d_baseline: usize,
    pub n_latent: usize,
    /// Chance that a feature loads on a given factor.
    pub loading_density: f64,
    pub loading_scale: f64,
    /// Positive share, met exactly by thresholding the label score.
    pub prevalence: f64,
    /// Share of this vocabulary also present in the partner cohort. Only the
    /// target cohort's value is used.
    pub overlap: f64,
    pub missingness: f64,
    /// Mean Bernoulli rate of a diagnostic feature.
    pub feature_prevalence: f64,
    /// Per-feature rates are log-uniform over `[q/r, q·r]` for this `r ≥ 1`,
    /// rescaled so their mean is `q`.
    pub rate_spread: f64,
    /// Standard deviation of the noise added to the label score.
    pub label_noise: f64,
    /// Standard deviation of the noise added to the shared label weights to
    /// form the target rule. Only the target cohort's value is used.
    pub rule_perturbation: f64,
    /// Weight of the latent part of each baseline column.
    pub baseline_signal: f64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_patients: 510,
            d_diag: 800,
            d_baseline: 12,
            n_latent: 6,
            loading_density: 0.1,
            loading_scale: 0.5,
            prevalence: 0.21,
            overlap: 0.977,
            missingness: 0.1,
            feature_prevalence: 0.05,
            rate_spread: 10.0,
            label_noise: 0.3,
            rule_perturbation: 0.25,
            baseline_signal: 0.2,
        }
    }
}

impl CohortSpec {
    pub fn pretrain_default() -> Self {
        Self { n_patients: 4000, prevalence: 0.3, ..Self::default() }
    }

    pub fn target_default() -> Self {
        Self { n_patients: 400, ..Self::default() }
    }

    fn validate(&self, which: &str) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("{which} cohort: {m}")));
        if self.n_patients < 2 || self.d_diag == 0 {
            return fail("needs at least two patients and one diagnostic feature".into());
        }
        if !(self.prevalence > 0.0 && self.prevalence < 1.0) {
            return fail(format!("prevalence {} outside (0, 1)", self.prevalence));
        }
        if !(self.overlap > 0.0 && self.overlap <= 1.0) {
            return fail(format!("overlap {} outside (0, 1]", self.overlap));
        }
        if self.d_diag < self.n_latent {
            return fail(format!("d_diag {} below n_latent {}", self.d_diag, self.n_latent));
        }
        if !(0.0..1.0).contains(&self.missingness) {
            return fail(format!("missingness {} outside [0, 1)", self.missingness));
        }
        if !(self.feature_prevalence > 0.0 && self.feature_prevalence < 1.0) {
            return fail(format!("feature prevalence {} outside (0, 1)", self.feature_prevalence));
        }
        if !(self.rate_spread >= 1.0) {
            return fail(format!("rate spread {} below 1", self.rate_spread));
        }
        if !(0.0..=1.0).contains(&self.loading_density) || self.loading_scale < 0.0 || self.label_noise < 0.0 {
            return fail("loading density, loading scale and label noise must be nonnegative".into());
        }
        Ok(())
    }
}

/// One generated cohort. Latent factor values are kept for checks but never
/// written out.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthCohort {
    pub diagnoses: BinaryMatrix,
    pub baseline: BaselineTable,
    pub labels: Vec<(String, u8)>,
    /// Per patient, the values of all global factors (zero where inactive).
    pub latents: Vec<Vec<f64>>,
}

impl SynthCohort {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_binary_matrix(&dir.join(DIAGNOSES_FILE), &self.diagnoses)?;
        write_baseline(&dir.join(BASELINE_FILE), &self.baseline)?;
        write_labels(&dir.join(LABELS_FILE), &self.labels)
    }

    pub fn positive_share(&self) -> f64 {
        self.labels.iter().filter(|(_, y)| *y == 1).count() as f64 / self.labels.len() as f64
    }

    pub fn mean_feature_prevalence(&self) -> f64 {
        let ones: usize = self.diagnoses.rows.iter().map(|(_, r)| r.iter().filter(|&&v| v == 1).count()).sum();
        ones as f64 / (self.diagnoses.rows.len() * self.diagnoses.feature_names.len()) as f64
    }

    pub fn missing_fraction(&self) -> f64 {
        let cells = self.baseline.rows.len() * self.baseline.feature_names.len();
        let missing: usize = self.baseline.rows.iter().map(|(_, r)| r.iter().filter(|v| v.is_none()).count()).sum();
        if cells == 0 {
            0.0
        } else {
            missing as f64 / cells as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationManifest {
    pub seed: u64,
    pub shared_latent: usize,
    pub pretrain: CohortSpec,
    pub target: CohortSpec,
    pub realized_prevalence: [f64; 2],
    pub realized_feature_prevalence: [f64; 2],
    pub realized_missingness: [f64; 2],
    /// Target features also in the pre-training vocabulary.
    pub shared_features: Vec<String>,
    pub coverage: f64,
}

struct Feature {
    loadings: Vec<(usize, f64)>,
    rate: f64,
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `E[σ(c + sε)]` for standard normal `ε`, by midpoint quadrature on ±8σ.
fn mean_sigmoid(c: f64, s: f64) -> f64 {
    const STEPS: usize = 200;
    let h = 16.0 / STEPS as f64;
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    (0..STEPS)
        .map(|i| {
            let e = -8.0 + (i as f64 + 0.5) * h;
            norm * (-0.5 * e * e).exp() * sigmoid(c + s * e) * h
        })
        .sum()
}

/// Bias `c` with `E[σ(c + sε)] = rate`, by bisection.
fn calibrate_bias(rate: f64, s: f64) -> f64 {
    if s == 0.0 {
        return logit(rate);
    }
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if mean_sigmoid(mid, s) < rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Sparse loadings over `factors` and a target mean rate.
fn draw_feature(rng: &mut StreamRng, factors: &[usize], spec: &CohortSpec) -> Feature {
    let picked: Vec<usize> = factors.iter().copied().filter(|_| rng.random_bool(spec.loading_density)).collect();
    let loadings: Vec<(usize, f64)> = picked.into_iter().map(|k| (k, spec.loading_scale * normal(rng))).collect();
    let r = spec.rate_spread;
    let u = if r > 1.0 { rng.random_range(-r.ln()..r.ln()) } else { 0.0 };
    // Mean of a log-uniform variable on [q/r, qr] is q(r − 1/r)/(2 ln r).
    let mean_factor = if r > 1.0 { (r - 1.0 / r) / (2.0 * r.ln()) } else { 1.0 };
    let rate = (spec.feature_prevalence / mean_factor * u.exp()).min(0.95);
    Feature { loadings, rate }
}

impl Feature {
    /// Bias meeting the feature's rate when only `active` factors vary.
    fn bias(&self, active: &[bool]) -> f64 {
        let s2: f64 = self.loadings.iter().filter(|(k, _)| active[*k]).map(|(_, a)| a * a).sum();
        calibrate_bias(self.rate, s2.sqrt())
    }
}

struct CohortPlan<'a> {
    name: &'static str,
    id_prefix: &'static str,
    spec: &'a CohortSpec,
    active: Vec<usize>,
    /// Factors behind the baseline columns.
    baseline_factors: Vec<usize>,
    features: Vec<usize>,
    label_weights: Vec<(usize, f64)>,
}

fn quantile_labels(scores: &[f64], prevalence: f64) -> Result<Vec<u8>> {
    let n = scores.len();
    let k = (prevalence * n as f64).round() as usize;
    if k == 0 || k == n {
        return Err(Error::DegenerateTask(format!("prevalence {prevalence} gives {k} positives out of {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut y = vec![0; n];
    order[..k].iter().for_each(|&i| y[i] = 1);
    Ok(y)
}

fn generate_cohort(plan: &CohortPlan, universe: &[Feature], names: &[String], factors: usize, seed: u64) -> Result<SynthCohort> {
    let spec = plan.spec;
    let mut brng = substream(seed, &format!("{}.baseline-loadings", plan.name));
    let baseline_loadings: Vec<Vec<(usize, f64)>> = (0..spec.d_baseline)
        .map(|_| {
            let picked: Vec<usize> = plan.baseline_factors.iter().copied().filter(|_| brng.random_bool(0.5)).collect();
            picked.into_iter().map(|k| (k, normal(&mut brng))).collect()
        })
        .collect();
    let mut is_active = vec![false; factors];
    plan.active.iter().for_each(|&k| is_active[k] = true);
    let biases: Vec<f64> = plan.features.iter().map(|&j| universe[j].bias(&is_active)).collect();
    let n = spec.n_patients;
    let mut latents = Vec::with_capacity(n);
    let mut rows = Vec::with_capacity(n);
    let mut baseline_rows = Vec::with_capacity(n);
    let mut scores = Vec::with_capacity(n);
    let ids: Vec<String> = (0..n).map(|i| format!("{}{i:05}", plan.id_prefix)).collect();
    for (i, id) in ids.iter().enumerate() {
        let mut rng = substream(seed, &format!("{}.patient{i}", plan.name));
        let mut z = vec![0.0; factors];
        plan.active.iter().for_each(|&k| z[k] = normal(&mut rng));
        let row: Vec<u8> = plan
            .features
            .iter()
            .zip(&biases)
            .map(|(&j, &c)| {
                let eta = c + universe[j].loadings.iter().map(|&(k, a)| a * z[k]).sum::<f64>();
                rng.random_bool(sigmoid(eta)) as u8
            })
            .collect();
        let b: Vec<Option<f64>> = baseline_loadings
            .iter()
            .map(|l| Some(spec.baseline_signal * l.iter().map(|&(k, a)| a * z[k]).sum::<f64>() + normal(&mut rng)))
            .collect();
        scores.push(plan.label_weights.iter().map(|&(k, w)| w * z[k]).sum::<f64>() + spec.label_noise * normal(&mut rng));
        rows.push((id.clone(), row));
        baseline_rows.push((id.clone(), b));
        latents.push(z);
    }
    let y = quantile_labels(&scores, spec.prevalence)?;
    let mut baseline = BaselineTable { feature_names: (0..spec.d_baseline).map(|k| format!("base{k:02}")).collect(), rows: baseline_rows };
    inject_missingness(&mut baseline, spec.missingness, &mut substream(seed, &format!("{}.missingness", plan.name)))?;
    Ok(SynthCohort {
        diagnoses: BinaryMatrix { feature_names: plan.features.iter().map(|&j| names[j].clone()).collect(), rows },
        baseline,
        labels: ids.into_iter().zip(y).collect(),
        latents,
    })
}

/// Generates a pre-training cohort and a target cohort.
pub fn generate_pair(
    pretrain: &CohortSpec,
    target: &CohortSpec,
    shared_latent: usize,
    seed: u64,
) -> Result<(SynthCohort, SynthCohort, GenerationManifest)> {
    pretrain.validate("pre-training")?;
    target.validate("target")?;
    if shared_latent > pretrain.n_latent || shared_latent > target.n_latent {
        return Err(Error::Config(format!(
            "shared_latent {shared_latent} exceeds a cohort's n_latent ({} / {})",
            pretrain.n_latent, target.n_latent
        )));
    }
    if shared_latent == 0 && target.n_latent == 0 {
        return Err(Error::Config("target labels need at least one latent factor".into()));
    }
    let n_shared_features = (target.overlap * target.d_diag as f64).round() as usize;
    if n_shared_features > pretrain.d_diag {
        return Err(Error::Config(format!(
            "{n_shared_features} shared features exceed the pre-training vocabulary of {}",
            pretrain.d_diag
        )));
    }

    let s = shared_latent;
    let p_only = pretrain.n_latent - s;
    let factors = pretrain.n_latent + target.n_latent - s;
    let pre_active: Vec<usize> = (0..s + p_only).collect();
    let tgt_active: Vec<usize> = (0..s).chain(s + p_only..factors).collect();

    let mut frng = substream(seed, "features");
    let d_universe = pretrain.d_diag + target.d_diag - n_shared_features;
    let universe: Vec<Feature> = (0..d_universe)
        .map(|j| {
            if j < pretrain.d_diag {
                draw_feature(&mut frng, &pre_active, pretrain)
            } else {
                draw_feature(&mut frng, &tgt_active, target)
            }
        })
        .collect();
    let names: Vec<String> = (0..d_universe).map(|j| format!("dx{j:05}")).collect();
    let mut target_features = sample(&mut frng, pretrain.d_diag, n_shared_features).into_vec();
    target_features.extend(pretrain.d_diag..d_universe);
    target_features.sort_unstable();

    let mut wrng = substream(seed, "label-weights");
    let beta: Vec<(usize, f64)> = pre_active.iter().map(|&k| (k, normal(&mut wrng))).collect();
    let gamma: Vec<(usize, f64)> = if s > 0 {
        beta[..s].iter().map(|&(k, b)| (k, b + target.rule_perturbation * normal(&mut wrng))).collect()
    } else {
        tgt_active.iter().map(|&k| (k, normal(&mut wrng))).collect()
    };

    let pre_plan = CohortPlan {
        name: "pretrain",
        id_prefix: "P",
        spec: pretrain,
        active: pre_active,
        baseline_factors: (0..s).collect(),
        features: (0..pretrain.d_diag).collect(),
        label_weights: beta,
    };
    let tgt_plan = CohortPlan { name: "target", id_prefix: "T", spec: target, active: tgt_active, baseline_factors: (0..s).collect(), features: target_features, label_weights: gamma };
    let pre = generate_cohort(&pre_plan, &universe, &names, factors, seed)?;
    let tgt = generate_cohort(&tgt_plan, &universe, &names, factors, seed)?;

    let shared_features: Vec<String> =
        tgt_plan.features.iter().filter(|&&j| j < pretrain.d_diag).map(|&j| names[j].clone()).collect();
    let manifest = GenerationManifest {
        seed,
        shared_latent,
        pretrain: *pretrain,
        target: *target,
        realized_prevalence: [pre.positive_share(), tgt.positive_share()],
        realized_feature_prevalence: [pre.mean_feature_prevalence(), tgt.mean_feature_prevalence()],
        realized_missingness: [pre.missing_fraction(), tgt.missing_fraction()],
        coverage: shared_features.len() as f64 / target.d_diag as f64,
        shared_features,
    };
    Ok((pre, tgt, manifest))
}

/// Erases each cell independently with probability `rate`. A column left
/// with no observed value has its mask redrawn.
pub fn inject_missingness(table: &mut BaselineTable, rate: f64, rng: &mut StreamRng) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("missingness rate {rate} outside [0, 1)")));
    }
    if rate == 0.0 || table.rows.is_empty() {
        return Ok(());
    }
    for c in 0..table.feature_names.len() {
        let observed = table.rows.iter().filter(|(_, r)| r[c].is_some()).count();
        if observed == 0 {
            continue;
        }
        let mask = loop {
            let mask: Vec<bool> = table.rows.iter().map(|_| rng.random_bool(rate)).collect();
            if table.rows.iter().zip(&mask).any(|((_, r), &m)| r[c].is_some() && !m) {
                break mask;
            }
        };
        for ((_, r), m) in table.rows.iter_mut().zip(mask) {
            if m {
                r[c] = None;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
