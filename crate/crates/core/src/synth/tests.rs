use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::classifiers::{LogisticConfig, LogisticModel};
use crate::eval::{auroc, holdout_split};
use crate::transfer::{align_vocabulary, DEFAULT_COVERAGE_FLOOR};

fn small_pair(n_target: usize, shared: usize, seed: u64) -> (SynthCohort, SynthCohort, GenerationManifest) {
    let pre = CohortSpec { n_patients: 300, d_diag: 200, ..CohortSpec::pretrain_default() };
    let tgt = CohortSpec { n_patients: n_target, d_diag: 200, ..CohortSpec::target_default() };
    generate_pair(&pre, &tgt, shared, seed).unwrap()
}

#[test]
fn target_prevalence_is_met() {
    let (pre, tgt, m) = small_pair(510, 3, 1);
    let pos = tgt.labels.iter().filter(|(_, y)| *y == 1).count();
    assert!((pos as i64 - 107).abs() <= 5, "{pos}");
    assert!((m.realized_prevalence[0] - 0.3).abs() <= 0.01);
    assert_eq!(pre.diagnoses.rows.len(), 300);
    assert!(matches!(
        generate_pair(&CohortSpec { prevalence: 0.001, n_patients: 100, ..Default::default() }, &CohortSpec::default(), 2, 0),
        Err(Error::DegenerateTask(_))
    ));
    assert!(generate_pair(&CohortSpec::default(), &CohortSpec::default(), 7, 0).is_err());
}

#[test]
fn same_seed_same_files() {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let (pre, tgt, _) = small_pair(120, 2, 5);
        pre.write(&d.path().join("pre")).unwrap();
        tgt.write(&d.path().join("tgt")).unwrap();
    }
    for sub in ["pre", "tgt"] {
        for f in [DIAGNOSES_FILE, BASELINE_FILE, LABELS_FILE] {
            let a = std::fs::read(dirs[0].path().join(sub).join(f)).unwrap();
            let b = std::fs::read(dirs[1].path().join(sub).join(f)).unwrap();
            assert_eq!(a, b, "{sub}/{f}");
        }
    }
    assert_ne!(small_pair(120, 2, 6).1, small_pair(120, 2, 5).1);
}

#[test]
fn vocabulary_overlap_matches_the_requested_share() {
    let (pre, tgt, m) = small_pair(50, 2, 2);
    let al = align_vocabulary(&pre.diagnoses.feature_names, &tgt.diagnoses.feature_names, DEFAULT_COVERAGE_FLOOR).unwrap();
    assert!((al.matched.len() as f64 - 0.977 * 200.0).abs() <= 1.0);
    assert_eq!(al.matched, m.shared_features);
    assert_eq!(al.coverage, m.coverage);
}

#[test]
fn features_are_sparse() {
    let (pre, tgt, _) = small_pair(400, 3, 3);
    for c in [&pre, &tgt] {
        let q = c.mean_feature_prevalence();
        assert!((q - 0.05).abs() < 0.015, "{q}");
    }
}

#[test]
fn missingness_rates_and_guard() {
    let table = |n: usize, d: usize| BaselineTable {
        feature_names: (0..d).map(|k| format!("b{k}")).collect(),
        rows: (0..n).map(|i| (format!("p{i}"), (0..d).map(|k| Some((i * d + k) as f64)).collect())).collect(),
    };
    let mut t = table(510, 53);
    let before = t.clone();
    inject_missingness(&mut t, 0.0, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(t, before);
    inject_missingness(&mut t, 0.1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let missing = t.rows.iter().flat_map(|(_, r)| r).filter(|v| v.is_none()).count() as f64 / (510.0 * 53.0);
    assert!((missing - 0.1).abs() <= 0.01, "{missing}");

    let mut t = table(3, 40);
    inject_missingness(&mut t, 0.95, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    for c in 0..40 {
        assert!(t.rows.iter().any(|(_, r)| r[c].is_some()));
    }
    assert!(inject_missingness(&mut t, 1.0, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
}

#[test]
fn labels_are_recoverable_from_the_latents() {
    for seed in 0..5 {
        let (_, tgt, _) = small_pair(600, 3, 10 + seed);
        let y: Vec<u8> = tgt.labels.iter().map(|(_, y)| *y).collect();
        let (train, test) = holdout_split(&y, 0.3, seed).unwrap();
        let pick = |rows: &[usize]| -> (Vec<Vec<f64>>, Vec<u8>) {
            (rows.iter().map(|&i| tgt.latents[i].clone()).collect(), rows.iter().map(|&i| y[i]).collect())
        };
        let (xt, yt) = pick(&train);
        let (xs, ys) = pick(&test);
        let m = LogisticModel::fit(&xt, &yt, &LogisticConfig { l2: 0.1, ..Default::default() }).unwrap();
        let a = auroc(&m.predict_proba(&xs), &ys).unwrap();
        assert!(a >= 0.85, "seed {seed}: {a}");
    }
}

