use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::classifiers::{ClassifierConfig, Family, LogisticConfig};
use crate::rng::subseed;
use crate::transfer::FeatureSource;

fn noise_source(seed: u64, n: usize, d: usize, signal: f64) -> (FeatureSource, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<u8> = (0..n).map(|i| (i % 2) as u8).collect();
    let baseline = labels
        .iter()
        .map(|&y| (0..d).map(|k| rng.random_bool(0.9).then(|| rng.random_range(0.0..1.0) + if k == 0 { signal * y as f64 } else { 0.0 })).collect())
        .collect();
    let source = FeatureSource {
        baseline_names: (0..d).map(|k| format!("b{k}")).collect(),
        baseline,
        extra_names: vec![],
        extra: vec![vec![]; n],
    };
    (source, labels)
}

fn lr(l2: f64) -> ClassifierConfig {
    ClassifierConfig::Logistic(LogisticConfig { l2, epochs: 300, ..Default::default() })
}

#[test]
fn random_features_score_near_chance() {
    for seed in 0..10 {
        let (source, labels) = noise_source(seed, 400, 4, 0.0);
        let report = nested_cv(&source, &labels, &[lr(1.0)], 5, 3, seed).unwrap();
        let a = report.aggregate.mean.auroc;
        assert!((a - 0.5).abs() <= 0.08, "seed {seed}: {a}");
    }
}

#[test]
fn five_stratified_outer_folds_and_recomputable_aggregate() {
    let (source, labels) = noise_source(1, 103, 3, 1.0);
    let grid = [lr(0.1), lr(10.0)];
    let report = nested_cv(&source, &labels, &grid, OUTER_FOLDS, INNER_FOLDS, 4).unwrap();
    assert_eq!(report.folds.len(), 5);
    let pos = labels.iter().filter(|&&y| y == 1).count() as f64;
    for f in &report.folds {
        assert!((f.test_positives as f64 - pos / 5.0).abs() <= 1.0);
        assert_eq!(f.inner_auroc.len(), 2);
        assert_eq!(f.train_size + f.test_size, 103);
    }
    let again = Aggregate::of(&report.folds.iter().map(|f| f.metrics).collect::<Vec<_>>());
    assert_eq!(again, report.aggregate);
    assert!(report.predictions.iter().all(|p| p.is_finite()));
    assert_eq!(nested_cv(&source, &labels, &grid, 5, 3, 4).unwrap(), report);
    assert!(report.aggregate.mean.auroc > 0.7);
}

#[test]
fn single_entry_grid_is_plain_cross_validation() {
    let (source, labels) = noise_source(2, 80, 3, 0.5);
    let report = nested_cv(&source, &labels, &[lr(1.0)], 5, 3, 7).unwrap();
    let plan = stratified_kfold(&labels, 5, subseed(7, "outer-folds")).unwrap();
    for f in 0..5 {
        let (train, test) = plan.split(f);
        let probs = fit_and_score(&source, &labels, &lr(1.0), &train, &test, 0).unwrap();
        let y: Vec<u8> = test.iter().map(|&i| labels[i]).collect();
        assert_eq!(report.folds[f].metrics, Metrics::compute(&probs, &y).unwrap());
        assert!(report.folds[f].inner_auroc.is_empty());
    }
}

#[test]
fn inner_degeneracy_names_the_fold() {
    let (source, mut labels) = noise_source(3, 40, 2, 0.0);
    labels.iter_mut().enumerate().for_each(|(i, y)| *y = (i < 5) as u8);
    let err = nested_cv(&source, &labels, &[lr(1.0), lr(2.0)], 5, 5, 0).unwrap_err().to_string();
    assert!(err.contains("outer fold"), "{err}");
    assert!(nested_cv(&source, &labels, &[], 5, 3, 0).is_err());
}

#[test]
fn table_has_one_line_per_cell() {
    let (source, labels) = noise_source(5, 60, 2, 1.0);
    let mut rows = Vec::new();
    for method in ["From Scratch", "Supervised", "Unsupervised"] {
        for family in Family::ALL {
            let report = nested_cv(&source, &labels, &[lr(1.0)], 5, 3, 1).unwrap();
            rows.push(GridRow { method: method.into(), classifier: family.name().into(), aggregate: report.aggregate });
        }
    }
    let table = render_table(&rows);
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 11);
    assert!(lines[0].starts_with("Method") && lines[0].ends_with("PR-AUC"));
    assert_eq!(lines[2].matches('±').count(), 4);
    let col = lines[0].find("AUROC").unwrap();
    assert!(lines[2..].iter().all(|l| l.char_indices().nth(col).is_some()));
}
