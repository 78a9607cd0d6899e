use rand::Rng;
use serde::{Deserialize, Serialize};

use super::check_xy;
use super::tree::{grow, share, Columns, DecisionTree};
use crate::error::{Error, Result};
use crate::rng::{substream, subseed};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Share of features drawn per split; `None` is `√d / d`.
    pub feature_frac: Option<f64>,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self { n_trees: 100, max_depth: 8, feature_frac: None, bootstrap: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub trees: Vec<DecisionTree>,
    pub tree_seeds: Vec<u64>,
}

impl RandomForestModel {
    pub fn fit(x: &[Vec<f64>], y: &[u8], config: &ForestConfig, seed: u64) -> Result<Self> {
        let d = check_xy(x, y)?;
        if config.max_depth < 1 {
            return Err(Error::Config("max_depth must be at least 1".into()));
        }
        if config.n_trees < 1 {
            return Err(Error::Config("a forest needs at least one tree".into()));
        }
        let per_split = match config.feature_frac {
            None => (d as f64).sqrt().round() as usize,
            Some(f) if f > 0.0 && f <= 1.0 => (f * d as f64).round() as usize,
            Some(f) => return Err(Error::Config(format!("feature_frac {f} outside (0, 1]"))),
        }
        .clamp(1, d);
        let cols = Columns::new(x);
        let target: Vec<f64> = y.iter().map(|&v| v as f64).collect();
        let n = y.len();
        let mut trees = Vec::with_capacity(config.n_trees);
        let mut tree_seeds = Vec::with_capacity(config.n_trees);
        for t in 0..config.n_trees {
            let tree_seed = subseed(seed, &format!("forest.tree{t}"));
            let mut rng = substream(tree_seed, "tree");
            let mut weight = vec![0.0; n];
            if config.bootstrap {
                for _ in 0..n {
                    weight[rng.random_range(0..n)] += 1.0;
                }
            } else {
                weight.fill(1.0);
            }
            let leaf = |m: &[usize]| share(&target, &weight, m);
            trees.push(grow(&cols, &target, &weight, &leaf, config.max_depth, Some((per_split, &mut rng))));
            tree_seeds.push(tree_seed);
        }
        Ok(Self { trees, tree_seeds })
    }

    /// Mean of the per-tree leaf probabilities.
    pub fn predict_proba(&self, x: &[Vec<f64>]) -> Vec<f64> {
        let k = self.trees.len() as f64;
        x.iter().map(|r| self.trees.iter().map(|t| t.predict_row(r)).sum::<f64>() / k).collect()
    }
}
