//! Downstream binary classifiers over dense feature rows.

mod boost;
mod forest;
mod logistic;
mod tree;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use boost::{BoostConfig, GradientBoostModel};
pub use forest::{ForestConfig, RandomForestModel};
pub use logistic::{sigmoid, LogisticConfig, LogisticModel};
pub use tree::{DecisionTree, TreeNode};

/// Checks a design matrix and binary labels; returns the feature count.
pub(crate) fn check_xy(x: &[Vec<f64>], y: &[u8]) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::EmptySet("design matrix"));
    }
    if x.len() != y.len() {
        return Err(Error::Invalid(format!("{} rows for {} labels", x.len(), y.len())));
    }
    let d = x[0].len();
    for (i, row) in x.iter().enumerate() {
        if row.len() != d {
            return Err(Error::Invalid(format!("row {i} has {} features, expected {d}", row.len())));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "design matrix" });
        }
    }
    if y.iter().any(|&v| v > 1) {
        return Err(Error::Invalid("labels must be 0 or 1".into()));
    }
    if !y.contains(&0) || !y.contains(&1) {
        return Err(Error::DegenerateTask("training labels contain a single class".into()));
    }
    Ok(d)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "LR")]
    Logistic,
    #[serde(rename = "RF")]
    Forest,
    #[serde(rename = "GB")]
    Boost,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::Logistic, Family::Forest, Family::Boost];

    pub fn name(self) -> &'static str {
        match self {
            Family::Logistic => "LR",
            Family::Forest => "RF",
            Family::Boost => "GB",
        }
    }

    /// Hyperparameter grid searched by inner cross-validation.
    pub fn default_grid(self) -> Vec<ClassifierConfig> {
        match self {
            Family::Logistic => [0.1, 1.0, 10.0]
                .into_iter()
                .map(|l2| ClassifierConfig::Logistic(LogisticConfig { l2, ..Default::default() }))
                .collect(),
            Family::Forest => [4, 8]
                .into_iter()
                .map(|max_depth| ClassifierConfig::Forest(ForestConfig { max_depth, ..Default::default() }))
                .collect(),
            Family::Boost => [2, 3]
                .into_iter()
                .map(|max_depth| ClassifierConfig::Boost(BoostConfig { max_depth, ..Default::default() }))
                .collect(),
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LR" => Ok(Family::Logistic),
            "RF" => Ok(Family::Forest),
            "GB" => Ok(Family::Boost),
            _ => Err(Error::Config(format!("unknown classifier {s:?}; expected LR, RF or GB"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum ClassifierConfig {
    #[serde(rename = "LR")]
    Logistic(LogisticConfig),
    #[serde(rename = "RF")]
    Forest(ForestConfig),
    #[serde(rename = "GB")]
    Boost(BoostConfig),
}

impl ClassifierConfig {
    pub fn family(&self) -> Family {
        match self {
            ClassifierConfig::Logistic(_) => Family::Logistic,
            ClassifierConfig::Forest(_) => Family::Forest,
            ClassifierConfig::Boost(_) => Family::Boost,
        }
    }

    pub fn fit(&self, x: &[Vec<f64>], y: &[u8], seed: u64) -> Result<Model> {
        Ok(match self {
            ClassifierConfig::Logistic(c) => Model::Logistic(LogisticModel::fit(x, y, c)?),
            ClassifierConfig::Forest(c) => Model::Forest(RandomForestModel::fit(x, y, c, seed)?),
            ClassifierConfig::Boost(c) => Model::Boost(GradientBoostModel::fit(x, y, c)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family")]
pub enum Model {
    #[serde(rename = "LR")]
    Logistic(LogisticModel),
    #[serde(rename = "RF")]
    Forest(RandomForestModel),
    #[serde(rename = "GB")]
    Boost(GradientBoostModel),
}

impl Model {
    pub fn predict_proba(&self, x: &[Vec<f64>]) -> Vec<f64> {
        match self {
            Model::Logistic(m) => m.predict_proba(x),
            Model::Forest(m) => m.predict_proba(x),
            Model::Boost(m) => m.predict_proba(x),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}
