//! Run configuration: nested defaults addressed through flat dotted keys.
//!
//! A config file is a JSON object such as `{"supervised.epochs": 30}`.
//! Values are applied over the defaults, then command-line overrides over
//! the file. Every key must name an existing leaf of the default config.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use hyperpretrain::classifiers::{ClassifierConfig, Family};
use hyperpretrain::contrastive::UnsupervisedConfig;
use hyperpretrain::eval::{INNER_FOLDS, OUTER_FOLDS};
use hyperpretrain::hypergraph::EmptyRowPolicy;
use hyperpretrain::supervised::SupervisedConfig;
use hyperpretrain::synth::CohortSpec;
use hyperpretrain::transfer::DEFAULT_COVERAGE_FLOOR;

/// How target patients are represented for the downstream classifiers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    #[value(name = "from_scratch")]
    FromScratch,
    #[value(name = "supervised")]
    Supervised,
    #[value(name = "unsupervised")]
    Unsupervised,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::FromScratch, Mode::Supervised, Mode::Unsupervised];

    pub fn key(self) -> &'static str {
        match self {
            Mode::FromScratch => "from_scratch",
            Mode::Supervised => "supervised",
            Mode::Unsupervised => "unsupervised",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Mode::FromScratch => "From scratch",
            Mode::Supervised => "Supervised",
            Mode::Unsupervised => "Unsupervised",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub pretrain_data: Option<String>,
    pub target_data: Option<String>,
    pub checkpoint: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Policy for pre-training patients without any diagnosis.
    pub empty_rows: EmptyRowPolicy,
    pub coverage_floor: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { empty_rows: EmptyRowPolicy::Reject, coverage_floor: DEFAULT_COVERAGE_FLOOR }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub pretrain: CohortSpec,
    pub target: CohortSpec,
    pub shared_latent: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self { pretrain: CohortSpec::pretrain_default(), target: CohortSpec::target_default(), shared_latent: 4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k_outer: usize,
    pub k_inner: usize,
    pub classifiers: Vec<Family>,
    pub grid_lr: Vec<ClassifierConfig>,
    pub grid_rf: Vec<ClassifierConfig>,
    pub grid_gb: Vec<ClassifierConfig>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k_outer: OUTER_FOLDS,
            k_inner: INNER_FOLDS,
            classifiers: Family::ALL.to_vec(),
            grid_lr: Family::Logistic.default_grid(),
            grid_rf: Family::Forest.default_grid(),
            grid_gb: Family::Boost.default_grid(),
        }
    }
}

impl EvalConfig {
    pub fn grid(&self, family: Family) -> Result<&[ClassifierConfig]> {
        let grid = match family {
            Family::Logistic => &self.grid_lr,
            Family::Forest => &self.grid_rf,
            Family::Boost => &self.grid_gb,
        };
        if grid.is_empty() {
            bail!(hyperpretrain::Error::Config(format!("empty grid for {}", family.name())));
        }
        if let Some(c) = grid.iter().find(|c| c.family() != family) {
            bail!(hyperpretrain::Error::Config(format!("{} grid holds a {} entry", family.name(), c.family().name())));
        }
        Ok(grid)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    /// Training share of the whole cohort at each step.
    pub fractions: Vec<f64>,
    pub test_fraction: f64,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self { fractions: vec![0.2, 0.4, 0.6, 0.8], test_fraction: 0.2 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    /// Existing checkpoints; when unset, `compare` pre-trains from `--pretrain-data`.
    pub supervised_checkpoint: Option<String>,
    pub unsupervised_checkpoint: Option<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: Mode,
    pub paths: Paths,
    pub data: DataConfig,
    pub synth: SynthConfig,
    pub supervised: SupervisedConfig,
    pub unsupervised: UnsupervisedConfig,
    pub eval: EvalConfig,
    pub ablation: AblationConfig,
    pub compare: CompareConfig,
}

/// Leaves of a JSON tree keyed by their dotted path. Arrays are leaves.
pub fn flatten(value: &Value) -> BTreeMap<String, Value> {
    fn walk(v: &Value, prefix: &str, out: &mut BTreeMap<String, Value>) {
        match v {
            Value::Object(map) if !map.is_empty() => {
                for (k, child) in map {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(child, &key, out);
                }
            }
            _ => {
                out.insert(prefix.to_string(), v.clone());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(value, "", &mut out);
    out
}

fn set_path(root: &mut Value, key: &str, value: Value) {
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        if !node.is_object() {
            *node = Value::Object(Map::new());
        }
        node = node.as_object_mut().expect("object").entry(part.to_string()).or_insert(Value::Null);
    }
    if !node.is_object() {
        *node = Value::Object(Map::new());
    }
    node.as_object_mut().expect("object").insert(parts[parts.len() - 1].to_string(), value);
}

/// Parses `key=value`; the value is JSON when it parses, a string otherwise.
pub fn parse_assignment(s: &str) -> Result<(String, Value)> {
    let Some((k, v)) = s.split_once('=') else {
        bail!(hyperpretrain::Error::Config(format!("override {s:?} is not key=value")));
    };
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

impl RunConfig {
    /// Defaults, then `file`, then `overrides` in order.
    pub fn resolve(file: Option<&BTreeMap<String, Value>>, overrides: &[(String, Value)]) -> Result<Self> {
        let mut flat = flatten(&serde_json::to_value(RunConfig::default())?);
        let known: Vec<String> = flat.keys().cloned().collect();
        // A leaf that is null by default (an unset option) may receive an object.
        let accepts = |key: &str| known.iter().any(|k| k == key || key.starts_with(&format!("{k}.")));
        for (key, value) in file.into_iter().flatten().chain(overrides.iter().map(|(k, v)| (k, v))) {
            if !accepts(key) {
                bail!(hyperpretrain::Error::Config(format!("unknown config key {key:?}")));
            }
            flat.retain(|k, _| !(k.starts_with(&format!("{key}.")) || key.starts_with(&format!("{k}."))));
            flat.insert(key.clone(), value.clone());
        }
        let mut tree = Value::Object(Map::new());
        for (k, v) in flat {
            set_path(&mut tree, &k, v);
        }
        serde_json::from_value(tree).map_err(|e| hyperpretrain::Error::Config(format!("config: {e}")).into())
    }

    pub fn read_file(path: &Path) -> Result<BTreeMap<String, Value>> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let value: Value = serde_json::from_str(&text).map_err(hyperpretrain::Error::from)?;
        match value {
            Value::Object(map) => Ok(flatten(&Value::Object(map))),
            _ => bail!(hyperpretrain::Error::Config("config file must hold a JSON object".into())),
        }
    }

    /// The resolved config as sorted dotted keys.
    pub fn to_flat(&self) -> BTreeMap<String, Value> {
        flatten(&serde_json::to_value(self).expect("config serializes"))
    }
}
