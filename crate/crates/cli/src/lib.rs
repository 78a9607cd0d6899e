//! Command-line pipeline: cohort generation, pre-training, embedding,
//! evaluation, size ablation and the full mode × classifier comparison.

pub mod commands;
pub mod config;
pub mod manifest;
pub mod pipeline;

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::Parser;
use serde_json::{json, Value};

pub use commands::{execute, Command};
pub use config::{Mode, RunConfig};
pub use manifest::Manifest;

#[derive(Debug, Parser)]
#[command(name = "hyperpretrain", version, about = "Hypergraph pre-training pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,
    /// JSON file of dotted config keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<Mode>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub pretrain_data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub target_data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Re-run the command recorded in a manifest and check its outputs.
    #[arg(long, global = true)]
    pub replay: Option<PathBuf>,
    /// Config override, `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl Cli {
    fn overrides(&self) -> Result<Vec<(String, Value)>> {
        let mut out = self.set.iter().map(|s| config::parse_assignment(s)).collect::<Result<Vec<_>>>()?;
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| Value::String(p.to_string_lossy().into_owned()));
        for (key, value) in [
            ("seed", self.seed.map(Value::from)),
            ("mode", self.mode.map(|m| Value::String(m.key().into()))),
            ("paths.pretrain_data", path(&self.pretrain_data)),
            ("paths.target_data", path(&self.target_data)),
            ("paths.checkpoint", path(&self.checkpoint)),
        ] {
            if let Some(v) = value {
                out.push((key.to_string(), v));
            }
        }
        Ok(out)
    }

    fn has_overrides(&self) -> bool {
        self.config.is_some()
            || self.seed.is_some()
            || self.mode.is_some()
            || self.pretrain_data.is_some()
            || self.target_data.is_some()
            || self.checkpoint.is_some()
            || !self.set.is_empty()
    }
}

/// Re-executes a recorded run into `out` and fails unless every input and
/// output hash matches the record.
pub fn replay(manifest_path: &Path, out: &Path) -> Result<Manifest> {
    let recorded = Manifest::read(manifest_path)?;
    let command = Command::from_name(&recorded.command)?;
    let config = RunConfig::resolve(Some(&recorded.config), &[])?;
    let fresh = execute(command, &config, out)?;
    let mut problems = Manifest::diff(&recorded.inputs, &fresh.inputs);
    problems.extend(Manifest::diff(&recorded.outputs, &fresh.outputs));
    if !problems.is_empty() {
        bail!(hyperpretrain::Error::Invalid(format!("replay differs from the record: {}", problems.join("; "))));
    }
    Ok(fresh)
}

pub fn run(cli: &Cli) -> Result<Manifest> {
    let Some(out) = &cli.out else {
        bail!(hyperpretrain::Error::Config("--out is required".into()));
    };
    if let Some(manifest) = &cli.replay {
        if cli.has_overrides() || cli.command.is_some() {
            bail!(hyperpretrain::Error::Config("--replay takes only --out".into()));
        }
        return replay(manifest, out);
    }
    let Some(command) = cli.command else {
        bail!(hyperpretrain::Error::Config("no command given".into()));
    };
    let file = cli.config.as_deref().map(RunConfig::read_file).transpose()?;
    let config = RunConfig::resolve(file.as_ref(), &cli.overrides()?)?;
    execute(command, &config, out)
}

/// Stable kind tag of an error for the machine-readable error line.
pub fn error_kind(err: &anyhow::Error) -> &'static str {
    use hyperpretrain::Error as E;
    match err.downcast_ref::<E>() {
        Some(e) => match e {
            E::ShapeMismatch { .. } => "shape_mismatch",
            E::NonFinite { .. } => "non_finite",
            E::EmptySet(_) => "empty_set",
            E::UndefinedDuplication(_) => "undefined_duplication",
            E::EmptyRows(_) => "empty_rows",
            E::ZeroVector(_) => "zero_vector",
            E::DisjointViews(_) => "disjoint_views",
            E::EmptyView { .. } => "empty_view",
            E::DegenerateTask(_) => "degenerate_task",
            E::VocabularyMismatch { .. } => "vocabulary_mismatch",
            E::UnknownPatient(_) => "unknown_patient",
            E::Config(_) => "config",
            E::Invalid(_) => "invalid_input",
            E::Schema { .. } => "schema_mismatch",
            E::Checkpoint { .. } => "checkpoint",
            E::Io(_) => "io",
            E::Csv(_) => "csv",
            E::Json(_) => "json",
        },
        None if err.downcast_ref::<std::io::Error>().is_some() => "io",
        None => "runtime",
    }
}

/// One JSON line: `{"error": kind, "message": text}`.
pub fn error_line(kind: &str, message: &str) -> String {
    json!({ "error": kind, "message": message.replace('\n', " ") }).to_string()
}

/// Parses `args`, runs, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("{}", error_line("usage", e.to_string().trim()));
            return 2;
        }
    };
    match run(&cli) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("{}", error_line(error_kind(&e), &format!("{e:#}")));
            1
        }
    }
}
