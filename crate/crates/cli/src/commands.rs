//! File-level runners for each subcommand. Each returns the run manifest;
//! outputs never embed the output directory, so replays compare byte for byte.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use serde::Serialize;
use serde_json::{json, Value};

use hyperpretrain::encoder::EncoderState;
use hyperpretrain::eval::{render_table, EvalReport, GridRow, Metrics};
use hyperpretrain::io::read_binary_matrix;
use hyperpretrain::io::read_labels;
use hyperpretrain::numerics::checkpoint::{BLOB_FILE, MANIFEST_FILE as CKPT_MANIFEST};
use hyperpretrain::synth::generate_pair;
use hyperpretrain::train::TrainRun;
use hyperpretrain::transfer::{TargetCohort, BASELINE_FILE, DIAGNOSES_FILE, LABELS_FILE};
use hyperpretrain::Error;

use crate::config::{Mode, RunConfig};
use crate::manifest::Manifest;
use crate::pipeline::{self, AblationPoint, PretrainData, TransferSummary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::Subcommand)]
pub enum Command {
    /// Generate a paired pre-training and target cohort.
    Synth,
    /// Supervised pre-training on labelled pre-training data.
    PretrainSup,
    /// Contrastive pre-training on pre-training diagnoses.
    PretrainUnsup,
    /// Embed a target cohort with a checkpoint.
    Embed,
    /// Nested cross-validation of one mode.
    Evaluate,
    /// Test AUROC against training-set size.
    AblateSize,
    /// All modes against all classifiers.
    Compare,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Synth,
        Command::PretrainSup,
        Command::PretrainUnsup,
        Command::Embed,
        Command::Evaluate,
        Command::AblateSize,
        Command::Compare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::PretrainSup => "pretrain-sup",
            Command::PretrainUnsup => "pretrain-unsup",
            Command::Embed => "embed",
            Command::Evaluate => "evaluate",
            Command::AblateSize => "ablate-size",
            Command::Compare => "compare",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match Command::ALL.into_iter().find(|c| c.name() == name) {
            Some(c) => Ok(c),
            None => bail!(Error::Invalid(format!("unknown command {name:?}"))),
        }
    }
}

/// Runs `command` and writes its outputs plus `manifest.json` into `out`.
pub fn execute(command: Command, config: &RunConfig, out: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(out)?;
    let mut run = Run { out, config, manifest: Manifest::new(command.name(), config.to_flat()) };
    match command {
        Command::Synth => run.synth()?,
        Command::PretrainSup => run.pretrain(Mode::Supervised)?,
        Command::PretrainUnsup => run.pretrain(Mode::Unsupervised)?,
        Command::Embed => run.embed()?,
        Command::Evaluate => run.evaluate()?,
        Command::AblateSize => run.ablate()?,
        Command::Compare => run.compare()?,
    }
    run.manifest.write(out)?;
    Ok(run.manifest)
}

struct Run<'a> {
    out: &'a Path,
    config: &'a RunConfig,
    manifest: Manifest,
}

fn required(path: &Option<String>, flag: &str) -> Result<PathBuf> {
    match path {
        Some(p) => Ok(PathBuf::from(p)),
        None => bail!(Error::Config(format!("this command needs {flag}"))),
    }
}

fn pretty<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn f(x: f64) -> String {
    format!("{x}")
}

impl Run<'_> {
    fn write(&mut self, relative: &str, content: &str) -> Result<()> {
        let path = self.out.join(relative);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&path, content)?;
        self.manifest.add_output(self.out, relative)
    }

    fn note(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        self.manifest.notes.insert(key.into(), serde_json::to_value(value)?);
        Ok(())
    }

    fn target(&mut self) -> Result<TargetCohort> {
        let dir = required(&self.config.paths.target_data, "--target-data")?;
        for file in [BASELINE_FILE, DIAGNOSES_FILE, LABELS_FILE] {
            self.manifest.add_input(format!("target_data/{file}"), &dir.join(file))?;
        }
        Ok(TargetCohort::read(&dir)?)
    }

    fn pretrain_data(&mut self, with_labels: bool) -> Result<PretrainData> {
        let dir = required(&self.config.paths.pretrain_data, "--pretrain-data")?;
        self.manifest.add_input(format!("pretrain_data/{DIAGNOSES_FILE}"), &dir.join(DIAGNOSES_FILE))?;
        let diagnoses = read_binary_matrix(&dir.join(DIAGNOSES_FILE))?;
        let labels = if with_labels {
            self.manifest.add_input(format!("pretrain_data/{LABELS_FILE}"), &dir.join(LABELS_FILE))?;
            Some(read_labels(&dir.join(LABELS_FILE))?)
        } else {
            None
        };
        let data = PretrainData::build(&diagnoses, labels.as_deref(), self.config.data.empty_rows)?;
        if !data.dropped.is_empty() {
            log::warn!("dropped {} pre-training patients without diagnoses", data.dropped.len());
        }
        self.note("dropped_patients", &data.dropped)?;
        Ok(data)
    }

    /// Loads a checkpoint; `expect` checks the mode it was trained in.
    fn checkpoint(&mut self, label: &str, dir: &Path, expect: Option<Mode>) -> Result<EncoderState> {
        for file in [CKPT_MANIFEST, BLOB_FILE] {
            self.manifest.add_input(format!("{label}/{file}"), &dir.join(file))?;
        }
        let (state, extra) = EncoderState::<f64>::load(dir)?;
        let stored: Option<Mode> = serde_json::from_value(extra.get("mode").cloned().unwrap_or(Value::Null)).ok();
        if let (Some(want), Some(got)) = (expect, stored) {
            if want != got {
                bail!(Error::Config(format!("checkpoint was pre-trained in {} mode, not {}", got.key(), want.key())));
            }
        }
        Ok(state)
    }

    fn save_checkpoint(&mut self, prefix: &str, mode: Mode, state: &EncoderState, run: &TrainRun) -> Result<()> {
        let dir = self.out.join(prefix);
        state.save(&dir, json!({ "mode": mode }))?;
        let rel = |file: &str| if prefix.is_empty() { file.to_string() } else { format!("{prefix}/{file}") };
        self.manifest.add_output(self.out, &rel(CKPT_MANIFEST))?;
        self.manifest.add_output(self.out, &rel(BLOB_FILE))?;
        self.write(&rel("train_run.json"), &pretty(run)?)
    }

    fn synth(&mut self) -> Result<()> {
        let s = &self.config.synth;
        let (pre, tgt, generation) = generate_pair(&s.pretrain, &s.target, s.shared_latent, self.config.seed)?;
        for (name, cohort) in [("pretrain", &pre), ("target", &tgt)] {
            cohort.write(&self.out.join(name))?;
            for file in [DIAGNOSES_FILE, BASELINE_FILE, LABELS_FILE] {
                self.manifest.add_output(self.out, &format!("{name}/{file}"))?;
            }
        }
        self.write("generation.json", &pretty(&generation)?)
    }

    fn pretrain(&mut self, mode: Mode) -> Result<()> {
        let data = self.pretrain_data(mode == Mode::Supervised)?;
        let (state, run) = pipeline::pretrain(self.config, mode, &data)?;
        self.note("epochs", run.epochs)?;
        self.note("best_epoch", run.best_epoch)?;
        self.save_checkpoint("", mode, &state, &run)
    }

    fn embed(&mut self) -> Result<()> {
        let cohort = self.target()?;
        let ckpt = required(&self.config.paths.checkpoint, "--checkpoint")?;
        let expect = (self.config.mode != Mode::FromScratch).then_some(self.config.mode);
        let state = self.checkpoint("checkpoint", &ckpt, expect)?;
        let (emb, summary) = pipeline::embed(self.config, &state, &cohort)?;
        let d = emb.embeddings.first().map_or(0, Vec::len);
        let mut csv = String::from("patient_id");
        for name in &cohort.baseline.feature_names {
            write!(csv, ",{name}")?;
        }
        for i in 0..d {
            write!(csv, ",z_{i}")?;
        }
        csv.push_str(",label\n");
        for (((id, base), z), y) in cohort.baseline.rows.iter().zip(&emb.embeddings).zip(&cohort.labels) {
            csv.push_str(id);
            for v in base {
                write!(csv, ",{}", v.map(f).unwrap_or_default())?;
            }
            for v in z {
                write!(csv, ",{}", f(*v))?;
            }
            writeln!(csv, ",{y}")?;
        }
        self.write("embeddings.csv", &csv)?;
        self.note("zero_embedding_patients", &summary.zero_embedding_patients)?;
        self.write("alignment.json", &pretty(&summary)?)
    }

    /// Feature source for `mode`, loading the configured checkpoint if needed.
    fn source(&mut self, mode: Mode, cohort: &TargetCohort, ckpt: Option<(&str, PathBuf)>) -> Result<(hyperpretrain::transfer::FeatureSource, Option<TransferSummary>)> {
        let state = match (mode, ckpt) {
            (Mode::FromScratch, _) => None,
            (_, Some((label, dir))) => Some(self.checkpoint(label, &dir, Some(mode))?),
            (_, None) => bail!(Error::Config(format!("mode {} needs --checkpoint", mode.key()))),
        };
        pipeline::feature_source(self.config, mode, cohort, state.as_ref())
    }

    fn evaluate(&mut self) -> Result<()> {
        let cohort = self.target()?;
        let mode = self.config.mode;
        let ckpt = self.config.paths.checkpoint.clone().map(|p| ("checkpoint", PathBuf::from(p)));
        let (source, summary) = self.source(mode, &cohort, ckpt)?;
        let reports = pipeline::evaluate(self.config, &source, &cohort.labels)?;
        let rows = pipeline::grid_rows(mode, &reports);
        #[derive(Serialize)]
        struct Entry<'a> {
            classifier: &'a str,
            report: &'a EvalReport,
        }
        let entries: Vec<Entry> = reports.iter().map(|(f, r)| Entry { classifier: f.name(), report: r }).collect();
        self.write("report.json", &pretty(&json!({ "mode": mode, "transfer": summary, "classifiers": entries }))?)?;
        self.write("report.txt", &render_table(&rows))
    }

    fn ablate(&mut self) -> Result<()> {
        let cohort = self.target()?;
        let mode = self.config.mode;
        let ckpt = self.config.paths.checkpoint.clone().map(|p| ("checkpoint", PathBuf::from(p)));
        let (source, _) = self.source(mode, &cohort, ckpt)?;
        let points = pipeline::ablate(self.config, &source, &cohort.labels)?;
        let mut csv = String::from("method,classifier,fraction,train_size,test_size,auroc,accuracy,f1,pr_auc\n");
        for p in &points {
            let m = p.metrics.values();
            writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{}",
                mode.key(),
                p.classifier.name(),
                f(p.fraction),
                p.train_size,
                p.test_size,
                f(m[0]),
                f(m[1]),
                f(m[2]),
                f(m[3])
            )?;
        }
        self.write("ablation.json", &pretty(&json!({ "mode": mode, "points": points }))?)?;
        self.write("ablation.csv", &csv)
    }

    /// Checkpoint for a pre-trained mode in `compare`: configured, or trained now.
    fn compare_state(&mut self, mode: Mode, data: &mut Option<(PretrainData, bool)>) -> Result<EncoderState> {
        let configured = match mode {
            Mode::Supervised => self.config.compare.supervised_checkpoint.clone(),
            _ => self.config.compare.unsupervised_checkpoint.clone(),
        };
        if let Some(dir) = configured {
            return self.checkpoint(&format!("{}_checkpoint", mode.key()), Path::new(&dir), Some(mode));
        }
        if data.is_none() {
            *data = Some((self.pretrain_data(true)?, true));
        }
        let (pre, _) = data.as_ref().expect("loaded above");
        let (state, run) = pipeline::pretrain(self.config, mode, pre)?;
        self.save_checkpoint(mode.key(), mode, &state, &run)?;
        Ok(state)
    }

    fn compare(&mut self) -> Result<()> {
        let cohort = self.target()?;
        let mut data = None;
        let mut rows: Vec<GridRow> = Vec::new();
        let mut transfer = serde_json::Map::new();
        for mode in Mode::ALL {
            let state = match mode {
                Mode::FromScratch => None,
                _ => Some(self.compare_state(mode, &mut data)?),
            };
            let (source, summary) = pipeline::feature_source(self.config, mode, &cohort, state.as_ref())?;
            if let Some(s) = summary {
                transfer.insert(mode.key().into(), serde_json::to_value(s)?);
            }
            let reports = pipeline::evaluate(self.config, &source, &cohort.labels)?;
            rows.extend(pipeline::grid_rows(mode, &reports));
        }
        let mut csv = String::from("method,classifier");
        for name in Metrics::NAMES {
            let key = name.to_ascii_lowercase().replace('-', "_");
            write!(csv, ",{key}_mean,{key}_sd")?;
        }
        csv.push('\n');
        for r in &rows {
            write!(csv, "{},{}", r.method, r.classifier)?;
            let (m, s) = (r.aggregate.mean.values(), r.aggregate.sd.values());
            for k in 0..4 {
                write!(csv, ",{},{}", f(m[k]), f(s[k]))?;
            }
            csv.push('\n');
        }
        self.write("compare.json", &pretty(&json!({ "rows": rows, "transfer": transfer }))?)?;
        self.write("compare.csv", &csv)?;
        self.write("compare.txt", &render_table(&rows))
    }
}

/// Ablation points of one classifier keyed by fraction.
pub fn auroc_by_fraction(points: &[AblationPoint], family: hyperpretrain::classifiers::Family) -> Vec<(f64, f64)> {
    points.iter().filter(|p| p.classifier == family).map(|p| (p.fraction, p.metrics.auroc)).collect()
}
