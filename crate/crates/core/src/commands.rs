//! The operations behind the `snap` binary. Each command reads its inputs,
//! writes its declared outputs plus a JSON run manifest next to the primary
//! output, and returns a summary for the caller to print.
//!
//! Embedding inputs ending in `.txt` or `.tsv` are read as whitespace text
//! tables; anything else is read as a binary SNAPEMB1 container.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write as _};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::classifier::TrainConfig;
use crate::error::{Result, SnapError};
use crate::experiment::{run_entanglement_experiment, run_speaker_sweep, EntanglementExperiment, SweepTable};
use crate::features::prepare_set;
use crate::metrics::{
    compute_eer, entanglement_report, evaluate, format_score_table, parse_score_table, EntanglementReport,
    EvalReport, ScoredSet,
};
use crate::model_file::{load_model, save_model, Model};
use crate::pipeline::{fit_pipeline, score_set};
use crate::store::{parse_text_table, read_container, stratified_split, write_container, LabeledEmbeddingSet};
use crate::subspace::null_project_set;
use crate::synth::{generate, SynthConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance record written alongside every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub parameters: BTreeMap<String, Value>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<String>,
    pub duration_seconds: f64,
}

/// Where the manifest for a given primary output goes.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

struct Run {
    command: &'static str,
    started: Instant,
    seed: Option<u64>,
    parameters: BTreeMap<String, Value>,
    inputs: Vec<FileDigest>,
    outputs: Vec<String>,
}

impl Run {
    fn start(command: &'static str, seed: Option<u64>) -> Self {
        Run {
            command,
            started: Instant::now(),
            seed,
            parameters: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    fn param(&mut self, key: &str, value: Value) {
        self.parameters.insert(key.to_string(), value);
    }

    fn input(&mut self, path: &Path) -> Result<String> {
        let sha256 = sha256_file(path)?;
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256.clone(),
        });
        Ok(sha256)
    }

    fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }

    /// Write the manifest next to `primary` and return its path.
    fn finish(self, primary: &Path) -> Result<PathBuf> {
        let manifest = RunManifest {
            command: self.command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.seed,
            parameters: self.parameters,
            inputs: self.inputs,
            outputs: self.outputs,
            duration_seconds: self.started.elapsed().as_secs_f64(),
        };
        let path = manifest_path(primary);
        write_json(&path, &manifest)?;
        Ok(path)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| SnapError::validation(path.display().to_string(), e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn is_text_table(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()),
        Some("txt") | Some("tsv")
    )
}

/// Read an embedding set from a container or text table, without pooling.
pub fn load_embeddings(path: &Path) -> Result<LabeledEmbeddingSet> {
    if is_text_table(path) {
        parse_text_table(&std::fs::read_to_string(path)?)
    } else {
        read_container(BufReader::new(File::open(path)?))
    }
}

fn save_container(path: &Path, set: &LabeledEmbeddingSet) -> Result<()> {
    let mut sink = BufWriter::new(File::create(path)?);
    write_container(set, &mut sink)?;
    sink.flush()?;
    Ok(())
}

fn load_synth_config(path: Option<&Path>) -> Result<SynthConfig> {
    match path {
        Some(p) => SynthConfig::from_toml(&std::fs::read_to_string(p)?),
        None => Ok(SynthConfig::default()),
    }
}

fn train_params(run: &mut Run, cfg: &TrainConfig) {
    run.param("learning_rate", json!(cfg.learning_rate));
    run.param("epochs", json!(cfg.epochs));
    run.param("l2_penalty", json!(cfg.l2_penalty));
    run.param("early_stop_patience", json!(cfg.early_stop_patience));
}

// --- fit ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct FitArgs {
    pub input: PathBuf,
    pub model_out: PathBuf,
    pub k: usize,
    pub split: f64,
    pub seed: u64,
    /// Its `seed` field is overridden by `seed` above.
    pub train: TrainConfig,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub model: Model,
    pub n_train: usize,
    pub n_validation: usize,
    pub validation_eer: f64,
    pub epochs_run: usize,
    pub manifest: PathBuf,
}

impl FitOutcome {
    pub fn summary(&self) -> String {
        format!(
            "fitted k = {} on {} records ({} epochs); validation EER on {} records: {:.2}%\n",
            self.model.subspace.k(),
            self.n_train,
            self.epochs_run,
            self.n_validation,
            100.0 * self.validation_eer
        )
    }
}

/// Prepare, split, fit the subspace and classifier, save the model.
pub fn cmd_fit(args: &FitArgs) -> Result<FitOutcome> {
    let mut run = Run::start("fit", Some(args.seed));
    let input_hash = run.input(&args.input)?;
    let set = prepare_set(&load_embeddings(&args.input)?)?;
    let (train_set, validation) = stratified_split(&set, args.split, args.seed)?;
    let cfg = TrainConfig {
        seed: args.seed,
        ..args.train.clone()
    };
    let fitted = fit_pipeline(&train_set, args.k, &cfg, Some(&validation))?;
    let validation_eer = compute_eer(&score_set(&fitted.subspace, &fitted.classifier, &validation)?)?.eer;

    let mut metadata = BTreeMap::new();
    for (key, value) in [
        ("train_input_sha256", input_hash),
        ("k", args.k.to_string()),
        ("seed", args.seed.to_string()),
        ("split", format!("{:?}", args.split)),
        ("learning_rate", format!("{:?}", cfg.learning_rate)),
        ("epochs", cfg.epochs.to_string()),
        ("l2_penalty", format!("{:?}", cfg.l2_penalty)),
        ("n_train", train_set.len().to_string()),
        ("n_validation", validation.len().to_string()),
        ("validation_eer", format!("{validation_eer:.16e}")),
    ] {
        metadata.insert(key.to_string(), value);
    }
    let model = Model {
        subspace: fitted.subspace,
        classifier: fitted.classifier,
        metadata,
    };
    save_model(&args.model_out, &model)?;

    run.param("k", json!(args.k));
    run.param("split", json!(args.split));
    train_params(&mut run, &cfg);
    run.param("validation_eer", json!(validation_eer));
    run.output(&args.model_out);
    let manifest = run.finish(&args.model_out)?;
    Ok(FitOutcome {
        model,
        n_train: train_set.len(),
        n_validation: validation.len(),
        validation_eer,
        epochs_run: fitted.trace.train_loss.len(),
        manifest,
    })
}

// --- project / score ------------------------------------------------------------

fn load_matching(model: &Model, path: &Path) -> Result<LabeledEmbeddingSet> {
    let set = prepare_set(&load_embeddings(path)?)?;
    if set.dim() != model.subspace.dim() {
        return Err(SnapError::validation(
            "model vs input",
            format!(
                "model dim {} does not match container dim {} ({})",
                model.subspace.dim(),
                set.dim(),
                path.display()
            ),
        ));
    }
    Ok(set)
}

/// Write the null-projected (pooled, not renormalized) embeddings.
pub fn cmd_project(model_path: &Path, input: &Path, out: &Path) -> Result<PathBuf> {
    let mut run = Run::start("project", None);
    run.input(model_path)?;
    run.input(input)?;
    let model = load_model(model_path)?;
    let set = load_matching(&model, input)?;
    save_container(out, &null_project_set(&model.subspace, &set)?)?;
    run.param("k", json!(model.subspace.k()));
    run.output(out);
    run.finish(out)
}

/// Score every record of `input`, in input order, and write a score table.
pub fn cmd_score(model_path: &Path, input: &Path, out: &Path) -> Result<ScoredSet> {
    let mut run = Run::start("score", None);
    run.input(model_path)?;
    run.input(input)?;
    let model = load_model(model_path)?;
    let set = load_matching(&model, input)?;
    let scored = score_set(&model.subspace, &model.classifier, &set)?;
    std::fs::write(out, format_score_table(&scored))?;
    run.param("k", json!(model.subspace.k()));
    run.output(out);
    run.finish(out)?;
    Ok(scored)
}

// --- eval ----------------------------------------------------------------------

/// EER and fixed-threshold metrics of a score table; the report is also
/// written as JSON to `out`.
pub fn cmd_eval(scores: &Path, threshold: f64, out: &Path) -> Result<EvalReport> {
    let mut run = Run::start("eval", None);
    run.input(scores)?;
    let scored = parse_score_table(&std::fs::read_to_string(scores)?)?;
    let report = evaluate(&scored, threshold)?;
    write_json(out, &report)?;
    run.param("threshold", json!(threshold));
    run.output(out);
    run.finish(out)?;
    Ok(report)
}

// --- synth ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub config: Option<PathBuf>,
    /// Overrides the config's seed when set.
    pub seed: Option<u64>,
    pub out: PathBuf,
    /// Ground-truth JSON; defaults to `<out>.truth.json`.
    pub truth_out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct SynthOutcome {
    pub config: SynthConfig,
    pub n_records: usize,
    pub truth_path: PathBuf,
    pub manifest: PathBuf,
}

pub fn cmd_synth(args: &SynthArgs) -> Result<SynthOutcome> {
    let mut cfg = load_synth_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let mut run = Run::start("synth", Some(cfg.seed));
    if let Some(p) = &args.config {
        run.input(p)?;
    }
    let (set, truth) = generate(&cfg)?;
    save_container(&args.out, &set)?;
    let truth_path = args.truth_out.clone().unwrap_or_else(|| {
        let mut name = args.out.as_os_str().to_owned();
        name.push(".truth.json");
        PathBuf::from(name)
    });
    write_json(&truth_path, &truth)?;

    run.param("config", serde_json::to_value(&cfg).unwrap_or(Value::Null));
    run.output(&args.out);
    run.output(&truth_path);
    let manifest = run.finish(&args.out)?;
    Ok(SynthOutcome {
        config: cfg,
        n_records: set.len(),
        truth_path,
        manifest,
    })
}

// --- analyze -------------------------------------------------------------------

pub fn entanglement_text(report: &EntanglementReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "space       speaker_silhouette  class_silhouette");
    let mut row = |name: &str, p: &crate::metrics::SilhouettePair| {
        let _ = writeln!(out, "{name:<10}  {:>18.4}  {:>16.4}", p.speaker.mean, p.class.mean);
    };
    row("baseline", &report.baseline);
    if let Some(n) = &report.nulled {
        row("nulled", n);
    }
    out
}

fn entanglement_dat(report: &EntanglementReport) -> String {
    let mut out = String::from("# space speaker_silhouette class_silhouette\n");
    let mut row = |i: usize, name: &str, p: &crate::metrics::SilhouettePair| {
        let _ = writeln!(out, "{i} {name} {:.16e} {:.16e}", p.speaker.mean, p.class.mean);
    };
    row(0, "baseline", &report.baseline);
    if let Some(n) = &report.nulled {
        row(1, "nulled", n);
    }
    out
}

/// Speaker and class silhouettes of `input`, and of its nulled version when a
/// model is given. Writes a gnuplot-friendly data file to `out`.
pub fn cmd_analyze(input: &Path, model_path: Option<&Path>, out: &Path) -> Result<EntanglementReport> {
    let mut run = Run::start("analyze", None);
    run.input(input)?;
    let model = match model_path {
        Some(p) => {
            run.input(p)?;
            Some(load_model(p)?)
        }
        None => None,
    };
    let set = match &model {
        Some(m) => load_matching(m, input)?,
        None => prepare_set(&load_embeddings(input)?)?,
    };
    let report = entanglement_report(&set, model.as_ref().map(|m| &m.subspace))?;
    std::fs::write(out, entanglement_dat(&report))?;
    run.output(out);
    run.finish(out)?;
    Ok(report)
}

// --- experiments -----------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SweepArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub counts: Vec<usize>,
    pub k: usize,
    pub train: TrainConfig,
    pub out: PathBuf,
}

/// Run the speaker-count sweep and write it as a whitespace data file.
pub fn cmd_sweep(args: &SweepArgs) -> Result<SweepTable> {
    let mut cfg = load_synth_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let mut run = Run::start("sweep", Some(cfg.seed));
    if let Some(p) = &args.config {
        run.input(p)?;
    }
    let table = run_speaker_sweep(&cfg, &args.counts, args.k, &args.train)?;
    std::fs::write(&args.out, table.to_text())?;
    run.param("config", serde_json::to_value(&cfg).unwrap_or(Value::Null));
    run.param("counts", json!(args.counts));
    run.param("k", json!(args.k));
    train_params(&mut run, &args.train);
    run.output(&args.out);
    run.finish(&args.out)?;
    Ok(table)
}

#[derive(Debug, Clone)]
pub struct ExperimentArgs {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub k: usize,
    pub train: TrainConfig,
    pub out: PathBuf,
}

/// Held-out-speaker silhouettes and EERs on synthetic data, written as JSON.
pub fn cmd_experiment(args: &ExperimentArgs) -> Result<EntanglementExperiment> {
    let mut cfg = load_synth_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let mut run = Run::start("experiment", Some(cfg.seed));
    if let Some(p) = &args.config {
        run.input(p)?;
    }
    let result = run_entanglement_experiment(&cfg, args.k, &args.train)?;
    write_json(&args.out, &result)?;
    run.param("config", serde_json::to_value(&cfg).unwrap_or(Value::Null));
    run.param("k", json!(args.k));
    train_params(&mut run, &args.train);
    run.output(&args.out);
    run.finish(&args.out)?;
    Ok(result)
}
