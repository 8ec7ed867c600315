//! The `adlex` command line: one subcommand per pipeline stage, from
//! transcript parsing through training, explanation, and reporting.
//!
//! Exit codes: 0 on success, 1 on validation problems (bad flags, bad
//! config, malformed input data), 2 on runtime failures (I/O, training
//! errors). Every file the tool writes goes through an atomic
//! temp-file-and-rename, and every randomized path takes an explicit
//! seed — there is no wall-clock fallback. Logging verbosity comes from
//! the `ADLEX_LOG` environment variable (error, warn, info, debug).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::chat::{self, ChatError, CleanPolicy};
use crate::corpus::{
    self, generate_synthetic, read_cache, stratified_cv, write_cache, CorpusError, SyntheticProfile,
    Transcript,
};
use crate::divergence::{group_divergence, DivergenceError, LogBase};
use crate::lime::{self, LimeError};
use crate::markers::{correlate_markers, FeatureKind, MarkerError, MarkerResult, TagBackend};
use crate::model::{Checkpoint, ContextLayer, ModelError, ModelKind, MtlVariant};
use crate::seed;
use crate::stats::TTestVariant;
use crate::textstats::{bundled_easy_words, compare_groups, GroupComparison, TextStatsError};
use crate::trainer::{
    cross_validate, evaluate, fit, CvReport, ModelConfig, TrainSchedule, TrainerError,
};

/// A classified failure: validation errors exit 1, runtime errors 2.
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation(format!("malformed JSON: {e}"))
    }
}

impl From<ChatError> for CliError {
    fn from(e: ChatError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<TextStatsError> for CliError {
    fn from(e: TextStatsError) -> Self {
        match e {
            TextStatsError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<DivergenceError> for CliError {
    fn from(e: DivergenceError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<MarkerError> for CliError {
    fn from(e: MarkerError) -> Self {
        match e {
            MarkerError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<TrainerError> for CliError {
    fn from(e: TrainerError) -> Self {
        match e {
            TrainerError::Model(m) => m.into(),
            TrainerError::Tensor(t) => CliError::Runtime(t.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<LimeError> for CliError {
    fn from(e: LimeError) -> Self {
        match e {
            LimeError::Model(m) => m.into(),
            LimeError::SingularSystem => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "adlex",
    version,
    about = "Linguistic analysis and dementia classification over speech transcripts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
enum BaseArg {
    #[default]
    Natural,
    Two,
    Ten,
}

impl From<BaseArg> for LogBase {
    fn from(b: BaseArg) -> LogBase {
        match b {
            BaseArg::Natural => LogBase::Natural,
            BaseArg::Two => LogBase::Two,
            BaseArg::Ten => LogBase::Ten,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
enum KindArg {
    #[default]
    Pos,
    Unigram,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
enum BackendArg {
    #[default]
    Bundled,
    Sidecar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Stl,
    Siamese,
    Mtl,
    MtlDe,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> ModelKind {
        match m {
            ModelArg::Stl => ModelKind::Stl,
            ModelArg::Siamese => ModelKind::Siamese,
            ModelArg::Mtl => ModelKind::Mtl(MtlVariant::Shared),
            ModelArg::MtlDe => ModelKind::Mtl(MtlVariant::DoubleEncoder),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Parse .cha transcripts into cleaned token streams (JSONL).
    Parse {
        /// A .cha file, or a directory scanned recursively for them.
        path: PathBuf,
        /// Speaker whose utterances to extract (three-letter code).
        #[arg(long, default_value = "PAR")]
        speaker: String,
        /// Write JSONL here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Load a transcript directory plus a labels table into a JSONL dataset.
    Load {
        /// Root directory scanned recursively for .cha files.
        #[arg(long)]
        dir: PathBuf,
        /// CSV with header id,label,mmse.
        #[arg(long)]
        labels: PathBuf,
        /// Dataset file to write (one JSON transcript per line).
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare surface readability statistics between the two groups.
    Stats {
        /// Dataset produced by `load` or `synth`.
        #[arg(long)]
        data: PathBuf,
        /// Use the unequal-variance t-test instead of the pooled one.
        #[arg(long)]
        welch: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Vocabulary overlap and smoothed KL divergence between the groups.
    Divergence {
        #[arg(long)]
        data: PathBuf,
        /// Document↔collection interpolation weight.
        #[arg(long, default_value_t = 0.2)]
        alpha: f64,
        /// Logarithm base for the divergence.
        #[arg(long, value_enum, default_value_t)]
        base: BaseArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rank unigram or part-of-speech markers by group correlation.
    Markers {
        #[arg(long)]
        data: PathBuf,
        /// Feature family to correlate.
        #[arg(long, value_enum, default_value_t)]
        kind: KindArg,
        /// Drop features appearing in fewer than this many transcripts.
        #[arg(long, default_value_t = 5)]
        min_doc_freq: usize,
        /// Keep features with adjusted p below this level.
        #[arg(long, default_value_t = 0.05)]
        alpha_level: f64,
        /// Part-of-speech tag source.
        #[arg(long, value_enum, default_value_t)]
        backend: BackendArg,
        /// Tag sidecar (JSONL), required with --backend sidecar.
        #[arg(long)]
        tags: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a classifier under repeated stratified cross-validation.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Architecture to train.
        #[arg(long, value_enum)]
        model: ModelArg,
        /// Optional key=value config file overriding the defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed (required here or as `seed=` in the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for parallel folds.
        #[arg(long)]
        jobs: Option<usize>,
        /// Cross-validation report (JSON) to write.
        #[arg(long)]
        out: PathBuf,
        /// Also train one final model on a stratified split of the full
        /// dataset and save its checkpoint here.
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Explain one prediction with a local surrogate model.
    Explain {
        /// Model checkpoint written by `train --ckpt`.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Transcript id to explain.
        #[arg(long)]
        id: String,
        /// Number of perturbation samples.
        #[arg(long, default_value_t = 5000)]
        samples: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Consolidate a directory of pipeline artifacts into Markdown + JSON.
    Report {
        /// Directory holding JSON artifacts from earlier subcommands.
        dir: PathBuf,
        /// Output stem: writes <stem>.md and <stem>.json.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic labeled corpus.
    Synth {
        #[arg(long)]
        seed: u64,
        /// Transcripts per class.
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

/// All tunables accepted in a `key=value` config file, with defaults.
/// Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: Option<u64>,
    /// Severity-task weight in the joint loss.
    pub alpha: f64,
    /// Smoothing interpolation weight for divergence.
    pub alpha_d: f64,
    pub embed_dim: usize,
    /// Co-attention width (default: embed_dim / 2).
    pub k: Option<usize>,
    pub context: ContextLayer,
    pub max_len: usize,
    pub dropout: f64,
    pub val_frac: f64,
    pub cv_k: usize,
    pub cv_repeats: usize,
    pub min_doc_freq: usize,
    pub alpha_level: f64,
    pub phase1_lr: Option<f64>,
    pub phase2_lr: Option<f64>,
    pub es_patience_phase1: Option<usize>,
    pub es_patience_phase2: Option<usize>,
    pub rlrop_factor: Option<f64>,
    pub rlrop_patience: Option<usize>,
    pub max_epochs: Option<usize>,
    pub batch_size: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> RunConfig {
        RunConfig {
            seed: None,
            alpha: 0.1,
            alpha_d: 0.2,
            embed_dim: 16,
            k: None,
            context: ContextLayer::MeanContext,
            max_len: 128,
            dropout: 0.4,
            val_frac: 0.2,
            cv_k: 10,
            cv_repeats: 3,
            min_doc_freq: 5,
            alpha_level: 0.05,
            phase1_lr: None,
            phase2_lr: None,
            es_patience_phase1: None,
            es_patience_phase2: None,
            rlrop_factor: None,
            rlrop_patience: None,
            max_epochs: None,
            batch_size: None,
        }
    }
}

impl RunConfig {
    /// The training schedule for an architecture: per-kind defaults with
    /// any config overrides applied, re-validated as a whole.
    pub fn schedule_for(&self, kind: ModelKind) -> Result<TrainSchedule, CliError> {
        let mut s = TrainSchedule::for_kind(kind);
        if let Some(v) = self.phase1_lr {
            s.phase1_lr = v;
        }
        if let Some(v) = self.phase2_lr {
            s.phase2_lr = v;
        }
        if let Some(v) = self.es_patience_phase1 {
            s.es_patience_phase1 = v;
        }
        if let Some(v) = self.es_patience_phase2 {
            s.es_patience_phase2 = v;
        }
        if let Some(v) = self.rlrop_factor {
            s.rlrop_factor = v;
        }
        if let Some(v) = self.rlrop_patience {
            s.rlrop_patience = v;
        }
        if let Some(v) = self.max_epochs {
            s.max_epochs = v;
        }
        if let Some(v) = self.batch_size {
            s.batch_size = v;
        }
        s.validate()?;
        Ok(s)
    }
}

/// Parses a line-oriented `key=value` config. Blank lines and lines
/// starting with `#` are skipped; unknown keys and out-of-range values
/// are validation errors.
pub fn parse_run_config(text: &str) -> Result<RunConfig, CliError> {
    fn bad(line_no: usize, msg: String) -> CliError {
        CliError::Validation(format!("config line {line_no}: {msg}"))
    }
    fn parse<T: std::str::FromStr>(line_no: usize, key: &str, v: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        v.parse()
            .map_err(|e| bad(line_no, format!("invalid value for {key}: {e}")))
    }

    let mut cfg = RunConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(line_no, format!("expected key=value, got {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "seed" => cfg.seed = Some(parse(line_no, key, value)?),
            "alpha" => cfg.alpha = parse(line_no, key, value)?,
            "alpha_d" => cfg.alpha_d = parse(line_no, key, value)?,
            "embed_dim" => cfg.embed_dim = parse(line_no, key, value)?,
            "k" => cfg.k = Some(parse(line_no, key, value)?),
            "context" => {
                cfg.context = match value {
                    "mean" => ContextLayer::MeanContext,
                    "self-attn" => ContextLayer::SelfAttnLayer,
                    other => {
                        return Err(bad(
                            line_no,
                            format!("context must be mean or self-attn, got {other:?}"),
                        ))
                    }
                }
            }
            "max_len" => cfg.max_len = parse(line_no, key, value)?,
            "dropout" => cfg.dropout = parse(line_no, key, value)?,
            "val_frac" => cfg.val_frac = parse(line_no, key, value)?,
            "cv_k" => cfg.cv_k = parse(line_no, key, value)?,
            "cv_repeats" => cfg.cv_repeats = parse(line_no, key, value)?,
            "min_doc_freq" => cfg.min_doc_freq = parse(line_no, key, value)?,
            "alpha_level" => cfg.alpha_level = parse(line_no, key, value)?,
            "phase1_lr" => cfg.phase1_lr = Some(parse(line_no, key, value)?),
            "phase2_lr" => cfg.phase2_lr = Some(parse(line_no, key, value)?),
            "es_patience_phase1" => cfg.es_patience_phase1 = Some(parse(line_no, key, value)?),
            "es_patience_phase2" => cfg.es_patience_phase2 = Some(parse(line_no, key, value)?),
            "rlrop_factor" => cfg.rlrop_factor = Some(parse(line_no, key, value)?),
            "rlrop_patience" => cfg.rlrop_patience = Some(parse(line_no, key, value)?),
            "max_epochs" => cfg.max_epochs = Some(parse(line_no, key, value)?),
            "batch_size" => cfg.batch_size = Some(parse(line_no, key, value)?),
            other => return Err(bad(line_no, format!("unknown config key {other:?}"))),
        }
    }

    let range = |ok: bool, msg: &str| -> Result<(), CliError> {
        if ok {
            Ok(())
        } else {
            Err(CliError::Validation(format!("config: {msg}")))
        }
    };
    range(
        (0.0..=1.0).contains(&cfg.alpha),
        "alpha must be in [0,1]",
    )?;
    range(
        (0.0..=1.0).contains(&cfg.alpha_d),
        "alpha_d must be in [0,1]",
    )?;
    range(cfg.embed_dim >= 2, "embed_dim must be >= 2")?;
    range(cfg.k.map_or(true, |k| k >= 1), "k must be >= 1")?;
    range(cfg.max_len >= 1, "max_len must be >= 1")?;
    range(
        (0.0..1.0).contains(&cfg.dropout),
        "dropout must be in [0,1)",
    )?;
    range(
        cfg.val_frac > 0.0 && cfg.val_frac <= 0.5,
        "val_frac must be in (0,0.5]",
    )?;
    range(cfg.cv_k >= 2, "cv_k must be >= 2")?;
    range(cfg.cv_repeats >= 1, "cv_repeats must be >= 1")?;
    range(cfg.min_doc_freq >= 1, "min_doc_freq must be >= 1")?;
    range(
        cfg.alpha_level > 0.0 && cfg.alpha_level < 1.0,
        "alpha_level must be in (0,1)",
    )?;
    range(
        cfg.phase1_lr.map_or(true, |v| v > 0.0 && v.is_finite()),
        "phase1_lr must be positive",
    )?;
    range(
        cfg.phase2_lr.map_or(true, |v| v > 0.0 && v.is_finite()),
        "phase2_lr must be positive",
    )?;
    range(
        cfg.rlrop_factor.map_or(true, |v| v > 0.0 && v < 1.0),
        "rlrop_factor must be in (0,1)",
    )?;
    range(
        cfg.es_patience_phase1.map_or(true, |v| v >= 1),
        "es_patience_phase1 must be >= 1",
    )?;
    range(
        cfg.es_patience_phase2.map_or(true, |v| v >= 1),
        "es_patience_phase2 must be >= 1",
    )?;
    range(
        cfg.rlrop_patience.map_or(true, |v| v >= 1),
        "rlrop_patience must be >= 1",
    )?;
    range(
        cfg.max_epochs.map_or(true, |v| v >= 1),
        "max_epochs must be >= 1",
    )?;
    range(
        cfg.batch_size.map_or(true, |v| v >= 1),
        "batch_size must be >= 1",
    )?;
    Ok(cfg)
}

/// Initializes logging from `ADLEX_LOG` (default `warn`).
pub fn init_logging() {
    let level = std::env::var("ADLEX_LOG").unwrap_or_else(|_| "warn".to_string());
    let _ = env_logger::Builder::new()
        .parse_filters(&level)
        .format_timestamp(None)
        .try_init();
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Parse { path, speaker, out } => cmd_parse(&path, &speaker, out.as_deref()),
        Command::Load { dir, labels, out } => cmd_load(&dir, &labels, &out),
        Command::Stats { data, welch, out } => cmd_stats(&data, welch, out.as_deref()),
        Command::Divergence {
            data,
            alpha,
            base,
            out,
        } => cmd_divergence(&data, alpha, base.into(), out.as_deref()),
        Command::Markers {
            data,
            kind,
            min_doc_freq,
            alpha_level,
            backend,
            tags,
            out,
        } => cmd_markers(
            &data,
            kind,
            min_doc_freq,
            alpha_level,
            backend,
            tags.as_deref(),
            out.as_deref(),
        ),
        Command::Train {
            data,
            model,
            config,
            seed,
            jobs,
            out,
            ckpt,
        } => cmd_train(
            &data,
            model,
            config.as_deref(),
            seed,
            jobs,
            &out,
            ckpt.as_deref(),
        ),
        Command::Explain {
            model,
            data,
            id,
            samples,
            seed,
            out,
        } => cmd_explain(&model, &data, &id, samples, seed, out.as_deref()),
        Command::Report { dir, out } => cmd_report(&dir, &out),
        Command::Synth { seed, n, out } => cmd_synth(seed, n, &out),
    }
}

/// Writes pretty JSON to `out` (atomically, with a trailing newline) or
/// to stdout.
fn emit_json<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| CliError::Runtime(format!("serialization failed: {e}")))?;
    bytes.push(b'\n');
    match out {
        Some(path) => {
            crate::write_atomic(path, &bytes)?;
            println!("wrote {}", path.display());
        }
        None => std::io::stdout().write_all(&bytes)?,
    }
    Ok(())
}

fn read_dataset(path: &Path) -> Result<Vec<Transcript>, CliError> {
    Ok(read_cache(path)?)
}

fn cmd_parse(path: &Path, speaker: &str, out: Option<&Path>) -> Result<(), CliError> {
    let mut files: Vec<PathBuf> = if path.is_dir() {
        walkdir::WalkDir::new(path)
            .sort_by_file_name()
            .into_iter()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_type().is_file())
            .map(|e| e.into_path())
            .filter(|p| p.extension().is_some_and(|x| x == "cha"))
            .collect()
    } else {
        vec![path.to_path_buf()]
    };
    files.sort();
    if files.is_empty() {
        return Err(CliError::Validation(format!(
            "no .cha files under {}",
            path.display()
        )));
    }

    let policy = CleanPolicy::default();
    let mut lines = String::new();
    for file in &files {
        let text = fs::read_to_string(file)?;
        let doc = chat::parse_chat(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", file.display())))?;
        let utterances = chat::participant_utterances(&doc, speaker);
        let mut tokens = Vec::new();
        for u in &utterances {
            tokens.extend(
                chat::clean_utterance(u, &policy)
                    .map_err(|e| CliError::Validation(format!("{}: {e}", file.display())))?,
            );
        }
        let id = file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let record = serde_json::json!({
            "id": id,
            "tokens": tokens,
            "n_utterances": utterances.len(),
        });
        lines.push_str(&serde_json::to_string(&record)?);
        lines.push('\n');
    }
    match out {
        Some(path) => {
            crate::write_atomic(path, lines.as_bytes())?;
            println!("wrote {} transcripts to {}", files.len(), path.display());
        }
        None => std::io::stdout().write_all(lines.as_bytes())?,
    }
    Ok(())
}

fn cmd_load(dir: &Path, labels: &Path, out: &Path) -> Result<(), CliError> {
    let dataset = corpus::load_corpus(dir, labels)?;
    write_cache(out, &dataset)?;
    println!("wrote {} transcripts to {}", dataset.len(), out.display());
    Ok(())
}

fn cmd_stats(data: &Path, welch: bool, out: Option<&Path>) -> Result<(), CliError> {
    let dataset = read_dataset(data)?;
    let variant = if welch {
        TTestVariant::Welch
    } else {
        TTestVariant::Student
    };
    let rows = compare_groups(&dataset, &bundled_easy_words(), variant)?;
    emit_json(&rows, out)
}

fn cmd_divergence(
    data: &Path,
    alpha: f64,
    base: LogBase,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let dataset = read_dataset(data)?;
    let result = group_divergence(&dataset, alpha, base)?;
    emit_json(&result, out)
}

fn cmd_markers(
    data: &Path,
    kind: KindArg,
    min_doc_freq: usize,
    alpha_level: f64,
    backend: BackendArg,
    tags: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let dataset = read_dataset(data)?;
    let backend = match backend {
        BackendArg::Bundled => TagBackend::from_name("bundled", None)?,
        BackendArg::Sidecar => {
            let tags = tags.ok_or_else(|| {
                CliError::Validation("--backend sidecar requires --tags <file>".into())
            })?;
            TagBackend::from_name("sidecar", Some(tags))?
        }
    };
    let kind = match kind {
        KindArg::Pos => FeatureKind::Pos,
        KindArg::Unigram => FeatureKind::Unigram,
    };
    let results = correlate_markers(&dataset, kind, min_doc_freq, alpha_level, &backend)?;
    emit_json(&results, out)
}

fn cmd_train(
    data: &Path,
    model: ModelArg,
    config: Option<&Path>,
    seed_flag: Option<u64>,
    jobs: Option<usize>,
    out: &Path,
    ckpt: Option<&Path>,
) -> Result<(), CliError> {
    let cfg = match config {
        Some(path) => parse_run_config(&fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    let master_seed = seed_flag.or(cfg.seed).ok_or_else(|| {
        CliError::Validation(
            "training is randomized: pass --seed or set seed= in the config".into(),
        )
    })?;
    if let Some(jobs) = jobs {
        if jobs == 0 {
            return Err(CliError::Validation("--jobs must be >= 1".into()));
        }
        // Ignore the error if a pool already exists (e.g. in tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }

    let kind: ModelKind = model.into();
    let dataset = read_dataset(data)?;
    let plan = stratified_cv(&dataset, cfg.cv_k, cfg.cv_repeats, cfg.val_frac, master_seed)?;
    let model_config = ModelConfig {
        kind,
        context: cfg.context,
        embed_dim: cfg.embed_dim,
        max_len: cfg.max_len,
        k: cfg.k,
        dropout: cfg.dropout,
    };
    let schedule = cfg.schedule_for(kind)?;
    let report = cross_validate(
        &dataset,
        &model_config,
        &schedule,
        cfg.alpha,
        &plan,
        master_seed,
    )?;

    let mut bytes = serde_json::to_vec_pretty(&report)
        .map_err(|e| CliError::Runtime(format!("serialization failed: {e}")))?;
    bytes.push(b'\n');
    crate::write_atomic(out, &bytes)?;
    println!(
        "wrote {} ({} folds, accuracy {:.4} ± {:.4})",
        out.display(),
        report.folds.len(),
        report.mean.accuracy,
        report.std.accuracy
    );

    if let Some(ckpt_path) = ckpt {
        train_final_checkpoint(&dataset, &model_config, &schedule, &cfg, master_seed, ckpt_path)?;
        println!("wrote {}", ckpt_path.display());
    }
    Ok(())
}

/// Trains the deliverable model: everything except one stratified
/// validation split serves as training data, and the best-validation
/// weights are checkpointed.
fn train_final_checkpoint(
    dataset: &[Transcript],
    model_config: &ModelConfig,
    schedule: &TrainSchedule,
    cfg: &RunConfig,
    master_seed: u64,
    ckpt_path: &Path,
) -> Result<(), CliError> {
    let split_seed = seed::mix(master_seed, "final-split", &[]);
    let plan = stratified_cv(dataset, 5, 1, cfg.val_frac, split_seed)?;
    let fold = &plan.folds[0];
    let by_id: BTreeMap<&str, &Transcript> =
        dataset.iter().map(|t| (t.id.as_str(), t)).collect();
    let gather = |ids: &[String]| -> Vec<Transcript> {
        ids.iter()
            .filter_map(|id| by_id.get(id.as_str()).map(|&t| t.clone()))
            .collect()
    };
    let mut train_set = gather(&fold.train_ids);
    train_set.extend(gather(&fold.test_ids));
    let val_set = gather(&fold.val_ids);

    let model = model_config.build(&train_set)?;
    let init = model.init_params(seed::mix(master_seed, "final-init", &[]));
    let fitted = fit(
        &model,
        init,
        &train_set,
        &val_set,
        schedule,
        cfg.alpha,
        seed::mix(master_seed, "final-train", &[]),
    )?;
    let metrics = evaluate(&model, &fitted.params, &train_set)?;
    log::info!(
        "final model training accuracy {:.4} over {} transcripts",
        metrics.accuracy,
        train_set.len()
    );
    Checkpoint::new(&model, fitted.params).save(ckpt_path)?;
    Ok(())
}

fn cmd_explain(
    model_path: &Path,
    data: &Path,
    id: &str,
    samples: usize,
    seed_value: u64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let (model, params) = Checkpoint::load(model_path)?.into_model()?;
    let dataset = read_dataset(data)?;
    let transcript = dataset
        .iter()
        .find(|t| t.id == id)
        .ok_or_else(|| CliError::Validation(format!("no transcript with id {id:?}")))?;
    let explanation = lime::explain(&model, &params, transcript, samples, seed_value)?;
    emit_json(&explanation, out)
}

fn cmd_synth(seed_value: u64, n: usize, out: &Path) -> Result<(), CliError> {
    if n == 0 {
        return Err(CliError::Validation("--n must be >= 1".into()));
    }
    let dataset = generate_synthetic(seed_value, n, &SyntheticProfile::default());
    write_cache(out, &dataset)?;
    println!("wrote {} transcripts to {}", dataset.len(), out.display());
    Ok(())
}

/// Artifacts a report can absorb, in render order.
#[derive(Default)]
struct Artifacts {
    stats: Vec<(String, Vec<GroupComparison>)>,
    divergence: Vec<(String, crate::divergence::GroupDivergence)>,
    markers: Vec<(String, Vec<MarkerResult>)>,
    training: Vec<(String, CvReport)>,
}

fn classify_artifact(name: &str, text: &str, artifacts: &mut Artifacts) -> Result<bool, CliError> {
    let value: serde_json::Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(_) => return Ok(false),
    };
    if value.get("folds").is_some() {
        artifacts
            .training
            .push((name.to_string(), serde_json::from_value(value)?));
        return Ok(true);
    }
    if value.get("jaccard").is_some() {
        artifacts
            .divergence
            .push((name.to_string(), serde_json::from_value(value)?));
        return Ok(true);
    }
    if value.get("intercept").is_some() {
        // Explanation artifacts are valid pipeline outputs but have no
        // tabular section in the consolidated report.
        return Ok(true);
    }
    if let Some(items) = value.as_array() {
        let first_key = items.first().and_then(|v| v.as_object()).map(|o| {
            if o.contains_key("metric_name") {
                "stats"
            } else if o.contains_key("feature") {
                "markers"
            } else {
                "unknown"
            }
        });
        match first_key {
            Some("stats") => {
                artifacts
                    .stats
                    .push((name.to_string(), serde_json::from_value(value)?));
                return Ok(true);
            }
            // An empty array can only come from the marker pipeline: the
            // stats table always has its four fixed rows.
            Some("markers") | None => {
                artifacts
                    .markers
                    .push((name.to_string(), serde_json::from_value(value)?));
                return Ok(true);
            }
            _ => return Ok(false),
        }
    }
    Ok(false)
}

fn cmd_report(dir: &Path, out_stem: &Path) -> Result<(), CliError> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)?
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    names.sort();

    let mut artifacts = Artifacts::default();
    let mut recognized = 0usize;
    for path in &names {
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let text = fs::read_to_string(path)?;
        if classify_artifact(&name, &text, &mut artifacts)? {
            recognized += 1;
        } else {
            log::warn!("unrecognized artifact {name}, skipping");
        }
    }
    if recognized == 0 {
        return Err(CliError::Validation(format!(
            "no recognized artifacts in {}",
            dir.display()
        )));
    }

    let markdown = render_markdown(&artifacts);
    let summary = render_summary(&artifacts);

    let md_path = out_stem.with_extension("md");
    let json_path = out_stem.with_extension("json");
    crate::write_atomic(&md_path, markdown.as_bytes())?;
    let mut bytes = serde_json::to_vec_pretty(&summary)
        .map_err(|e| CliError::Runtime(format!("serialization failed: {e}")))?;
    bytes.push(b'\n');
    crate::write_atomic(&json_path, &bytes)?;
    println!("wrote {} and {}", md_path.display(), json_path.display());
    Ok(())
}

fn render_markdown(artifacts: &Artifacts) -> String {
    let mut md = String::from("# Pipeline report\n");

    for (name, rows) in &artifacts.stats {
        md.push_str(&format!("\n## Readability statistics ({name})\n\n"));
        md.push_str("| metric | control mean ± std | dementia mean ± std | t | p | p (adj) | significant |\n");
        md.push_str("|---|---|---|---|---|---|---|\n");
        for r in rows {
            md.push_str(&format!(
                "| {} | {:.4} ± {:.4} | {:.4} ± {:.4} | {:.4} | {:.6} | {:.6} | {} |\n",
                r.metric_name,
                r.control_mean,
                r.control_std,
                r.dementia_mean,
                r.dementia_std,
                r.t,
                r.p,
                r.p_adjusted,
                if r.significant { "yes" } else { "no" }
            ));
        }
    }

    for (name, d) in &artifacts.divergence {
        md.push_str(&format!("\n## Vocabulary overlap ({name})\n\n"));
        md.push_str("| group | unique words |\n|---|---|\n");
        md.push_str(&format!("| control | {} |\n", d.control_vocab));
        md.push_str(&format!("| dementia | {} |\n", d.dementia_vocab));
        md.push_str(&format!("| combined | {} |\n", d.collection_vocab));
        md.push_str(&format!("\nJaccard similarity: **{:.4}**\n", d.jaccard));

        md.push_str(&format!("\n## Distribution divergence ({name})\n\n"));
        md.push_str(&format!(
            "Smoothed with interpolation weight {:.3}.\n\n",
            d.alpha_d
        ));
        md.push_str("| direction | divergence |\n|---|---|\n");
        md.push_str(&format!(
            "| control → dementia | {:.6} |\n",
            d.kl_control_dementia
        ));
        md.push_str(&format!(
            "| dementia → control | {:.6} |\n",
            d.kl_dementia_control
        ));
    }

    for (name, rows) in &artifacts.markers {
        md.push_str(&format!("\n## Marker correlations ({name})\n\n"));
        if rows.is_empty() {
            md.push_str("No significant markers at the configured level.\n");
            continue;
        }
        md.push_str("| feature | kind | r | p (adj) | direction |\n|---|---|---|---|---|\n");
        for r in rows {
            md.push_str(&format!(
                "| {} | {:?} | {:+.4} | {:.6} | {:?} |\n",
                r.feature, r.kind, r.r, r.p_adjusted, r.direction
            ));
        }
    }

    for (name, report) in &artifacts.training {
        md.push_str(&format!("\n## Classification performance ({name})\n\n"));
        md.push_str(&format!(
            "{:?} model, {}-fold × {} cross-validation, seed {}.\n\n",
            report.model.kind, report.k, report.repeats, report.seed
        ));
        md.push_str("| metric | mean ± std |\n|---|---|\n");
        let rows = [
            ("accuracy", report.mean.accuracy, report.std.accuracy),
            ("precision", report.mean.precision, report.std.precision),
            ("recall", report.mean.recall, report.std.recall),
            ("f1", report.mean.f1, report.std.f1),
            (
                "specificity",
                report.mean.specificity,
                report.std.specificity,
            ),
        ];
        for (label, mean, std) in rows {
            md.push_str(&format!("| {label} | {mean:.4} ± {std:.4} |\n"));
        }
    }

    md
}

fn render_summary(artifacts: &Artifacts) -> serde_json::Value {
    let to_map = |entries: Vec<(String, serde_json::Value)>| {
        entries
            .into_iter()
            .collect::<serde_json::Map<String, serde_json::Value>>()
    };
    let stats = artifacts
        .stats
        .iter()
        .map(|(n, v)| (n.clone(), serde_json::to_value(v).unwrap_or_default()))
        .collect();
    let divergence = artifacts
        .divergence
        .iter()
        .map(|(n, v)| (n.clone(), serde_json::to_value(v).unwrap_or_default()))
        .collect();
    let markers = artifacts
        .markers
        .iter()
        .map(|(n, v)| (n.clone(), serde_json::to_value(v).unwrap_or_default()))
        .collect();
    let training = artifacts
        .training
        .iter()
        .map(|(n, v)| (n.clone(), serde_json::to_value(v).unwrap_or_default()))
        .collect();
    serde_json::json!({
        "stats": to_map(stats),
        "divergence": to_map(divergence),
        "markers": to_map(markers),
        "training": to_map(training),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_overrides() {
        let cfg = parse_run_config("").unwrap();
        assert_eq!(cfg, RunConfig::default());

        let cfg = parse_run_config(
            "# comment\n\nseed = 7\nembed_dim = 8\ncontext = self-attn\nphase1_lr = 0.05\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, Some(7));
        assert_eq!(cfg.embed_dim, 8);
        assert_eq!(cfg.context, ContextLayer::SelfAttnLayer);
        assert_eq!(cfg.phase1_lr, Some(0.05));

        let schedule = cfg.schedule_for(ModelKind::Stl).unwrap();
        assert_eq!(schedule.phase1_lr, 0.05);
        assert_eq!(schedule.es_patience_phase1, 9);
    }

    #[test]
    fn config_rejects_unknown_keys_and_bad_values() {
        assert!(matches!(
            parse_run_config("learning_rate = 3"),
            Err(CliError::Validation(msg)) if msg.contains("unknown config key")
        ));
        assert!(matches!(
            parse_run_config("alpha = 1.5"),
            Err(CliError::Validation(msg)) if msg.contains("alpha")
        ));
        assert!(matches!(
            parse_run_config("embed_dim = one"),
            Err(CliError::Validation(msg)) if msg.contains("invalid value")
        ));
        assert!(matches!(
            parse_run_config("just a line"),
            Err(CliError::Validation(msg)) if msg.contains("key=value")
        ));
        assert!(matches!(
            parse_run_config("rlrop_factor = 1.5"),
            Err(CliError::Validation(_))
        ));
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["adlex", "frobnicate"]), 1);
        assert_eq!(run(["adlex", "synth", "--none-such"]), 1);
        assert_eq!(run(["adlex"]), 1);
        assert_eq!(run(["adlex", "--help"]), 0);
    }

    #[test]
    fn synth_requires_seed() {
        // --seed has no default: omitting it is a usage error.
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("data.jsonl");
        let out_s = out.display().to_string();
        assert_eq!(run(["adlex", "synth", "--n", "5", "--out", &out_s]), 1);
        assert!(!out.exists());
        assert_eq!(
            run(["adlex", "synth", "--seed", "1", "--n", "5", "--out", &out_s]),
            0
        );
        assert!(out.exists());
    }

    #[test]
    fn train_without_any_seed_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data.jsonl");
        let data_s = data.display().to_string();
        assert_eq!(
            run(["adlex", "synth", "--seed", "3", "--n", "8", "--out", &data_s]),
            0
        );
        let out = dir.path().join("report.json");
        assert_eq!(
            run([
                "adlex",
                "train",
                "--data",
                &data_s,
                "--model",
                "stl",
                "--out",
                &out.display().to_string(),
            ]),
            1
        );
        assert!(!out.exists());
    }

    #[test]
    fn report_on_empty_dir_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("report");
        assert_eq!(
            run([
                "adlex",
                "report",
                &dir.path().display().to_string(),
                "--out",
                &stem.display().to_string(),
            ]),
            1
        );
    }

    #[test]
    fn classify_empty_array_as_markers() {
        let mut artifacts = Artifacts::default();
        assert!(classify_artifact("m.json", "[]", &mut artifacts).unwrap());
        assert_eq!(artifacts.markers.len(), 1);
        assert!(artifacts.markers[0].1.is_empty());
    }
}
