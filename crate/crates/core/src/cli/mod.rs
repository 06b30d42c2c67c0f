//! Command-line harness: `phantom`, `preprocess`, `train`, `evaluate`,
//! `sweep` and `report`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

pub mod config;
mod sweep;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{ExperimentConfig, MaskMethod};
pub use sweep::{gnuplot_columns, run_sweep, SweepOutcome, SweepRow, SWEEP_FILE};

use crate::dataset::{load_split, preprocess_manifest};
use crate::error::Error;
use crate::fsutil;
use crate::manifest::Split;
use crate::metrics::evaluate;
use crate::phantom::{generate_dataset, write_dataset, PhantomSpec, PRESETS};
use crate::pipeline::{MaskSource, PreprocessConfig};
use crate::training::{checkpoint, load_checkpoint, train_with, Scenario, TrainingCase};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Run(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Run(Error::NonFinite { .. }) => EXIT_NUMERIC,
            CliError::Run(_) => EXIT_DATA,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Run(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T = ()> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "maskseg",
    version,
    about = "Structure segmentation with global binary masks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset (MVOL volumes and a manifest).
    Phantom(PhantomArgs),
    /// Resample, crop, normalize and build global masks for a manifest.
    Preprocess(PreprocessArgs),
    /// Train one model from a config file.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one manifest split.
    Evaluate(EvaluateArgs),
    /// Run the scenario × training-size × seed matrix from a config file.
    Sweep(SweepArgs),
    /// Print gnuplot-ready columns from a sweep or history CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct PhantomArgs {
    /// Preset name (brain, heart).
    #[arg(long, default_value = "brain", conflicts_with = "spec")]
    preset: String,
    /// Phantom spec file instead of a preset.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    train: usize,
    #[arg(long, default_value_t = 4)]
    val: usize,
    #[arg(long, default_value_t = 8)]
    test: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PreprocessArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Isotropic target spacing in mm.
    #[arg(long, default_value_t = 1.5)]
    spacing: f64,
    /// Cubic crop size in voxels.
    #[arg(long, default_value_t = 128)]
    size: usize,
    /// Global mask source: threshold, labels or provided.
    #[arg(long, default_value = "threshold")]
    mask: String,
    #[arg(long, default_value_t = -300.0, allow_hyphen_values = true)]
    threshold: f32,
    #[arg(long, default_value_t = 2)]
    closing_radius: usize,
    #[arg(long, default_value_t = 2)]
    dilation_radius: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Experiment config (key = value).
    config: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Processed manifest.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long)]
    out: PathBuf,
    /// Fail unless the checkpoint was trained for this scenario.
    #[arg(long)]
    scenario: Option<String>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    config: PathBuf,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Sweep CSV or training history CSV.
    input: PathBuf,
    /// Write here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> CliResult {
    match cmd {
        Command::Phantom(a) => cmd_phantom(a),
        Command::Preprocess(a) => cmd_preprocess(a),
        Command::Train(a) => cmd_train(&a.config),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Sweep(a) => cmd_sweep(&a.config),
        Command::Report(a) => cmd_report(a),
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn cmd_phantom(a: PhantomArgs) -> CliResult {
    let spec = match &a.spec {
        Some(p) => PhantomSpec::parse(&fsutil::read_string(p)?)?,
        None => PhantomSpec::preset(&a.preset).ok_or_else(|| {
            usage(format!(
                "unknown preset {:?}; available: {}",
                a.preset,
                PRESETS.join(", ")
            ))
        })?,
    };
    let ds = generate_dataset(&spec, a.train, a.val, a.test, a.seed)?;
    let path = write_dataset(&ds, &a.out)?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_preprocess(a: PreprocessArgs) -> CliResult {
    let mask = match MaskMethod::parse(&a.mask).map_err(|e| usage(e.to_string()))? {
        MaskMethod::Threshold => MaskSource::Threshold {
            threshold_hu: a.threshold,
            closing_radius: a.closing_radius,
        },
        MaskMethod::Labels => MaskSource::Labels {
            dilation_radius: a.dilation_radius,
        },
        MaskMethod::Provided => MaskSource::Provided,
    };
    let cfg = PreprocessConfig {
        target_spacing: [a.spacing; 3],
        size: [a.size; 3],
        mask,
        ..Default::default()
    };
    let path = preprocess_manifest(&a.manifest, &cfg, &a.out)?;
    println!("{}", path.display());
    Ok(())
}

fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    ExperimentConfig::load(path).map_err(|e| match e {
        Error::Io { .. } => CliError::Run(e),
        other => usage(other.to_string()),
    })
}

/// Train and validation cases of a processed manifest, the training split
/// cut to its first `n_train` subjects (0 keeps all).
pub(crate) fn load_train_val(
    manifest: &Path,
    n_train: usize,
) -> CliResult<(Vec<String>, Vec<TrainingCase>, Vec<TrainingCase>)> {
    let (m, mut train) = load_split(manifest, Split::Train)?;
    let (_, val) = load_split(manifest, Split::Val)?;
    if val.is_empty() {
        return Err(CliError::Run(Error::contract(format!(
            "{} has no validation subjects (split `val`)",
            manifest.display()
        ))));
    }
    if n_train > 0 {
        if n_train > train.len() {
            return Err(CliError::Run(Error::contract(format!(
                "n_train = {n_train} but {} lists {} training subjects",
                manifest.display(),
                train.len()
            ))));
        }
        train.truncate(n_train);
    }
    Ok((m.structures, train, val))
}

fn cmd_train(config: &Path) -> CliResult {
    let c = load_config(config)?;
    let manifest = c
        .manifest
        .clone()
        .ok_or_else(|| usage("train needs `manifest = <processed manifest>` in the config"))?;
    let (structures, train, val) = load_train_val(&manifest, c.n_train)?;
    let tc = c.train_config(c.scenario, c.seed, structures.len(), Some(c.output.clone()));
    eprintln!(
        "training {} on {} subjects ({} validation), {} epochs",
        c.scenario,
        train.len(),
        val.len(),
        tc.epochs_for(train.len())
    );
    let out = train_with(&tc, &train, &val, |r| {
        if let Some(v) = r.val_loss {
            eprintln!(
                "epoch {:4}  train {:.5}  val {:.5}  {:.2}s",
                r.epoch, r.train_loss, v, r.seconds
            );
        }
    })?;
    fsutil::write_atomic(
        &c.output.join("history.csv"),
        out.history.to_csv().as_bytes(),
    )?;
    println!("{}", c.output.join(checkpoint::BEST_FILE).display());
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> CliResult {
    let split: Split = a.split.parse().map_err(|e: Error| usage(e.to_string()))?;
    let ck = load_checkpoint(&a.checkpoint)?;
    if let Some(s) = &a.scenario {
        let want: Scenario = s.parse().map_err(|e: Error| usage(e.to_string()))?;
        if want != ck.scenario {
            return Err(CliError::Run(Error::contract(format!(
                "checkpoint was trained for {}, not {want}",
                ck.scenario
            ))));
        }
    }
    let (m, cases) = load_split(&a.manifest, split)?;
    if ck.model.config().out_channels != m.structures.len() {
        return Err(CliError::Run(Error::contract(format!(
            "checkpoint predicts {} structures, manifest names {}",
            ck.model.config().out_channels,
            m.structures.len()
        ))));
    }
    let report = evaluate(&ck.model, &cases, ck.scenario, &m.structures)?;
    let path = a.out.join("report.csv");
    fsutil::write_atomic(&path, report.to_csv().as_bytes())?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_sweep(config: &Path) -> CliResult {
    let c = load_config(config)?;
    let outcome = run_sweep(&c, |msg| eprintln!("{msg}"))?;
    println!("{}", outcome.csv_path.display());
    match outcome.first_failure {
        Some(e) => Err(CliError::Run(e)),
        None => Ok(()),
    }
}

fn cmd_report(a: ReportArgs) -> CliResult {
    let text = fsutil::read_string(&a.input)?;
    let out = gnuplot_columns(&text)?;
    match a.out {
        Some(p) => fsutil::write_atomic(&p, out.as_bytes())?,
        None => print!("{out}"),
    }
    Ok(())
}
