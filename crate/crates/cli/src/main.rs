//! `xferlab`: validate feature stores, generate synthetic corpora, train,
//! probe and emit reports.
//!
//! Exit codes: 0 success, 2 validation failure, 3 training divergence,
//! 4 i/o error, 64 usage error. Logs go to stderr; stdout carries only the
//! final summary.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{ArgGroup, Parser, Subcommand};
use xferlab_core::feature_store::{validate_manifest, CorpusManifest, ManifestError, ValidationOptions};
use xferlab_core::pipeline::{
    build_reports, run_mode, run_probe, write_metadata, write_mode, write_probe, write_reports, ExperimentConfig,
    FailureClass, Mode, PipelineError, Sources,
};
use xferlab_core::synthgen::{gen_pair, SynthSpec};

const EXIT_VALIDATION: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;
const EXIT_IO: u8 = 4;
const EXIT_USAGE: u8 = 64;

#[derive(Debug, Parser)]
#[command(name = "xferlab", version, about = "Block-wise probing and multi-task transfer for dialogue-level features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check a corpus manifest and its feature files; prints the violations as JSON.
    Validate {
        manifest: PathBuf,
        /// Upper end of the valid severity range.
        #[arg(long, default_value_t = 24.0)]
        severity_max: f64,
    },
    /// Generate a synthetic AD/depression corpus pair from a spec file.
    Synth { spec: PathBuf, out_dir: PathBuf },
    /// Train over several seeds and write run reports.
    #[command(group(ArgGroup::new("mode").required(true).args(["single", "joint", "dep_only"])))]
    Train {
        config: PathBuf,
        /// AD task alone.
        #[arg(long)]
        single: bool,
        /// AD and depression through the shared encoder.
        #[arg(long)]
        joint: bool,
        /// Depression task alone.
        #[arg(long)]
        dep_only: bool,
        #[command(flatten)]
        common: Common,
        /// Weight of the depression loss.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Train one AD classifier per block, plus the weighted combination.
    Probe {
        config: PathBuf,
        /// Blocks given their own row, e.g. 1,3,5,7,9,11.
        #[arg(long, value_delimiter = ',')]
        blocks: Option<Vec<u16>>,
        #[command(flatten)]
        common: Common,
    },
    /// Rebuild the tables from the results in a run directory.
    Report { run_dir: PathBuf },
}

#[derive(Debug, clap::Args)]
struct Common {
    /// Comma-separated training seeds, e.g. 0,1,2,3,4.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Output run directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Pipeline(PipelineError),
    Manifest(ManifestError),
    /// Already reported on stderr.
    Failed(u8),
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        CliError::Pipeline(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Pipeline(e) => match e.class() {
                FailureClass::Validation => EXIT_VALIDATION,
                FailureClass::Divergence => EXIT_DIVERGENCE,
                FailureClass::Io => EXIT_IO,
            },
            CliError::Manifest(ManifestError::Io { .. }) => EXIT_IO,
            CliError::Manifest(ManifestError::Parse { .. }) => EXIT_VALIDATION,
            CliError::Failed(code) => *code,
        }
    }
}

fn log(msg: impl AsRef<str>) {
    eprintln!("[xferlab] {}", msg.as_ref());
}

fn load_config(path: &Path, common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seeds) = &common.seeds {
        cfg.train.seeds = seeds.clone();
    }
    cfg.train.validate().map_err(PipelineError::from)?;
    Ok(cfg)
}

/// Rewrites the tables of `run_dir`, prints them, and fails on violated
/// report invariants.
fn emit_reports(run_dir: &Path) -> Result<(), CliError> {
    if !run_dir.is_dir() {
        log(format!("run directory {} does not exist", run_dir.display()));
        return Err(CliError::Failed(EXIT_IO));
    }
    let set = build_reports(run_dir)?;
    if set.is_empty() {
        log(format!("{} holds no run or probe reports", run_dir.display()));
        return Err(CliError::Failed(EXIT_VALIDATION));
    }
    let violations = write_reports(run_dir, &set)?;
    print!("{}", set.summary());
    if !violations.is_empty() {
        for v in &violations {
            log(format!("report invariant violated: {v}"));
        }
        return Err(CliError::Failed(EXIT_VALIDATION));
    }
    Ok(())
}

fn validate(manifest: &Path, severity_max: f64) -> Result<(), CliError> {
    let m = CorpusManifest::load(manifest).map_err(CliError::Manifest)?;
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    let report = validate_manifest(&m, base, &ValidationOptions { severity_range: (0.0, severity_max) });
    println!("{}", serde_json::to_string_pretty(&report.violations).expect("violations serialize"));
    if report.is_valid() {
        log(format!("{}: {} dialogues, no violations", manifest.display(), m.dialogues.len()));
        Ok(())
    } else {
        log(format!("{}: {} violation(s)", manifest.display(), report.violations.len()));
        Err(CliError::Failed(EXIT_VALIDATION))
    }
}

fn synth(spec: &Path, out_dir: &Path) -> Result<(), CliError> {
    let spec = SynthSpec::load(spec).map_err(PipelineError::from)?;
    let (data, pair) = gen_pair(&spec, out_dir).map_err(PipelineError::from)?;
    log(format!("wrote {} AD and {} depression dialogues", data.ad.len(), data.dep.len()));
    println!("ad_manifest\t{}", pair.ad_manifest.display());
    println!("dep_manifest\t{}", pair.dep_manifest.display());
    Ok(())
}

fn train(config: &Path, mode: Mode, common: &Common, lambda: Option<f64>) -> Result<(), CliError> {
    let mut cfg = load_config(config, common)?;
    if let Some(l) = lambda {
        cfg.train.lambda_dep = l;
        cfg.train.validate().map_err(PipelineError::from)?;
    }
    let src = Sources::load(&cfg)?;
    log(format!("training {} over seeds {:?}", mode.as_str(), cfg.train.seeds));
    let t = Instant::now();
    let outcome = run_mode(&cfg, &src, mode)?;
    log(format!(
        "finished in {:.1}s (train samples: AD {:?}, depression {:?})",
        t.elapsed().as_secs_f64(),
        outcome.train_sizes.ad,
        outcome.train_sizes.dep
    ));
    write_metadata(&common.out, &format!("train --{}", mode.as_str().replace('_', "-")), &cfg)?;
    write_mode(&common.out, &outcome)?;
    log(format!("results in {}", common.out.join(mode.as_str()).display()));
    emit_reports(&common.out)
}

fn probe(config: &Path, blocks: Option<&[u16]>, common: &Common) -> Result<(), CliError> {
    let cfg = load_config(config, common)?;
    let src = Sources::load(&cfg)?;
    log(format!("probing over seeds {:?}", cfg.train.seeds));
    let t = Instant::now();
    let report = run_probe(&cfg, &src, blocks)?;
    log(format!("finished in {:.1}s; best block {}", t.elapsed().as_secs_f64(), report.argmax_block));
    write_metadata(&common.out, "probe", &cfg)?;
    write_probe(&common.out, &report)?;
    emit_reports(&common.out)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate { manifest, severity_max } => validate(&manifest, severity_max),
        Command::Synth { spec, out_dir } => synth(&spec, &out_dir),
        Command::Train { config, single, joint, dep_only, common, lambda } => {
            let mode = match (single, joint, dep_only) {
                (true, _, _) => Mode::Single,
                (_, true, _) => Mode::Joint,
                _ => Mode::DepOnly,
            };
            train(&config, mode, &common, lambda)
        }
        Command::Probe { config, blocks, common } => probe(&config, blocks.as_deref(), &common),
        Command::Report { run_dir } => emit_reports(&run_dir),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                CliError::Pipeline(p) => log(format!("error: {p}")),
                CliError::Manifest(m) => log(format!("error: {m}")),
                CliError::Failed(_) => {}
            }
            ExitCode::from(e.exit_code())
        }
    }
}
