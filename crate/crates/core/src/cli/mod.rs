//! Command-line front end: one subcommand per experiment, each driven by a
//! JSON config and writing hash-stamped artifacts.

pub mod config;
pub mod experiments;
pub mod manifest;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::error::Error;
use config::{load_config, ExperimentKind, LoadedConfig};
use manifest::{manifest_hash, ArtifactSink, Manifest, CODE_VERSION};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_REPLICATES: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "sublab", version, about = "Subsampling-MCMC experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config file.
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed; overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output directory; overrides the config's `out`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run kernels and write traces.
    Simulate(Common),
    /// Posterior fluctuation across coupled datasets.
    Fluctuation(Common),
    /// Identifiability certificate for a GLM.
    Certificate(Common),
    /// Covering-time quantiles.
    Covering(Common),
    /// Cost scaling across dataset sizes.
    Scaling(Common),
    /// Closed-form toy TV table.
    Toy(Common),
    /// Anti-concentration check.
    Anticoncentration(Common),
}

impl Command {
    fn split(&self) -> (ExperimentKind, &Common) {
        match self {
            Command::Simulate(c) => (ExperimentKind::Simulate, c),
            Command::Fluctuation(c) => (ExperimentKind::Fluctuation, c),
            Command::Certificate(c) => (ExperimentKind::Certificate, c),
            Command::Covering(c) => (ExperimentKind::Covering, c),
            Command::Scaling(c) => (ExperimentKind::Scaling, c),
            Command::Toy(c) => (ExperimentKind::Toy, c),
            Command::Anticoncentration(c) => (ExperimentKind::Anticoncentration, c),
        }
    }
}

pub fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::IndexOutOfRange { .. } => "index_out_of_range",
        Error::DimensionMismatch { .. } => "dimension_mismatch",
        Error::InvalidData(_) => "invalid_data",
        Error::InvalidConfig(_) => "invalid_config",
        Error::MleFailure(_) => "mle_failure",
        Error::Singular(_) => "singular",
        Error::RankDeficient { .. } => "rank_deficient",
        Error::RetractionRejected(_) => "retraction_rejected",
        Error::QuadratureNonConvergence { .. } => "quadrature_non_convergence",
        Error::Eigen(_) => "eigen",
        Error::BoundViolation { .. } => "bound_violation",
        _ => "runtime",
    }
}

fn report(e: &Error, stage: &str) {
    let body = serde_json::json!({ "error": { "kind": error_kind(e), "stage": stage, "message": e.to_string() } });
    eprintln!("{body}");
}

/// Runs a loaded config, writing artifacts and `manifest.json` into `out`.
/// Errors carry the stage that failed: `output` or `run`.
pub fn run_to_dir(
    loaded: &LoadedConfig,
    seed: u64,
    out: &Path,
) -> std::result::Result<(Manifest, experiments::RunOutcome), (Error, &'static str)> {
    let kind = loaded.kind;
    let mut config = loaded.raw.clone();
    if let serde_json::Value::Object(o) = &mut config {
        o.remove("experiment");
        o.remove("seed");
        o.remove("out");
    }
    let hash = manifest_hash(kind.name(), &config, seed);
    let mut sink = ArtifactSink::new(out, hash.clone()).map_err(|e| (e, "output"))?;
    let start = Instant::now();
    let outcome = experiments::run_experiment(&loaded.body, seed, &mut sink).map_err(|e| (e, "run"))?;
    let manifest = Manifest {
        experiment: kind.name().into(),
        config,
        seed,
        code_version: CODE_VERSION.into(),
        wall_time_s: start.elapsed().as_secs_f64(),
        manifest_hash: hash,
        replicates: outcome.replicates,
        failed_replicates: outcome.failed,
        artifacts: Vec::new(),
    };
    let manifest = sink.finish(manifest).map_err(|e| (e, "output"))?;
    Ok((manifest, outcome))
}

/// Runs one parsed command and returns the process exit code.
pub fn execute(cli: Cli) -> i32 {
    let (kind, common) = cli.command.split();
    let loaded = match load_config(kind, &common.config) {
        Ok(c) => c,
        Err(e) => {
            report(&e, "config");
            return EXIT_CONFIG;
        }
    };
    if let Some(t) = common.threads {
        if t == 0 {
            report(&Error::InvalidConfig("--threads must be positive".into()), "config");
            return EXIT_CONFIG;
        }
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let seed = common.seed.or(loaded.seed).unwrap_or(0);
    let out = common
        .out
        .clone()
        .or_else(|| loaded.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(kind.name()));
    let (_, outcome) = match run_to_dir(&loaded, seed, &out) {
        Ok(r) => r,
        Err((e, stage)) => {
            report(&e, stage);
            return EXIT_RUNTIME;
        }
    };
    if outcome.too_many_failures() {
        let e = Error::InvalidData(format!("{} of {} replicates failed", outcome.failed, outcome.replicates));
        report(&e, "replicates");
        return EXIT_REPLICATES;
    }
    EXIT_OK
}

/// Entry point for the binary.
pub fn main() -> i32 {
    execute(Cli::parse())
}
