//! The `sirprev` command: fit regions, rebuild summaries, project fits
//! forward and run the validation suite.

mod fit;
mod outputs;
mod project;
mod validate;

use std::fmt;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use sirprev::config::RunConfig;

pub use fit::{fit, load_datasets, region_seed, RegionOutcome};
pub use outputs::{read_manifest, Manifest, MANIFEST_FILE};
pub use project::{project_outputs, ProjectArgs};
pub use validate::{run_validate, Suite, ValidateArgs};

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "SIRPREV_THREADS";

#[derive(Debug, Parser)]
#[command(name = "sirprev", version, about = "Bayesian SIR fits to deaths, cases, tests and prevalence surveys")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

/// Flags that override the run configuration.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// Run configuration (TOML)
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Comma-separated region codes
    #[arg(long, global = true, value_delimiter = ',', value_name = "CODES")]
    pub regions: Option<Vec<String>>,
    /// Random seed; per-region seeds are derived from it
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Chains per region
    #[arg(long, global = true)]
    pub chains: Option<usize>,
    /// Iterations per chain, warmup included
    #[arg(long, global = true)]
    pub steps: Option<usize>,
    /// Warmup iterations per chain
    #[arg(long, global = true)]
    pub warmup: Option<usize>,
    /// Days per testing period
    #[arg(long = "l-days", global = true, value_name = "DAYS")]
    pub l_days: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit every configured region; writes draws, summaries, plots and a manifest
    Fit,
    /// Project fitted regions forward under a vaccination scenario
    Project(ProjectArgs),
    /// Run the oracle checks, synthetic recovery and calibration
    Validate(ValidateArgs),
    /// Rebuild summaries, plots and the national aggregate from saved draws
    Summarize,
}

/// Bad configuration or input, reported before any sampling.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

pub(crate) fn input_error(e: impl fmt::Display) -> anyhow::Error {
    InputError(e.to_string()).into()
}

/// How a command finished when it did not error.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    /// Ran to completion but a convergence or validation check failed.
    ChecksFailed,
}

impl Overrides {
    /// Loads `--config` and applies the flags on top.
    pub fn run_config(&self) -> anyhow::Result<RunConfig> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| input_error("--config is required"))?;
        let mut cfg = RunConfig::load(path).map_err(input_error)?;
        self.apply(&mut cfg);
        cfg.validate().map_err(input_error)?;
        Ok(cfg)
    }

    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(r) = &self.regions {
            cfg.regions = r.iter().map(|c| c.trim().to_uppercase()).filter(|c| !c.is_empty()).collect();
        }
        if let Some(s) = self.seed {
            cfg.sampler.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output = o.clone();
        }
        if let Some(c) = self.chains {
            cfg.sampler.chains = c;
        }
        if let Some(s) = self.steps {
            cfg.sampler.total_steps = s;
        }
        if let Some(w) = self.warmup {
            cfg.sampler.warmup_steps = w;
        }
        if let Some(l) = self.l_days {
            cfg.period_days = l;
        }
    }

    /// Output directory of an earlier fit: `--out`, else the configured one.
    pub fn output_dir(&self) -> anyhow::Result<PathBuf> {
        if let Some(o) = &self.out {
            return Ok(o.clone());
        }
        match &self.config {
            Some(p) => Ok(RunConfig::load(p).map_err(input_error)?.output),
            None => Err(input_error("either --out or --config is required")),
        }
    }
}

/// Caps the global thread pool from [`THREADS_ENV`]; unset means one thread
/// per core.
pub fn init_threads() -> anyhow::Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| input_error(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("cannot configure the thread pool")
}

pub fn run(cli: &Cli) -> anyhow::Result<Status> {
    match &cli.command {
        Command::Fit => {
            let cfg = cli.overrides.run_config()?;
            fit(&cfg)
        }
        Command::Summarize => {
            let out = cli.overrides.output_dir()?;
            outputs::summarize_outputs(&out, cli.overrides.regions.as_deref())
        }
        Command::Project(args) => {
            let out = cli.overrides.output_dir()?;
            project_outputs(&out, args, cli.overrides.regions.as_deref(), cli.overrides.seed).map(|_| Status::Success)
        }
        Command::Validate(args) => {
            let report = run_validate(args, cli.overrides.seed, cli.overrides.out.as_deref(), &sirprev::validate::gradient_check)?;
            Ok(if report.passed() {
                Status::Success
            } else {
                Status::ChecksFailed
            })
        }
    }
}

/// 0 on success, 1 when checks failed or a run broke, 2 for bad input.
pub fn exit_code(result: &anyhow::Result<Status>) -> u8 {
    match result {
        Ok(Status::Success) => 0,
        Ok(Status::ChecksFailed) => 1,
        Err(e) if e.downcast_ref::<InputError>().is_some() => 2,
        Err(_) => 1,
    }
}
