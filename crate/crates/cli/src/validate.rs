use std::path::Path;

use anyhow::Context;
use clap::{Args, ValueEnum};
use sirprev::synth::{desk_prior, SbcOptions, MIN_SBC_REPLICATIONS};
use sirprev::validate::{
    conservation_check, convolution_check, delay_truncation_check, desk_sampler, effective_beta_check, recovery_checks,
    sampler_checks, sbc_checks, transform_check, Check, ValidationReport,
};

use crate::input_error;

/// Seed of the validation suite when `--seed` is absent.
pub const DEFAULT_SEED: u64 = 20_210_106;

pub const REPORT_FILE: &str = "validation.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum Suite {
    /// Model properties and gradients
    Properties,
    /// Sampler on targets with known answers
    Sampler,
    /// Fit of the default synthetic fixture
    Recovery,
    /// Simulation-based calibration at desk scale
    Calibration,
}

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    /// Calibration replications
    #[arg(long, default_value_t = 50)]
    pub replications: usize,
    /// Suites to run; all of them when absent
    #[arg(long, value_enum, value_delimiter = ',')]
    pub suite: Vec<Suite>,
}

impl Default for ValidateArgs {
    fn default() -> Self {
        ValidateArgs {
            replications: 50,
            suite: Vec::new(),
        }
    }
}

/// Runs the selected suites, printing one line per check and writing
/// `validation.json` into `out` when given. `gradient` is the gradient check.
pub fn run_validate(
    args: &ValidateArgs,
    seed: Option<u64>,
    out: Option<&Path>,
    gradient: &dyn Fn(u64) -> Check,
) -> anyhow::Result<ValidationReport> {
    let mut suites = args.suite.clone();
    if suites.is_empty() {
        suites = Suite::value_variants().to_vec();
    }
    suites.sort();
    suites.dedup();
    if suites.contains(&Suite::Calibration) && args.replications < MIN_SBC_REPLICATIONS {
        return Err(input_error(format!(
            "--replications must be at least {MIN_SBC_REPLICATIONS}, got {}",
            args.replications
        )));
    }
    let seed = seed.unwrap_or(DEFAULT_SEED);
    let mut report = ValidationReport::default();
    let mut emit = |checks: Vec<Check>| {
        for c in checks {
            println!("{c}");
            report.checks.push(c);
        }
    };
    for s in suites {
        match s {
            Suite::Properties => emit(vec![
                conservation_check(seed),
                effective_beta_check(seed),
                convolution_check(seed),
                delay_truncation_check(),
                gradient(seed),
                transform_check(seed),
            ]),
            Suite::Sampler => emit(sampler_checks(seed)),
            Suite::Recovery => emit(recovery_checks(&desk_sampler(seed), seed)),
            Suite::Calibration => {
                let opts = SbcOptions {
                    seed,
                    ..SbcOptions::default()
                };
                emit(sbc_checks(&desk_prior(), args.replications, &desk_sampler(seed), &opts))
            }
        }
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
        let path = dir.join(REPORT_FILE);
        let text = serde_json::to_string_pretty(&report)? + "\n";
        std::fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(report)
}
