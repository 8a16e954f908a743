use std::path::Path;

use anyhow::Context;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sirprev::analysis::Interval;
use sirprev::config::RunConfig;
use sirprev::data::{
    attach_surveys, bundled_surveys, clean, ingest_timeseries_path, load_survey_path, make_periods, PopulationTable,
    RegionDataset,
};
use sirprev::model::{chain_posterior_to_prior, PriorSpec, SirModel};
use sirprev::observation::DelayDistribution;
use sirprev::sampler::{sample, PosteriorDraws, SamplerConfig};

use crate::outputs::{self, describe, sha256_hex, write_manifest, write_region, Manifest};
use crate::{input_error, Status};

/// Fits with an R-hat at or above this make the run fail.
pub const RHAT_LIMIT: f64 = 1.1;

/// What happened to one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionOutcome {
    pub code: String,
    pub seed: u64,
    /// Priors the region was fitted with, chained ones included.
    pub priors: PriorSpec,
    pub error: Option<String>,
    pub draws: usize,
    pub draws_sha256: Option<String>,
    pub max_rhat: Option<f64>,
    pub min_ess: Option<f64>,
    pub divergence_rate: Option<f64>,
    pub step_size: Vec<f64>,
    pub ifr: Option<Interval>,
}

impl RegionOutcome {
    fn failed(code: &str, seed: u64, priors: &PriorSpec, error: String) -> Self {
        RegionOutcome {
            code: code.to_string(),
            seed,
            priors: priors.clone(),
            error: Some(error),
            draws: 0,
            draws_sha256: None,
            max_rhat: None,
            min_ess: None,
            divergence_rate: None,
            step_size: Vec::new(),
            ifr: None,
        }
    }

    pub fn converged(&self) -> bool {
        self.error.is_none() && self.max_rhat.is_none_or(|r| r < RHAT_LIMIT)
    }
}

/// Seed of one region's chains, derived from the run seed and its code.
pub fn region_seed(seed: u64, code: &str) -> u64 {
    let mut bytes = seed.to_le_bytes().to_vec();
    bytes.extend_from_slice(code.as_bytes());
    let hex = sha256_hex(&bytes);
    u64::from_str_radix(&hex[..16], 16).expect("hex digest")
}

/// Reads, cleans and crops every selected region, attaching surveys and
/// testing periods.
pub fn load_datasets(cfg: &RunConfig) -> anyhow::Result<Vec<RegionDataset>> {
    let pops = match &cfg.populations {
        Some(p) => {
            let f = std::fs::File::open(p).with_context(|| format!("cannot read {}", p.display()))?;
            PopulationTable::from_csv(f).map_err(|e| input_error(format!("{}: {e}", p.display())))?
        }
        None => PopulationTable::bundled(),
    };
    let surveys = match &cfg.surveys {
        Some(p) => load_survey_path(p).map_err(input_error)?,
        None => bundled_surveys(),
    };
    let raw = ingest_timeseries_path(&cfg.timeseries, &pops).map_err(input_error)?;
    let selected: Vec<&str> = if cfg.regions.is_empty() {
        raw.iter().map(|r| r.region_code.as_str()).collect()
    } else {
        cfg.regions.iter().map(String::as_str).collect()
    };
    selected
        .into_iter()
        .map(|code| {
            let r = raw
                .iter()
                .find(|r| r.region_code == code)
                .ok_or_else(|| input_error(format!("region {code} is not in {}", cfg.timeseries.display())))?;
            let mut ds = clean(r)
                .and_then(|d| d.apply_horizon(cfg.horizon, cfg.end_date))
                .map_err(input_error)?;
            attach_surveys(&mut ds, &surveys).map_err(input_error)?;
            ds.periods = make_periods(&ds, cfg.period_days).map_err(input_error)?;
            Ok(ds)
        })
        .collect()
}

struct Fitted {
    outcome: RegionOutcome,
    draws: Option<PosteriorDraws>,
}

fn fit_region(
    dir: &Path,
    ds: &RegionDataset,
    priors: &PriorSpec,
    delay: &DelayDistribution,
    sampler: &SamplerConfig,
) -> Fitted {
    let code = &ds.region_code;
    let seed = region_seed(sampler.seed, code);
    let fail = |e: String| Fitted {
        outcome: RegionOutcome::failed(code, seed, priors, e),
        draws: None,
    };
    let model = match SirModel::new(ds.model_data(), priors.clone(), delay.clone()) {
        Ok(m) => m,
        Err(e) => return fail(e.to_string()),
    };
    let cfg = SamplerConfig {
        seed,
        ..sampler.clone()
    };
    let draws = match sample(&model, &cfg) {
        Ok(d) => d,
        Err(e) => return fail(e.to_string()),
    };
    let (sha, summary) = match write_region(dir, ds, &draws) {
        Ok(v) => v,
        Err(e) => return fail(format!("{e:#}")),
    };
    eprintln!("{}", describe(&summary));
    let diag = summary.diagnostics.clone().expect("fitted summaries carry diagnostics");
    Fitted {
        outcome: RegionOutcome {
            code: code.clone(),
            seed,
            priors: priors.clone(),
            error: None,
            draws: draws.n_draws(),
            draws_sha256: Some(sha),
            max_rhat: diag.max_rhat,
            min_ess: diag.min_ess,
            divergence_rate: Some(diag.divergence_rate),
            step_size: draws.step_size.clone(),
            ifr: summary.ifr,
        },
        draws: Some(draws),
    }
}

/// Replaces the chained parameters' priors by moment matches of `draws`.
fn chain(priors: &mut PriorSpec, draws: &PosteriorDraws, params: &[String]) -> anyhow::Result<()> {
    for p in params {
        let support = priors.get(p)?.bounds();
        let next = chain_posterior_to_prior(draws, p, support).with_context(|| format!("cannot chain {p}"))?;
        priors.set(p, next)?;
    }
    Ok(())
}

/// Fits the chained regions one after another, then the rest concurrently
/// with the last chained priors. Writes every artifact and the manifest.
pub fn fit(cfg: &RunConfig) -> anyhow::Result<Status> {
    if let Some(n) = &cfg.national {
        if cfg.regions.contains(n) {
            return Err(input_error(format!("national code {n} is also a region")));
        }
    }
    let datasets = load_datasets(cfg)?;
    let delay = cfg.delay.distribution().map_err(input_error)?;
    let dir = &cfg.output;
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;

    let (staged, rest): (Vec<&RegionDataset>, Vec<&RegionDataset>) =
        datasets.iter().partition(|d| cfg.chaining.order.contains(&d.region_code));
    let mut staged = staged;
    staged.sort_by_key(|d| cfg.chaining.order.iter().position(|c| *c == d.region_code));

    let mut priors = cfg.priors.clone();
    let mut outcomes = Vec::with_capacity(datasets.len());
    let mut broken_chain = None;
    for ds in staged {
        let fitted = fit_region(dir, ds, &priors, &delay, &cfg.sampler);
        let chained = match (&fitted.draws, &fitted.outcome.error) {
            (Some(d), None) => chain(&mut priors, d, &cfg.chaining.params).map_err(|e| format!("{e:#}")),
            (_, e) => Err(e.clone().unwrap_or_default()),
        };
        outcomes.push(fitted.outcome);
        if let Err(e) = chained {
            broken_chain = Some(format!("chained stage {} failed: {e}", ds.region_code));
            break;
        }
    }
    match &broken_chain {
        Some(reason) => {
            let seed = cfg.sampler.seed;
            let skipped: Vec<RegionOutcome> = datasets
                .iter()
                .filter(|d| !outcomes.iter().any(|o| o.code == d.region_code))
                .map(|d| RegionOutcome::failed(&d.region_code, region_seed(seed, &d.region_code), &priors, reason.clone()))
                .collect();
            outcomes.extend(skipped);
        }
        None => {
            let fitted: Vec<RegionOutcome> = rest
                .par_iter()
                .map(|ds| fit_region(dir, ds, &priors, &delay, &cfg.sampler).outcome)
                .collect();
            outcomes.extend(fitted);
        }
    }

    let ok: Vec<&RegionOutcome> = outcomes.iter().filter(|o| o.error.is_none()).collect();
    let national = match &cfg.national {
        Some(code) if ok.len() >= 2 => {
            let s = outputs::write_national(dir, code, &ok)?;
            eprintln!("{}", describe(&s));
            Some(code.clone())
        }
        _ => None,
    };
    let failures: Vec<String> = outcomes
        .iter()
        .filter_map(|o| match (&o.error, o.max_rhat) {
            (Some(e), _) => Some(format!("{}: {e}", o.code)),
            (None, Some(r)) if r >= RHAT_LIMIT => Some(format!("{}: max R-hat {r:.3} is not below {RHAT_LIMIT}", o.code)),
            _ => None,
        })
        .collect();
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.sampler.seed,
        config_sha256: sha256_hex(cfg.to_toml_string().as_bytes()),
        config: cfg.clone(),
        regions: outcomes,
        national,
    };
    write_manifest(dir, &manifest)?;
    if failures.is_empty() {
        Ok(Status::Success)
    } else {
        eprintln!("{} of {} regions failed:", failures.len(), manifest.regions.len());
        for f in &failures {
            eprintln!("  {f}");
        }
        Ok(Status::ChecksFailed)
    }
}
