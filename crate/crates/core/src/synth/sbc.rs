use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{generate, GroundTruth, SynthError, DESK_DAYS, DESK_POPULATION};
use crate::analysis::{quantiles, Interval};
use crate::data::make_periods;
use crate::model::{sample_prior, ParameterVector, PriorSpec, SirModel};
use crate::sampler::{sample, SamplerConfig};

/// Fewest replications [`sbc_run`] accepts.
pub const MIN_SBC_REPLICATIONS: usize = 20;

/// Settings beyond the prior and sampler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbcOptions {
    pub seed: u64,
    pub days: usize,
    pub population: f64,
    /// Posterior draws kept per replication; ranks run over `0..=draws`.
    pub draws: usize,
    pub bins: usize,
    pub params: Vec<String>,
    /// Multiplies the IFR used to generate data but not to fit it.
    pub ifr_factor: f64,
    /// Fit with no observations at all, so the posterior is the prior.
    pub zero_data: bool,
    pub rhat_limit: f64,
}

impl Default for SbcOptions {
    fn default() -> Self {
        SbcOptions {
            seed: 20_210_106,
            days: DESK_DAYS,
            population: DESK_POPULATION,
            draws: 199,
            bins: 20,
            params: vec!["ifr".into(), "gamma".into()],
            ifr_factor: 1.0,
            zero_data: false,
            rhat_limit: 1.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcReplication {
    pub index: usize,
    pub truth: BTreeMap<String, f64>,
    pub ranks: BTreeMap<String, usize>,
    pub ifr_covered: bool,
    pub max_rhat: f64,
    pub divergence_rate: f64,
    pub excluded: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcReport {
    pub options: SbcOptions,
    pub replications: Vec<SbcReplication>,
    pub histograms: BTreeMap<String, Vec<usize>>,
    pub p_values: BTreeMap<String, f64>,
    /// Fraction of included replications whose 95% IFR interval covers truth.
    pub ifr_coverage: f64,
    pub excluded: usize,
}

impl SbcReport {
    pub fn included(&self) -> usize {
        self.replications.len() - self.excluded
    }

    /// No parameter's rank histogram is rejected at level `alpha`.
    pub fn uniform_at(&self, alpha: f64) -> bool {
        self.p_values.values().all(|&p| p > alpha)
    }
}

/// Number of draws in `draws` strictly below `truth`.
pub fn rank_of(truth: f64, draws: &[f64]) -> usize {
    draws.iter().filter(|&&d| d < truth).count()
}

/// Chi-square goodness-of-fit p-value for ranks in `0..=max_rank` against a
/// uniform distribution over `bins` equal bins, with the histogram.
pub fn chi_square_uniformity(ranks: &[usize], max_rank: usize, bins: usize) -> (f64, Vec<usize>) {
    let mut hist = vec![0usize; bins];
    let values = max_rank + 1;
    for &r in ranks {
        hist[(r.min(max_rank) * bins / values).min(bins - 1)] += 1;
    }
    if ranks.is_empty() || bins < 2 {
        return (f64::NAN, hist);
    }
    // Expected count per bin from the number of rank values it holds.
    let stat: f64 = (0..bins)
        .map(|b| {
            let lo = (b * values).div_ceil(bins);
            let hi = ((b + 1) * values).div_ceil(bins);
            let e = ranks.len() as f64 * (hi - lo) as f64 / values as f64;
            (hist[b] as f64 - e).powi(2) / e
        })
        .sum();
    let p = ChiSquared::new((bins - 1) as f64).map(|d| d.sf(stat)).unwrap_or(f64::NAN);
    (p, hist)
}

fn truth_value(p: &ParameterVector, name: &str) -> Option<f64> {
    let names = ParameterVector::names(p.days());
    names.iter().position(|n| n == name).map(|k| p.to_flat()[k])
}

fn replicate(
    index: usize,
    prior: &PriorSpec,
    cfg: &SamplerConfig,
    opts: &SbcOptions,
) -> Result<SbcReplication, SynthError> {
    let rep_seed = opts.seed.wrapping_add(index as u64 * 0x9E37_79B9);
    let mut rng = ChaCha8Rng::seed_from_u64(rep_seed);
    let params = sample_prior(prior, opts.days, opts.population, &mut rng);
    let mut gen_truth = GroundTruth::template(params.clone());
    gen_truth.population = opts.population;
    gen_truth.params.ifr = (params.ifr * opts.ifr_factor).min(1.0);
    let mut ds = generate(&gen_truth, rep_seed)?;
    if opts.zero_data {
        ds.deaths.iter_mut().for_each(|d| *d = 0);
        ds.surveys.clear();
        ds.cases.iter_mut().for_each(|c| *c = 0);
        ds.tests.iter_mut().for_each(|t| *t = 0);
        ds.periods = make_periods(&ds, gen_truth.period_days)?;
    }
    let mut data = ds.model_data();
    if opts.zero_data {
        data.deaths.clear();
    }
    let model = SirModel::new(data, prior.clone(), gen_truth.delay.clone())
        .map_err(|e| SynthError::InvalidSettings(e.to_string()))?;
    let cfg = SamplerConfig {
        seed: rep_seed,
        ..cfg.clone()
    };
    let mut truth = BTreeMap::new();
    for name in &opts.params {
        let v = truth_value(&params, name)
            .ok_or_else(|| SynthError::InvalidSettings(format!("unknown parameter {name}")))?;
        truth.insert(name.clone(), v);
    }
    let draws = match sample(&model, &cfg) {
        Ok(d) => d,
        Err(e) => {
            return Ok(SbcReplication {
                index,
                truth,
                ranks: BTreeMap::new(),
                ifr_covered: false,
                max_rhat: f64::NAN,
                divergence_rate: f64::NAN,
                excluded: true,
                error: Some(e.to_string()),
            })
        }
    };
    let max_rhat = opts
        .params
        .iter()
        .filter_map(|n| draws.column_index(n))
        .map(|j| draws.rhat[j])
        .fold(f64::NAN, f64::max);
    let n = draws.n_draws();
    let thinned: Vec<usize> = (0..opts.draws).map(|k| k * n / opts.draws).collect();
    let mut ranks = BTreeMap::new();
    for (name, &t) in &truth {
        let col = draws.column_by_name(name).expect("parameter exists");
        let kept: Vec<f64> = thinned.iter().map(|&i| col[i]).collect();
        ranks.insert(name.clone(), rank_of(t, &kept));
    }
    let ifr = draws.column_by_name("ifr").expect("ifr column");
    let q = quantiles(&ifr, &[0.025, 0.975]);
    let ifr_covered = Interval {
        median: f64::NAN,
        lower: q[0],
        upper: q[1],
    }
    .contains(params.ifr);
    Ok(SbcReplication {
        index,
        truth,
        ranks,
        ifr_covered,
        max_rhat,
        divergence_rate: draws.divergence_rate(),
        excluded: !(max_rhat <= opts.rhat_limit),
        error: None,
    })
}

/// Draws truths from `prior`, simulates data, refits and ranks each truth
/// among posterior draws. Replications run in parallel; the report does not
/// depend on scheduling.
pub fn sbc_run(
    prior: &PriorSpec,
    replications: usize,
    cfg: &SamplerConfig,
    opts: &SbcOptions,
) -> Result<SbcReport, SynthError> {
    if replications < MIN_SBC_REPLICATIONS {
        return Err(SynthError::InvalidSettings(format!(
            "at least {MIN_SBC_REPLICATIONS} replications needed, got {replications}"
        )));
    }
    if opts.draws == 0 || opts.bins < 2 || opts.draws + 1 < opts.bins {
        return Err(SynthError::InvalidSettings("draws must cover every bin".into()));
    }
    if cfg.draws_per_chain() * cfg.chains < opts.draws {
        return Err(SynthError::InvalidSettings(format!(
            "{} posterior draws cannot be thinned to {}",
            cfg.draws_per_chain() * cfg.chains,
            opts.draws
        )));
    }
    prior.validate().map_err(|e| SynthError::InvalidSettings(e.to_string()))?;
    cfg.validate().map_err(|e| SynthError::InvalidSettings(e.to_string()))?;
    let reps: Vec<SbcReplication> = (0..replications)
        .into_par_iter()
        .map(|i| replicate(i, prior, cfg, opts))
        .collect::<Result<_, _>>()?;
    let included: Vec<&SbcReplication> = reps.iter().filter(|r| !r.excluded).collect();
    let mut histograms = BTreeMap::new();
    let mut p_values = BTreeMap::new();
    for name in &opts.params {
        let ranks: Vec<usize> = included.iter().map(|r| r.ranks[name]).collect();
        let (p, hist) = chi_square_uniformity(&ranks, opts.draws, opts.bins);
        histograms.insert(name.clone(), hist);
        p_values.insert(name.clone(), p);
    }
    let ifr_coverage = if included.is_empty() {
        f64::NAN
    } else {
        included.iter().filter(|r| r.ifr_covered).count() as f64 / included.len() as f64
    };
    Ok(SbcReport {
        options: opts.clone(),
        excluded: reps.len() - included.len(),
        replications: reps,
        histograms,
        p_values,
        ifr_coverage,
    })
}
