//! Synthetic datasets drawn from known parameters, and simulation-based
//! calibration of the whole fitting pipeline.

mod sbc;

use std::path::Path;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    attach_surveys, make_periods, write_daily_csv, DataError, RawSeries, RegionDataset, SurveyRecord,
};
use crate::dynamics::{simulate, simulate_with_vaccination, ContactPath, DynamicsError, SirTrajectory, VaccinationSchedule};
use crate::model::{ParameterVector, Prior, PriorSpec};
use crate::observation::{confirmed_fraction, expected_deaths, DelayDistribution, ObservationError, SurveyKind};

pub use sbc::{chi_square_uniformity, rank_of, sbc_run, SbcOptions, SbcReplication, SbcReport, MIN_SBC_REPLICATIONS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid ground truth: {0}")]
    InvalidTruth(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Observation(#[from] ObservationError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("invalid calibration settings: {0}")]
    InvalidSettings(String),
}

/// A survey to simulate: kind, window in day indices and sample size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyWindow {
    pub kind: SurveyKind,
    pub start: usize,
    pub end: usize,
    pub sample_size: u64,
}

/// Everything needed to simulate one region's data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub region_code: String,
    pub first_day: NaiveDate,
    pub population: f64,
    pub params: ParameterVector,
    pub delay: DelayDistribution,
    /// Tests reported each day.
    pub tests: Vec<u64>,
    pub surveys: Vec<SurveyWindow>,
    pub period_days: usize,
    /// Second doses during the horizon; `None` for no vaccination.
    #[serde(default)]
    pub vaccination: Option<VaccinationSchedule>,
}

/// Daily tests following `cap / (1 + exp(-(t - mid) / scale))`, at least one.
pub fn logistic_tests(days: usize, cap: f64, mid: f64, scale: f64) -> Vec<u64> {
    (0..days)
        .map(|t| (cap / (1.0 + (-(t as f64 - mid) / scale).exp())).round().max(1.0) as u64)
        .collect()
}

/// Days, population and period length of the desk-scale fixture.
pub const DESK_DAYS: usize = 120;
pub const DESK_POPULATION: f64 = 1e6;
pub const DESK_PERIOD_DAYS: usize = 7;

/// Prior used for calibration runs: the same families as the default model
/// prior on ranges where a 120-day, one-million-person epidemic is
/// identifiable from its data.
pub fn desk_prior() -> PriorSpec {
    PriorSpec {
        ifr: Prior::Uniform { lo: 0.002, hi: 0.02 },
        beta1: Prior::Uniform { lo: 0.2, hi: 0.45 },
        sigma: Prior::Uniform { lo: 0.005, hi: 0.04 },
        infectious_period: Prior::TruncatedNormal {
            mean: 8.5,
            sd: 1.5,
            lo: 5.5,
            hi: 11.5,
        },
        s1: Prior::Uniform { lo: 0.95, hi: 1.0 },
        i1: Prior::Uniform { lo: 5e-5, hi: 5e-4 },
        phi: Prior::Uniform { lo: 0.2, hi: 1.6 },
        eta: Prior::Uniform { lo: 100.0, hi: 2000.0 },
    }
}

impl GroundTruth {
    /// The default fixture: a 120-day epidemic in a population of one
    /// million, checked by a viral and a serological survey.
    pub fn desk() -> Self {
        let days = DESK_DAYS;
        let beta = (0..days)
            .map(|t| {
                let t = t as f64;
                if t < 25.0 {
                    0.32
                } else if t < 45.0 {
                    0.32 - (0.32 - 0.11) * (t - 25.0) / 20.0
                } else {
                    0.11 + 0.05 * (t - 45.0) / 75.0
                }
            })
            .collect();
        let params = ParameterVector {
            ifr: 0.007,
            beta,
            sigma: 0.03,
            gamma: 1.0 / 8.5,
            s1: 0.99 * DESK_POPULATION,
            i1: 100.0,
            phi: 1.0,
            eta: 500.0,
        };
        GroundTruth::template(params)
    }

    /// The desk fixture's tests, surveys and delay around other parameters.
    pub fn template(params: ParameterVector) -> Self {
        let days = params.days();
        GroundTruth {
            region_code: "XS".into(),
            first_day: NaiveDate::from_ymd_opt(2020, 3, 1).expect("valid date"),
            population: DESK_POPULATION,
            params,
            delay: DelayDistribution::negative_binomial(21.0, 1.1, 40).expect("valid delay"),
            tests: logistic_tests(days, 4000.0, 50.0, 12.0),
            surveys: vec![
                SurveyWindow {
                    kind: SurveyKind::Viral,
                    start: 60,
                    end: 64,
                    sample_size: 3000,
                },
                SurveyWindow {
                    kind: SurveyKind::Sero,
                    start: 60,
                    end: 64,
                    sample_size: 3000,
                },
            ],
            period_days: DESK_PERIOD_DAYS,
            vaccination: None,
        }
    }

    pub fn days(&self) -> usize {
        self.params.days()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidTruth(m));
        let p = &self.params;
        let n = self.population;
        if !(n.is_finite() && n > 0.0) {
            return bad(format!("population {n}"));
        }
        if p.days() == 0 {
            return bad("empty horizon".into());
        }
        if !(0.0..=1.0).contains(&p.ifr) {
            return bad(format!("ifr {}", p.ifr));
        }
        if !(p.gamma > 0.0 && p.gamma <= 1.0) {
            return bad(format!("gamma {}", p.gamma));
        }
        if !(p.s1 >= 0.0 && p.i1 >= 0.0 && p.s1 + p.i1 <= n) {
            return bad("initial state must fit in the population".into());
        }
        if !(p.phi > 0.0 && p.eta > 0.0 && p.sigma >= 0.0) {
            return bad("phi and eta must be positive, sigma non-negative".into());
        }
        if p.beta.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return bad("contact rates must be non-negative".into());
        }
        if self.tests.len() != p.days() {
            return bad(format!("{} test days for a {}-day horizon", self.tests.len(), p.days()));
        }
        if self.period_days < crate::data::MIN_PERIOD_DAYS {
            return bad(format!("period length {}", self.period_days));
        }
        for s in &self.surveys {
            if s.start > s.end || s.end >= p.days() || s.sample_size == 0 {
                return bad(format!("survey window {}..{}", s.start, s.end));
            }
        }
        Ok(())
    }

    pub fn trajectory(&self) -> Result<SirTrajectory, SynthError> {
        let p = &self.params;
        let init = p.initial_state(self.population);
        let contacts = ContactPath::new(p.beta.clone(), p.sigma);
        Ok(match &self.vaccination {
            None => simulate(init, &contacts, p.gamma, self.population, p.days())?,
            Some(v) => simulate_with_vaccination(init, &contacts, p.gamma, v, self.population, p.days())?,
        })
    }
}

/// Splits `total` over days in proportion to `weights`, largest remainders
/// first; equal split when all weights are zero.
fn split_proportional(total: u64, weights: &[u64]) -> Vec<u64> {
    let w_sum: u64 = weights.iter().sum();
    let shares: Vec<f64> = if w_sum == 0 {
        vec![total as f64 / weights.len() as f64; weights.len()]
    } else {
        weights.iter().map(|&w| total as f64 * w as f64 / w_sum as f64).collect()
    };
    let mut out: Vec<u64> = shares.iter().map(|s| s.floor() as u64).collect();
    let mut rest = total - out.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| (shares[b] - shares[b].floor()).total_cmp(&(shares[a] - shares[a].floor())).then(a.cmp(&b)));
    for &k in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        out[k] += 1;
        rest -= 1;
    }
    out
}

/// Simulates deaths, surveys and cases from the truth. Deterministic per seed.
pub fn generate(truth: &GroundTruth, seed: u64) -> Result<RegionDataset, SynthError> {
    truth.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let traj = truth.trajectory()?;
    let p = &truth.params;
    let n = truth.population;
    let days = truth.days();

    let mean_deaths = expected_deaths(&traj.nu, p.ifr, &truth.delay)?;
    let deaths: Vec<u64> = mean_deaths
        .iter()
        .map(|&m| match Poisson::new(m) {
            Ok(d) => d.sample(&mut rng) as u64,
            Err(_) => 0,
        })
        .collect();

    // Cases are drawn per period on the same grid the fit uses; days left
    // over at the end form one short block.
    let mut cases = vec![0u64; days];
    let first = truth.tests.iter().position(|&t| t > 0).unwrap_or(days);
    let mut cum_tests = 0u64;
    let before: u64 = truth.tests[..first].iter().sum();
    cum_tests += before;
    let mut start = first;
    while start < days {
        let end = (start + truth.period_days).min(days) - 1;
        let tests: u64 = truth.tests[start..=end].iter().sum();
        let cum_before = cum_tests as f64;
        cum_tests += tests;
        let x_end = traj.end_of_day(end).ever_infected();
        let x_before = traj.states[start].ever_infected();
        let mean = confirmed_fraction(p.phi, cum_tests as f64, n) * x_end - confirmed_fraction(p.phi, cum_before, n) * x_before;
        let sd = p.eta * (tests as f64 / n).sqrt();
        let draw = match Normal::new(mean, sd) {
            Ok(d) => d.sample(&mut rng),
            Err(_) => mean,
        };
        let total = draw.round().max(0.0) as u64;
        let split = split_proportional(total, &truth.tests[start..=end]);
        cases[start..=end].copy_from_slice(&split);
        start = end + 1;
    }

    let mut ds = RegionDataset {
        region_code: truth.region_code.clone(),
        population: n,
        first_day: truth.first_day,
        deaths,
        cases,
        tests: truth.tests.clone(),
        surveys: Vec::new(),
        periods: Vec::new(),
        cleaning_log: Vec::new(),
        gap_days: Vec::new(),
    };
    let records = survey_records(truth, &traj, &mut rng)?;
    attach_surveys(&mut ds, &records)?;
    ds.periods = make_periods(&ds, truth.period_days)?;
    Ok(ds)
}

fn survey_records(truth: &GroundTruth, traj: &SirTrajectory, rng: &mut ChaCha8Rng) -> Result<Vec<SurveyRecord>, SynthError> {
    truth
        .surveys
        .iter()
        .map(|w| {
            let obs = crate::observation::SurveyObservation {
                kind: w.kind,
                estimate: 0.5,
                sample_size: w.sample_size,
                window_start: w.start,
                window_end: w.end,
            };
            let theta = obs.modelled_prevalence(traj)?;
            let ns = w.sample_size as f64;
            let sd = (theta * (1.0 - theta) / ns).sqrt();
            let draw = if sd > 0.0 { theta + sd * rng.sample::<f64, _>(rand_distr::StandardNormal) } else { theta };
            // Keep the estimate a valid proportion.
            let estimate = draw.clamp(0.5 / ns, 1.0 - 0.5 / ns);
            Ok(SurveyRecord {
                region: truth.region_code.clone(),
                kind: w.kind,
                estimate,
                sample_size: w.sample_size,
                window_start: truth.first_day + chrono::Duration::days(w.start as i64),
                window_end: truth.first_day + chrono::Duration::days(w.end as i64),
            })
        })
        .collect()
}

/// Writes `timeseries.csv`, `surveys.json`, `populations.csv` and
/// `truth.json` so the fixture can be read back through the normal
/// ingestion path.
pub fn write_fixture(dir: &Path, truth: &GroundTruth, ds: &RegionDataset) -> Result<(), SynthError> {
    let io = |p: &Path, e: &dyn std::fmt::Display| SynthError::Io {
        path: p.display().to_string(),
        message: e.to_string(),
    };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, &e))?;
    let ts = dir.join("timeseries.csv");
    let f = std::fs::File::create(&ts).map_err(|e| io(&ts, &e))?;
    write_daily_csv(std::io::BufWriter::new(f), &[RawSeries::from_dataset(ds)]).map_err(|e| io(&ts, &e))?;
    let records: Vec<SurveyRecord> = ds
        .surveys
        .iter()
        .map(|s| SurveyRecord {
            region: ds.region_code.clone(),
            kind: s.kind,
            estimate: s.estimate,
            sample_size: s.sample_size,
            window_start: ds.date_of(s.window_start),
            window_end: ds.date_of(s.window_end),
        })
        .collect();
    let sv = dir.join("surveys.json");
    let text = serde_json::to_string_pretty(&records).map_err(|e| io(&sv, &e))?;
    std::fs::write(&sv, text + "\n").map_err(|e| io(&sv, &e))?;
    let pop = dir.join("populations.csv");
    std::fs::write(
        &pop,
        format!("code,name,population\n{},Synthetic,{}\n", ds.region_code, ds.population),
    )
    .map_err(|e| io(&pop, &e))?;
    let tr = dir.join("truth.json");
    let text = serde_json::to_string_pretty(truth).map_err(|e| io(&tr, &e))?;
    std::fs::write(&tr, text + "\n").map_err(|e| io(&tr, &e))
}
