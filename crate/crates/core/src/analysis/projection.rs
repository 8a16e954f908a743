use chrono::{Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{AnalysisError, QuantileBand, RegionPaths, PROJECTION_LEVELS};
use crate::dynamics::{simulate_with_vaccination, ContactPath, VaccinationSchedule};

/// Second doses per day rising linearly from `start_level` on the scenario
/// start day to `end_level` on `ramp_end_day`, then flat. The end level is
/// drawn uniformly from the given range once per posterior draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoseRamp {
    pub start_level: f64,
    pub end_level: (f64, f64),
    pub ramp_end_day: NaiveDate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectionScenario {
    /// Day the dose ramp starts. Days before it get no doses.
    pub start_day: NaiveDate,
    pub dose_ramp: DoseRamp,
    /// Explicit doses per projected day; replaces the ramp when present.
    #[serde(default)]
    pub doses: Option<Vec<f64>>,
    /// Hold the reproductive number at its last fitted value.
    pub frozen_r: bool,
    /// Confirm the same fraction of new infections as on the last fitted
    /// day; otherwise the confirmed count stays where it is.
    pub frozen_undercount: bool,
    /// Number of days projected past the last fitted day.
    pub horizon: usize,
}

impl ProjectionScenario {
    /// Zero to 500-750 thousand second doses a day over January and
    /// February 2021, projected to the end of August 2021.
    pub fn us_2021(last_fitted: NaiveDate) -> Self {
        let end = NaiveDate::from_ymd_opt(2021, 8, 31).expect("valid date");
        ProjectionScenario {
            start_day: NaiveDate::from_ymd_opt(2021, 1, 1).expect("valid date"),
            dose_ramp: DoseRamp {
                start_level: 0.0,
                end_level: (500_000.0, 750_000.0),
                ramp_end_day: NaiveDate::from_ymd_opt(2021, 2, 28).expect("valid date"),
            },
            doses: None,
            frozen_r: true,
            frozen_undercount: true,
            horizon: (end - last_fitted).num_days().max(0) as usize,
        }
    }

    pub fn validate(&self) -> Result<(), AnalysisError> {
        let bad = |m: &str| Err(AnalysisError::InvalidScenario(m.to_string()));
        let r = &self.dose_ramp;
        let (lo, hi) = r.end_level;
        if !(r.start_level.is_finite() && r.start_level >= 0.0) {
            return bad("start level must be a nonnegative number");
        }
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
            return bad("end level range must be nonnegative and ordered");
        }
        if r.ramp_end_day < self.start_day {
            return bad("ramp ends before it starts");
        }
        if !self.frozen_r {
            return bad("only a frozen reproductive number is supported");
        }
        if let Some(d) = &self.doses {
            if d.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return bad("doses must be nonnegative numbers");
            }
            if d.len() < self.horizon {
                return Err(AnalysisError::DoseScheduleTooShort {
                    have: d.len(),
                    need: self.horizon,
                });
            }
        }
        Ok(())
    }

    /// Doses on `date` when the ramp ends at `end_level`.
    pub fn ramp_doses(&self, date: NaiveDate, end_level: f64) -> f64 {
        let r = &self.dose_ramp;
        if date < self.start_day {
            return 0.0;
        }
        let span = (r.ramp_end_day - self.start_day).num_days();
        if span == 0 || date >= r.ramp_end_day {
            return end_level;
        }
        let frac = (date - self.start_day).num_days() as f64 / span as f64;
        r.start_level + frac * (end_level - r.start_level)
    }
}

/// Quantile bands of a projection; day 0 is the day after the last fitted day.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub region_code: String,
    pub first_day: NaiveDate,
    pub population: f64,
    pub daily_infections: QuantileBand,
    /// Previously infected or fully vaccinated, as a fraction of the population.
    pub cumulative_immunity: QuantileBand,
    /// Infections since the projection started.
    pub added_infections: QuantileBand,
    pub vaccinated: QuantileBand,
}

impl ProjectionResult {
    pub fn days(&self) -> usize {
        self.daily_infections.days()
    }

    pub fn date_of(&self, day: usize) -> NaiveDate {
        self.first_day + Duration::days(day as i64)
    }

    /// First day on which quantile `p` of daily infections is below `threshold`.
    pub fn first_day_below(&self, threshold: f64, p: f64) -> Option<NaiveDate> {
        (0..self.days())
            .find(|&d| self.daily_infections.at(d, p).is_some_and(|v| v < threshold))
            .map(|d| self.date_of(d))
    }
}

/// Runs every draw forward from its last fitted state under the scenario.
pub fn project(paths: &RegionPaths, scenario: &ProjectionScenario, seed: u64) -> Result<ProjectionResult, AnalysisError> {
    scenario.validate()?;
    let m = paths.n_draws();
    if m == 0 || paths.days() == 0 {
        return Err(AnalysisError::NoDraws);
    }
    let h = scenario.horizon;
    let first_day = paths.last_day() + Duration::days(1);
    let last = paths.days() - 1;
    let confirmed = paths.cum_cases[last] as f64;
    let n = paths.population;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = scenario.dose_ramp.end_level;
    let levels: Vec<f64> = (0..m)
        .map(|_| if hi > lo { rng.random_range(lo..hi) } else { lo })
        .collect();
    let runs: Result<Vec<_>, AnalysisError> = (0..m)
        .into_par_iter()
        .map(|k| {
            let traj = &paths.trajectories[k];
            let gamma = paths.gamma[k];
            let r = paths.r_t[k][last];
            let beta = if r.is_finite() { r * gamma } else { 0.0 };
            let second_doses: Vec<f64> = match &scenario.doses {
                Some(d) => d[..h].to_vec(),
                None => (0..h)
                    .map(|d| scenario.ramp_doses(first_day + Duration::days(d as i64), levels[k]))
                    .collect(),
            };
            let infected = traj.terminal().i + traj.terminal().r;
            let rate = if scenario.frozen_undercount && infected > 0.0 {
                (confirmed / infected).min(1.0)
            } else {
                0.0
            };
            let schedule = VaccinationSchedule {
                second_doses,
                confirmed_cumulative: confirmed,
                confirmation_rate: rate,
            };
            let proj = simulate_with_vaccination(
                *traj.terminal(),
                &ContactPath::constant(beta, h),
                gamma,
                &schedule,
                n,
                h,
            )
            .map_err(|e| AnalysisError::Draw {
                draw: k,
                error: Box::new(e.into()),
            })?;
            let mut added = 0.0;
            let mut vacc = 0.0;
            let mut rows = (Vec::with_capacity(h), Vec::with_capacity(h), Vec::with_capacity(h), Vec::with_capacity(h));
            for d in 0..h {
                added += proj.nu[d];
                vacc += proj.vaccinated[d];
                rows.0.push(proj.nu[d]);
                rows.1.push(proj.end_of_day(d).ever_infected() / n);
                rows.2.push(added);
                rows.3.push(vacc);
            }
            Ok(rows)
        })
        .collect();
    let runs = runs?;
    let band = |f: &(dyn Fn(&(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)) -> &Vec<f64> + Sync)| {
        let by_day: Vec<Vec<f64>> = (0..h).map(|d| runs.iter().map(|r| f(r)[d]).collect()).collect();
        QuantileBand::from_days(&by_day, &PROJECTION_LEVELS)
    };
    Ok(ProjectionResult {
        region_code: paths.region_code.clone(),
        first_day,
        population: n,
        daily_infections: band(&|r| &r.0),
        cumulative_immunity: band(&|r| &r.1),
        added_infections: band(&|r| &r.2),
        vaccinated: band(&|r| &r.3),
    })
}
