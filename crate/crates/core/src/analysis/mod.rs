//! Posterior summaries, multi-region aggregation and vaccination projection.

mod aggregate;
mod export;
mod plot;
mod projection;

use chrono::{Duration, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{cumulative, RegionDataset};
use crate::dynamics::{effective_beta, effective_gamma, DynamicsError, SirTrajectory};
use crate::model::{ModelError, ParameterVector, N_SCALARS};
use crate::observation::DelayDistribution;
use crate::sampler::PosteriorDraws;

pub use aggregate::{aggregate_regions, common_window, NationalAggregator};
pub use export::{
    read_draws_csv, read_projection_csv, read_summary, read_summary_csv, write_draws_csv, write_projection_csv,
    write_summary, write_summary_csv, SummaryMetadata,
};
pub use plot::{projection_svg, summary_svg};
pub use projection::{project, DoseRamp, ProjectionResult, ProjectionScenario};

/// Quantile levels of the reported credible bands.
pub const SUMMARY_LEVELS: [f64; 3] = [0.025, 0.5, 0.975];
/// Projections also report the interquartile range.
pub const PROJECTION_LEVELS: [f64; 5] = [0.025, 0.25, 0.5, 0.75, 0.975];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("draw {draw}: {error}")]
    Draw { draw: usize, error: Box<AnalysisError> },
    #[error("no posterior draws")]
    NoDraws,
    #[error("draws have {draws} days but the dataset has {data}")]
    HorizonMismatch { draws: usize, data: usize },
    #[error("regions share no common dates")]
    DateMismatch,
    #[error("region {region} does not cover {first}..{last}")]
    WindowNotCovered { region: String, first: NaiveDate, last: NaiveDate },
    #[error("invalid projection scenario: {0}")]
    InvalidScenario(String),
    #[error("dose schedule has {have} days but the horizon is {need}")]
    DoseScheduleTooShort { have: usize, need: usize },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty data");
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

pub fn quantiles(values: &[f64], levels: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    levels.iter().map(|&p| quantile_sorted(&v, p)).collect()
}

/// Median and central 95% interval of a scalar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn from_values(values: &[f64]) -> Self {
        let q = quantiles(values, &SUMMARY_LEVELS);
        Interval {
            lower: q[0],
            median: q[1],
            upper: q[2],
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

/// Pointwise quantiles of a daily quantity. `None` marks days on which the
/// quantity is undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileBand {
    pub levels: Vec<f64>,
    pub values: Vec<Option<Vec<f64>>>,
}

impl QuantileBand {
    /// `by_day[d]` holds the draws for day `d`; an empty vector is undefined.
    pub fn from_days(by_day: &[Vec<f64>], levels: &[f64]) -> Self {
        let values = by_day
            .par_iter()
            .map(|v| (!v.is_empty()).then(|| quantiles(v, levels)))
            .collect();
        QuantileBand {
            levels: levels.to_vec(),
            values,
        }
    }

    /// Same as [`QuantileBand::from_days`] for draw-major input.
    pub fn from_draws(by_draw: &[Vec<f64>], days: usize, levels: &[f64]) -> Self {
        let by_day: Vec<Vec<f64>> = (0..days).map(|d| by_draw.iter().map(|r| r[d]).collect()).collect();
        Self::from_days(&by_day, levels)
    }

    pub fn days(&self) -> usize {
        self.values.len()
    }

    pub fn level_index(&self, p: f64) -> Option<usize> {
        self.levels.iter().position(|&l| (l - p).abs() < 1e-12)
    }

    pub fn at(&self, day: usize, p: f64) -> Option<f64> {
        let j = self.level_index(p)?;
        self.values.get(day)?.as_ref().map(|q| q[j])
    }

    pub fn median(&self, day: usize) -> Option<f64> {
        self.at(day, 0.5)
    }

    /// Values of one level over all days.
    pub fn series(&self, p: f64) -> Vec<Option<f64>> {
        (0..self.days()).map(|d| self.at(d, p)).collect()
    }

    /// True when every day's quantiles are non-decreasing in the level.
    pub fn is_monotone(&self) -> bool {
        self.values
            .iter()
            .flatten()
            .all(|q| q.windows(2).all(|w| w[0] <= w[1]))
    }
}

/// Simulated trajectories for every posterior draw of one region, or of
/// several regions summed.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionPaths {
    pub region_code: String,
    pub first_day: NaiveDate,
    pub population: f64,
    /// Cumulative confirmed cases at the end of each day.
    pub cum_cases: Vec<u64>,
    pub trajectories: Vec<SirTrajectory>,
    /// Reproductive number per draw and day.
    pub r_t: Vec<Vec<f64>>,
    /// Removal rate per draw, as of the last day.
    pub gamma: Vec<f64>,
}

impl RegionPaths {
    pub fn days(&self) -> usize {
        self.cum_cases.len()
    }

    pub fn n_draws(&self) -> usize {
        self.trajectories.len()
    }

    pub fn last_day(&self) -> NaiveDate {
        self.first_day + Duration::days(self.days() as i64 - 1)
    }

    pub fn date_of(&self, day: usize) -> NaiveDate {
        self.first_day + Duration::days(day as i64)
    }

    /// Rebuilds `r_t` and `gamma` from the trajectories themselves, for
    /// sums of regions where no single parameter set applies.
    pub fn with_effective_rates(mut self) -> Result<Self, AnalysisError> {
        let rates: Result<Vec<_>, DynamicsError> = self
            .trajectories
            .par_iter()
            .map(|traj| {
                let b = effective_beta(traj)?;
                let g = effective_gamma(traj);
                let r: Vec<f64> = b
                    .iter()
                    .zip(&g)
                    .map(|(b, g)| match (b, g) {
                        (Some(b), Some(g)) if *g > 0.0 => b / g,
                        _ => f64::NAN,
                    })
                    .collect();
                let last = g.iter().rev().flatten().next().copied().unwrap_or(f64::NAN);
                Ok((r, last))
            })
            .collect();
        let (r_t, gamma) = rates?.into_iter().unzip();
        self.r_t = r_t;
        self.gamma = gamma;
        Ok(self)
    }
}

/// Simulates the trajectory of every draw against the dataset's dates.
pub fn paths_from_draws(draws: &PosteriorDraws, ds: &RegionDataset) -> Result<RegionPaths, AnalysisError> {
    if draws.n_draws() == 0 {
        return Err(AnalysisError::NoDraws);
    }
    let days = draws.dim().saturating_sub(N_SCALARS);
    if days != ds.days() {
        return Err(AnalysisError::HorizonMismatch {
            draws: days,
            data: ds.days(),
        });
    }
    let sims: Result<Vec<_>, AnalysisError> = (0..draws.n_draws())
        .into_par_iter()
        .map(|i| {
            let p = ParameterVector::from_flat(draws.row(i))?;
            let traj = p.trajectory(ds.population)?;
            let r: Vec<f64> = p.beta.iter().map(|b| b / p.gamma).collect();
            Ok((traj, r, p.gamma))
        })
        .collect();
    let mut trajectories = Vec::with_capacity(draws.n_draws());
    let mut r_t = Vec::with_capacity(draws.n_draws());
    let mut gamma = Vec::with_capacity(draws.n_draws());
    for (t, r, g) in sims? {
        trajectories.push(t);
        r_t.push(r);
        gamma.push(g);
    }
    Ok(RegionPaths {
        region_code: ds.region_code.clone(),
        first_day: ds.first_day,
        population: ds.population,
        cum_cases: cumulative(&ds.cases),
        trajectories,
        r_t,
        gamma,
    })
}

/// Convergence figures carried alongside a summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsSummary {
    pub chains: usize,
    pub draws: usize,
    /// `None` when no parameter has a defined R-hat.
    pub max_rhat: Option<f64>,
    pub min_ess: Option<f64>,
    pub divergence_rate: f64,
}

impl DiagnosticsSummary {
    pub fn from_draws(draws: &PosteriorDraws) -> Self {
        DiagnosticsSummary {
            chains: draws.chains(),
            draws: draws.n_draws(),
            max_rhat: Some(draws.max_rhat()).filter(|r| !r.is_nan()),
            min_ess: draws.ess.iter().copied().filter(|e| !e.is_nan()).reduce(f64::min),
            divergence_rate: draws.divergence_rate(),
        }
    }
}

/// Posterior bands for one region (or a sum of regions).
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSummary {
    pub region_code: String,
    pub first_day: NaiveDate,
    pub population: f64,
    /// `None` for aggregates, which have no single fatality rate.
    pub ifr: Option<Interval>,
    /// Scalar parameters by name, in draw column order.
    pub parameters: Vec<(String, Interval)>,
    pub diagnostics: Option<DiagnosticsSummary>,
    pub daily_infections: QuantileBand,
    /// `(I + R) / N` at the end of each day.
    pub cumulative_incidence: QuantileBand,
    pub r_t: QuantileBand,
    /// `(I + R)` over cumulative confirmed cases; undefined before the first case.
    pub undercount: QuantileBand,
}

impl RegionSummary {
    pub fn days(&self) -> usize {
        self.daily_infections.days()
    }

    pub fn date_of(&self, day: usize) -> NaiveDate {
        self.first_day + Duration::days(day as i64)
    }

    pub fn last_day(&self) -> usize {
        self.days().saturating_sub(1)
    }
}

/// Pointwise 2.5/50/97.5% bands of the daily quantities.
pub fn summarize_paths(paths: &RegionPaths) -> Result<RegionSummary, AnalysisError> {
    if paths.n_draws() == 0 {
        return Err(AnalysisError::NoDraws);
    }
    let days = paths.days();
    let n = paths.population;
    let by_day = |f: &(dyn Fn(&SirTrajectory, usize, usize) -> Option<f64> + Sync)| -> Vec<Vec<f64>> {
        (0..days)
            .into_par_iter()
            .map(|d| {
                paths
                    .trajectories
                    .iter()
                    .enumerate()
                    .filter_map(|(k, t)| f(t, k, d))
                    .filter(|v| !v.is_nan())
                    .collect()
            })
            .collect()
    };
    let nu = by_day(&|t, _, d| Some(t.nu[d]));
    let inc = by_day(&|t, _, d| Some(t.end_of_day(d).ever_infected() / n));
    let r = by_day(&|_, k, d| Some(paths.r_t[k][d]));
    let under = by_day(&|t, _, d| {
        let c = paths.cum_cases[d];
        (c > 0).then(|| t.end_of_day(d).ever_infected() / c as f64)
    });
    Ok(RegionSummary {
        region_code: paths.region_code.clone(),
        first_day: paths.first_day,
        population: n,
        ifr: None,
        parameters: Vec::new(),
        diagnostics: None,
        daily_infections: QuantileBand::from_days(&nu, &SUMMARY_LEVELS),
        cumulative_incidence: QuantileBand::from_days(&inc, &SUMMARY_LEVELS),
        r_t: QuantileBand::from_days(&r, &SUMMARY_LEVELS),
        undercount: QuantileBand::from_days(&under, &SUMMARY_LEVELS),
    })
}

/// Summarizes a region's posterior: scalar intervals plus daily bands.
pub fn summarize(draws: &PosteriorDraws, ds: &RegionDataset) -> Result<RegionSummary, AnalysisError> {
    let paths = paths_from_draws(draws, ds)?;
    let mut s = summarize_paths(&paths)?;
    s.parameters = draws
        .param_names
        .iter()
        .take(N_SCALARS)
        .enumerate()
        .map(|(j, name)| (name.clone(), Interval::from_values(&draws.column(j))))
        .collect();
    s.ifr = s.parameters.iter().find(|(n, _)| n == "ifr").map(|(_, i)| *i);
    s.diagnostics = Some(DiagnosticsSummary::from_draws(draws));
    Ok(s)
}

/// Expected deaths moved back by the rounded delay mean and divided by the
/// IFR; tracks the daily infections when the model fits.
pub fn deaths_overlay(
    traj: &SirTrajectory,
    ifr: f64,
    delay: &DelayDistribution,
) -> Result<Vec<Option<f64>>, AnalysisError> {
    let shift = delay.mean().round() as usize;
    let expected = crate::observation::expected_deaths(&traj.nu, ifr, delay).map_err(ModelError::from)?;
    Ok((0..traj.days())
        .map(|d| expected.get(d + shift).map(|e| e / ifr))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate, ContactPath, SirState};
    use crate::sampler::PosteriorDraws;

    pub(crate) fn fake_draws(params: &[ParameterVector]) -> PosteriorDraws {
        let days = params[0].days();
        let mut draws = Vec::new();
        for p in params {
            draws.extend(p.to_flat());
        }
        let n = params.len();
        PosteriorDraws {
            param_names: ParameterVector::names(days),
            draws,
            chain_id: (0..n).map(|i| i * 2 / n).collect(),
            divergent: vec![false; n],
            tree_depth: vec![3; n],
            rhat: vec![1.0; N_SCALARS + days],
            ess: vec![500.0; N_SCALARS + days],
            step_size: vec![0.1, 0.1],
            inv_metric: vec![vec![1.0; N_SCALARS + days]; 2],
            mean_accept: vec![0.9, 0.9],
        }
    }

    pub(crate) fn params(days: usize, ifr: f64, b: f64) -> ParameterVector {
        ParameterVector {
            ifr,
            beta: (0..days).map(|t| b * (1.0 - 0.004 * t as f64)).collect(),
            sigma: 0.05,
            gamma: 1.0 / 8.5,
            s1: 0.97e6,
            i1: 300.0,
            phi: 5.0,
            eta: 1000.0,
        }
    }

    pub(crate) fn dataset(days: usize, first_case: usize) -> RegionDataset {
        let mut cases = vec![0u64; days];
        for c in cases.iter_mut().skip(first_case) {
            *c = 40;
        }
        RegionDataset {
            region_code: "IN".into(),
            population: 1e6,
            first_day: NaiveDate::from_ymd_opt(2020, 3, 1).unwrap(),
            deaths: vec![0; days],
            cases,
            tests: vec![400; days],
            surveys: vec![],
            periods: vec![],
            cleaning_log: vec![],
            gap_days: vec![],
        }
    }

    #[test]
    fn type7_quantiles() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantiles(&v, &[0.0, 0.5, 1.0, 0.25]), vec![1.0, 2.5, 4.0, 1.75]);
        // numpy.quantile(np.arange(1, 11), 0.975) = 9.775
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert!((quantiles(&v, &[0.975])[0] - 9.775).abs() < 1e-12);
        assert_eq!(quantiles(&[7.0], &[0.025, 0.975]), vec![7.0, 7.0]);
    }

    #[test]
    fn summary_bands() {
        let days = 40;
        let ps: Vec<_> = (0..200).map(|k| params(days, 0.005 + 1e-5 * k as f64, 0.2 + 1e-4 * k as f64)).collect();
        let draws = fake_draws(&ps);
        let ds = dataset(days, 5);
        let s = summarize(&draws, &ds).unwrap();
        assert_eq!(s.days(), days);
        for band in [&s.daily_infections, &s.cumulative_incidence, &s.r_t, &s.undercount] {
            assert!(band.is_monotone());
        }
        assert!(s.undercount.values[..5].iter().all(Option::is_none));
        assert!(s.undercount.values[5..].iter().all(Option::is_some));
        let ifr = s.ifr.unwrap();
        assert!((ifr.median - (0.005 + 1e-5 * 99.5)).abs() < 1e-12);
        assert_eq!(s.parameters.len(), N_SCALARS);
        assert_eq!(s.diagnostics.as_ref().unwrap().chains, 2);
    }

    #[test]
    fn r_t_is_beta_over_gamma() {
        let days = 20;
        let p = params(days, 0.01, 0.3);
        let paths = paths_from_draws(&fake_draws(&[p.clone()]), &dataset(days, 0)).unwrap();
        for (r, b) in paths.r_t[0].iter().zip(&p.beta) {
            assert_eq!(*r, b / p.gamma);
        }
    }

    #[test]
    fn undercount_at_least_one_when_infections_exceed_cases() {
        let days = 30;
        let paths = paths_from_draws(&fake_draws(&[params(days, 0.01, 0.3)]), &dataset(days, 0)).unwrap();
        let s = summarize_paths(&paths).unwrap();
        for d in 0..days {
            let infected = paths.trajectories[0].end_of_day(d).ever_infected();
            if infected > paths.cum_cases[d] as f64 {
                assert!(s.undercount.median(d).unwrap() >= 1.0);
            }
        }
    }

    #[test]
    fn effective_rates_recover_parameters() {
        let days = 25;
        let p = params(days, 0.01, 0.3);
        let paths = paths_from_draws(&fake_draws(&[p.clone()]), &dataset(days, 0)).unwrap();
        let eff = paths.clone().with_effective_rates().unwrap();
        assert!((eff.gamma[0] - p.gamma).abs() < 1e-12);
        for (a, b) in eff.r_t[0].iter().zip(&paths.r_t[0]) {
            assert!((a - b).abs() < 1e-9 * b);
        }
    }

    #[test]
    fn horizon_mismatch_is_rejected() {
        let draws = fake_draws(&[params(10, 0.01, 0.3)]);
        assert!(matches!(
            paths_from_draws(&draws, &dataset(11, 0)),
            Err(AnalysisError::HorizonMismatch { draws: 10, data: 11 })
        ));
    }

    #[test]
    fn overlay_tracks_infections() {
        let days = 200;
        let beta: Vec<f64> = (0..days).map(|t| 0.25 + 0.08 * (t as f64 / 25.0).sin()).collect();
        let traj = simulate(
            SirState::from_initial(0.98e6, 500.0, 1e6),
            &ContactPath::new(beta, 0.0),
            1.0 / 8.5,
            1e6,
            days,
        )
        .unwrap();
        let delay = DelayDistribution::negative_binomial(21.0, 1.1, 40).unwrap();
        let overlay = deaths_overlay(&traj, 0.007, &delay).unwrap();
        let pairs: Vec<(f64, f64)> = overlay
            .iter()
            .zip(&traj.nu)
            .skip(40)
            .filter_map(|(o, &n)| o.map(|o| (o, n)))
            .collect();
        let corr = pearson(&pairs);
        assert!(corr > 0.95, "{corr}");
    }

    fn pearson(pairs: &[(f64, f64)]) -> f64 {
        let n = pairs.len() as f64;
        let (mx, my) = pairs.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 / n, a.1 + p.1 / n));
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for (x, y) in pairs {
            sxy += (x - mx) * (y - my);
            sxx += (x - mx).powi(2);
            syy += (y - my).powi(2);
        }
        sxy / (sxx * syy).sqrt()
    }
}
