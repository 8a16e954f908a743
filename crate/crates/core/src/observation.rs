//! Likelihood terms tying a latent trajectory to reported deaths, random
//! prevalence surveys and cumulative positive tests.
//!
//! Every log-likelihood returns `f64::NEG_INFINITY` instead of failing when the
//! observation is impossible under the trajectory, so a sampler can simply
//! reject the point.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

use crate::dynamics::SirTrajectory;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObservationError {
    #[error("delay shape and scale must be positive, got alpha={alpha}, beta={beta}")]
    InvalidDelayParameters { alpha: f64, beta: f64 },
    #[error("quantile cut must lie in (0, 1), got {0}")]
    InvalidQuantile(f64),
    #[error("infection fatality rate must lie in [0, 1], got {0}")]
    InvalidIfr(f64),
    #[error("new infections must be non-negative, got {value} on day {day}")]
    NegativeInfections { day: usize, value: f64 },
    #[error("series lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("survey window {start}..={end} is outside the {days}-day horizon")]
    WindowOutsideHorizon { start: usize, end: usize, days: usize },
    #[error("test period {start}..={end} is invalid: {reason}")]
    InvalidPeriod {
        start: usize,
        end: usize,
        reason: &'static str,
    },
    #[error("phi and eta must be positive, got phi={phi}, eta={eta}")]
    InvalidTestingParameters { phi: f64, eta: f64 },
}

/// Discrete distribution of days from infection to death, given death.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayDistribution {
    /// `pmf[s]` is the probability of death `s` days after infection.
    pub pmf: Vec<f64>,
}

impl DelayDistribution {
    /// Truncation horizon in days.
    pub fn max_delay(&self) -> usize {
        self.pmf.len() - 1
    }

    pub fn mean(&self) -> f64 {
        self.pmf
            .iter()
            .enumerate()
            .map(|(s, p)| s as f64 * p)
            .sum()
    }

    /// Negative binomial delay with `p = 1 / (beta + 1)`, truncated at
    /// `max_delay` days and renormalized.
    pub fn negative_binomial(alpha: f64, beta: f64, max_delay: usize) -> Result<Self, ObservationError> {
        check_shape(alpha, beta)?;
        let mut pmf: Vec<f64> = (0..=max_delay)
            .map(|k| neg_binomial_pmf(alpha, beta, k))
            .collect();
        normalize(&mut pmf);
        Ok(Self { pmf })
    }
}

fn check_shape(alpha: f64, beta: f64) -> Result<(), ObservationError> {
    if alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite() {
        Ok(())
    } else {
        Err(ObservationError::InvalidDelayParameters { alpha, beta })
    }
}

/// Number of failures before the `alpha`-th success with success probability
/// `1 / (beta + 1)`; the mean is `alpha * beta`.
fn neg_binomial_pmf(alpha: f64, beta: f64, k: usize) -> f64 {
    let k = k as f64;
    let ln_p = -(beta + 1.0).ln();
    let ln_q = beta.ln() + ln_p;
    (ln_gamma(k + alpha) - ln_gamma(k + 1.0) - ln_gamma(alpha) + alpha * ln_p + k * ln_q).exp()
}

fn normalize(pmf: &mut [f64]) {
    // Pairwise-free but compensated enough for <= a few hundred terms.
    let total: f64 = pmf.iter().sum();
    for p in pmf.iter_mut() {
        *p /= total;
    }
}

/// Negative binomial delay truncated at the smallest `m` whose CDF reaches
/// `quantile_cut`, then renormalized.
pub fn build_delay_pmf(alpha: f64, beta: f64, quantile_cut: f64) -> Result<DelayDistribution, ObservationError> {
    check_shape(alpha, beta)?;
    if !(quantile_cut > 0.0 && quantile_cut < 1.0) {
        return Err(ObservationError::InvalidQuantile(quantile_cut));
    }
    let mut pmf = Vec::new();
    let mut cdf = 0.0;
    let mut k = 0;
    while cdf < quantile_cut {
        let p = neg_binomial_pmf(alpha, beta, k);
        cdf += p;
        pmf.push(p);
        k += 1;
        if k > 1_000_000 {
            break;
        }
    }
    normalize(&mut pmf);
    Ok(DelayDistribution { pmf })
}

/// Convolves daily infections with the delay: `IFR * sum_k nu[k] * pmf[d - k]`.
pub fn expected_deaths(nu: &[f64], ifr: f64, delay: &DelayDistribution) -> Result<Vec<f64>, ObservationError> {
    if !(0.0..=1.0).contains(&ifr) {
        return Err(ObservationError::InvalidIfr(ifr));
    }
    if let Some((day, &value)) = nu.iter().enumerate().find(|(_, v)| !(**v >= 0.0)) {
        return Err(ObservationError::NegativeInfections { day, value });
    }
    Ok(convolve(nu, &delay.pmf).into_iter().map(|c| ifr * c).collect())
}

pub(crate) fn convolve(nu: &[f64], pmf: &[f64]) -> Vec<f64> {
    (0..nu.len())
        .map(|d| {
            let lags = pmf.len().min(d + 1);
            (0..lags).map(|s| pmf[s] * nu[d - s]).sum()
        })
        .collect()
}

/// Poisson log-likelihood of observed daily deaths.
pub fn deaths_loglik(observed: &[u64], expected: &[f64]) -> Result<f64, ObservationError> {
    if observed.len() != expected.len() {
        return Err(ObservationError::LengthMismatch(observed.len(), expected.len()));
    }
    let mut total = 0.0;
    for (&d, &mu) in observed.iter().zip(expected) {
        total += poisson_logpmf(d, mu);
    }
    Ok(total)
}

pub(crate) fn poisson_logpmf(d: u64, mu: f64) -> f64 {
    if mu == 0.0 {
        return if d == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    if !(mu > 0.0) {
        return f64::NEG_INFINITY;
    }
    let d = d as f64;
    d * mu.ln() - mu - ln_gamma(d + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurveyKind {
    /// Active infection (PCR), compared against `I_t / N`.
    Viral,
    /// Antibodies, compared against `R_t / N`.
    Sero,
}

/// A random-sample prevalence estimate over an inclusive window of days.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyObservation {
    pub kind: SurveyKind,
    pub estimate: f64,
    pub sample_size: u64,
    pub window_start: usize,
    pub window_end: usize,
}

impl SurveyObservation {
    pub fn window_len(&self) -> usize {
        self.window_end + 1 - self.window_start
    }

    /// Modelled prevalence averaged over the window.
    pub fn modelled_prevalence(&self, traj: &SirTrajectory) -> Result<f64, ObservationError> {
        let days = traj.days();
        if self.window_start > self.window_end || self.window_end >= days {
            return Err(ObservationError::WindowOutsideHorizon {
                start: self.window_start,
                end: self.window_end,
                days,
            });
        }
        let sum: f64 = (self.window_start..=self.window_end)
            .map(|d| {
                let st = traj.end_of_day(d);
                match self.kind {
                    SurveyKind::Viral => st.i,
                    SurveyKind::Sero => st.r,
                }
            })
            .sum();
        Ok(sum / (traj.population * self.window_len() as f64))
    }
}

/// Normal log-density of a survey estimate with binomial variance at the
/// modelled prevalence.
pub fn survey_loglik(traj: &SirTrajectory, obs: &SurveyObservation) -> Result<f64, ObservationError> {
    let theta = obs.modelled_prevalence(traj)?;
    Ok(survey_logdensity(obs.estimate, theta, obs.sample_size as f64))
}

pub(crate) fn survey_logdensity(estimate: f64, theta: f64, n: f64) -> f64 {
    if !(theta > 0.0 && theta < 1.0) {
        return f64::NEG_INFINITY;
    }
    let var = theta * (1.0 - theta) / n;
    let r = estimate - theta;
    -0.5 * (LN_2PI + var.ln()) - r * r / (2.0 * var)
}

/// Aggregated cases and tests over `start_day..=end_day`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPeriod {
    pub start_day: usize,
    pub end_day: usize,
    pub cases: u64,
    pub tests: u64,
    pub cum_cases_end: u64,
    pub cum_tests_end: u64,
}

impl TestPeriod {
    pub fn len(&self) -> usize {
        self.end_day + 1 - self.start_day
    }

    pub fn is_empty(&self) -> bool {
        self.end_day < self.start_day
    }

    /// Cumulative tests at the end of the day before the period starts.
    pub fn cum_tests_before(&self) -> u64 {
        self.cum_tests_end.saturating_sub(self.tests)
    }
}

pub(crate) fn check_periods(periods: &[TestPeriod], days: usize) -> Result<(), ObservationError> {
    let mut prev_end: Option<usize> = None;
    for p in periods {
        let bad = |reason| ObservationError::InvalidPeriod {
            start: p.start_day,
            end: p.end_day,
            reason,
        };
        if p.end_day < p.start_day {
            return Err(bad("ends before it starts"));
        }
        if p.end_day >= days {
            return Err(bad("extends past the horizon"));
        }
        if p.len() < 7 {
            return Err(bad("shorter than seven days"));
        }
        if p.tests > p.cum_tests_end {
            return Err(bad("period tests exceed cumulative tests"));
        }
        if let Some(e) = prev_end {
            if p.start_day != e + 1 {
                return Err(bad("not consecutive with the previous period"));
            }
        }
        prev_end = Some(p.end_day);
    }
    Ok(())
}

/// Fraction of infections that show up as confirmed cases by a day with
/// `cum_tests` cumulative tests.
pub fn confirmed_fraction(phi: f64, cum_tests: f64, n: f64) -> f64 {
    phi * (cum_tests / n).sqrt()
}

/// Normal log-likelihood of period case counts under the preferential
/// testing model.
///
/// A period ending on day `t` whose previous day is `t'` has mean
/// `phi_t (I_t + R_t) - phi_t' (I_t' + R_t')` and variance
/// `eta^2 * tests / N`.
pub fn testing_loglik(
    traj: &SirTrajectory,
    periods: &[TestPeriod],
    phi: f64,
    eta: f64,
    n: f64,
) -> Result<f64, ObservationError> {
    if !(phi > 0.0 && eta > 0.0) {
        return Err(ObservationError::InvalidTestingParameters { phi, eta });
    }
    check_periods(periods, traj.days())?;
    let mut total = 0.0;
    for p in periods {
        if p.tests == 0 {
            return Ok(f64::NEG_INFINITY);
        }
        let mean = period_mean(traj, p, phi, n);
        let var = eta * eta * p.tests as f64 / n;
        let r = p.cases as f64 - mean;
        total += -0.5 * (LN_2PI + var.ln()) - r * r / (2.0 * var);
    }
    Ok(total)
}

fn period_mean(traj: &SirTrajectory, p: &TestPeriod, phi: f64, n: f64) -> f64 {
    let end = traj.end_of_day(p.end_day).ever_infected();
    // states[start_day] is the end of the day before the period.
    let before = traj.states[p.start_day].ever_infected();
    confirmed_fraction(phi, p.cum_tests_end as f64, n) * end
        - confirmed_fraction(phi, p.cum_tests_before() as f64, n) * before
}

/// Splits the expected cases on day `t` into the share from that day's new
/// infections and the share from extra testing of earlier infections.
///
/// `cum_tests[d]` is cumulative tests at the end of day `d`; day `t` must be at
/// least 1 so that the previous day exists.
pub fn decompose_case_mean(
    traj: &SirTrajectory,
    phi: f64,
    cum_tests: &[f64],
    n: f64,
    t: usize,
) -> (f64, f64) {
    assert!(t >= 1, "decomposition needs a previous day");
    let phi_t = confirmed_fraction(phi, cum_tests[t], n);
    let phi_prev = confirmed_fraction(phi, cum_tests[t - 1], n);
    let nu_t = traj.nu[t];
    let before = traj.end_of_day(t - 1).ever_infected();
    (phi_t * nu_t, (phi_t - phi_prev) * before)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{simulate, ContactPath, SirState};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use statrs::distribution::{Discrete, DiscreteCDF, NegativeBinomial};

    fn sample_traj(days: usize) -> SirTrajectory {
        let beta: Vec<f64> = (0..days).map(|t| 0.25 + 0.1 * ((t as f64) / 9.0).sin()).collect();
        simulate(
            SirState::from_initial(99_000.0, 300.0, 100_000.0),
            &ContactPath::new(beta, 0.02),
            0.12,
            100_000.0,
            days,
        )
        .unwrap()
    }

    #[test]
    fn pmf_matches_reference_negative_binomial() {
        let delay = DelayDistribution::negative_binomial(21.0, 1.1, 60).unwrap();
        let reference = NegativeBinomial::new(21.0, 1.0 / 2.1).unwrap();
        let mass = reference.cdf(60);
        for (k, p) in delay.pmf.iter().enumerate() {
            assert_relative_eq!(*p, reference.pmf(k as u64) / mass, max_relative = 1e-10);
        }
    }

    #[test]
    fn ninety_ninth_percentile_cut() {
        // The stated parameterization (mean 23.1) reaches CDF 0.99 at 42 days;
        // CDF(40) is 0.98649.
        let reference = NegativeBinomial::new(21.0, 1.0 / 2.1).unwrap();
        assert!(reference.cdf(41) < 0.99 && reference.cdf(42) >= 0.99);
        let delay = build_delay_pmf(21.0, 1.1, 0.99).unwrap();
        assert_eq!(delay.max_delay(), 42);
        let cut_985 = build_delay_pmf(21.0, 1.1, 0.985).unwrap();
        assert_eq!(cut_985.max_delay(), 40);
    }

    #[test]
    fn untruncated_mean_is_shape_times_scale() {
        let wide = DelayDistribution::negative_binomial(21.0, 1.1, 400).unwrap();
        assert_relative_eq!(wide.mean(), 23.1, max_relative = 1e-10);
    }

    #[test]
    fn geometric_special_case() {
        let delay = build_delay_pmf(1.0, 1.0, 1.0 - 1e-12).unwrap();
        assert_relative_eq!(delay.pmf[0], 0.5, max_relative = 1e-9);
        assert_relative_eq!(delay.pmf[3], 0.0625, max_relative = 1e-9);
    }

    #[test]
    fn delay_rejects_bad_parameters() {
        assert!(build_delay_pmf(0.0, 1.0, 0.9).is_err());
        assert!(build_delay_pmf(1.0, -1.0, 0.9).is_err());
        assert!(build_delay_pmf(1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn single_day_pulse_traces_the_delay() {
        let delay = DelayDistribution::negative_binomial(21.0, 1.1, 40).unwrap();
        let mut nu = vec![0.0; 60];
        nu[1] = 1000.0;
        let mu = expected_deaths(&nu, 0.01, &delay).unwrap();
        assert_eq!(mu[0], 0.0);
        for t in 1..60 {
            let tau = delay.pmf.get(t - 1).copied().unwrap_or(0.0);
            assert_relative_eq!(mu[t], 10.0 * tau, max_relative = 1e-12);
        }
    }

    #[test]
    fn no_infections_or_zero_ifr_give_no_deaths() {
        let delay = DelayDistribution::negative_binomial(21.0, 1.1, 40).unwrap();
        assert!(expected_deaths(&[0.0; 30], 0.01, &delay)
            .unwrap()
            .iter()
            .all(|&m| m == 0.0));
        assert!(expected_deaths(&[50.0; 30], 0.0, &delay)
            .unwrap()
            .iter()
            .all(|&m| m == 0.0));
        assert!(expected_deaths(&[1.0, -1.0], 0.01, &delay).is_err());
        assert!(expected_deaths(&[1.0], 1.5, &delay).is_err());
    }

    #[test]
    fn poisson_terms() {
        assert_eq!(deaths_loglik(&[0, 0], &[0.0, 0.0]).unwrap(), 0.0);
        let expected = 2.0 * 3f64.ln() - 3.0 - 2f64.ln();
        assert_relative_eq!(deaths_loglik(&[2], &[3.0]).unwrap(), expected, max_relative = 1e-14);
        assert_eq!(deaths_loglik(&[1], &[0.0]).unwrap(), f64::NEG_INFINITY);
        assert!(deaths_loglik(&[1, 2], &[1.0]).is_err());
    }

    #[test]
    fn duplicated_series_doubles_the_term() {
        let d = [3u64, 0, 7, 12];
        let mu = [2.5, 0.4, 6.0, 15.0];
        let once = deaths_loglik(&d, &mu).unwrap();
        let dd: Vec<u64> = d.iter().chain(d.iter()).copied().collect();
        let mm: Vec<f64> = mu.iter().chain(mu.iter()).copied().collect();
        assert_eq!(deaths_loglik(&dd, &mm).unwrap(), 2.0 * once);
    }

    fn flat_traj(i: f64, r: f64, n: f64, days: usize) -> SirTrajectory {
        let st = SirState::new(n - i - r, i, r);
        SirTrajectory {
            states: vec![st; days + 1],
            nu: vec![0.0; days],
            vaccinated: vec![0.0; days],
            population: n,
        }
    }

    #[test]
    fn survey_at_mode() {
        let n = 6_732_219.0;
        let traj = flat_traj(0.0174 * n, 0.02 * n, n, 10);
        let obs = SurveyObservation {
            kind: SurveyKind::Viral,
            estimate: 0.0174,
            sample_size: 3605,
            window_start: 3,
            window_end: 7,
        };
        let theta: f64 = 0.0174;
        let expected = -0.5 * (2.0 * std::f64::consts::PI * theta * (1.0 - theta) / 3605.0).ln();
        assert_relative_eq!(survey_loglik(&traj, &obs).unwrap(), expected, max_relative = 1e-12);
    }

    #[test]
    fn sero_survey_is_finite_for_interior_prevalence() {
        let n = 11_689_100.0;
        let obs = SurveyObservation {
            kind: SurveyKind::Sero,
            estimate: 0.013,
            sample_size: 667,
            window_start: 0,
            window_end: 19,
        };
        for r in [1e-5, 0.005, 0.013, 0.2, 0.9] {
            let ll = survey_loglik(&flat_traj(0.001 * n, r * n, n, 20), &obs).unwrap();
            assert!(ll.is_finite());
        }
        let zero = survey_loglik(&flat_traj(0.001 * n, 0.0, n, 20), &obs).unwrap();
        assert_eq!(zero, f64::NEG_INFINITY);
        let outside = SurveyObservation {
            window_end: 20,
            ..obs.clone()
        };
        assert!(survey_loglik(&flat_traj(1.0, 1.0, n, 20), &outside).is_err());
    }

    #[test]
    fn survey_density_peaks_at_estimate_neighbourhood() {
        // Unimodal in theta when scanned on a grid.
        let est = 0.02;
        let grid: Vec<f64> = (1..400).map(|k| k as f64 * 1e-4).collect();
        let vals: Vec<f64> = grid.iter().map(|&t| survey_logdensity(est, t, 3000.0)).collect();
        let imax = vals
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!(vals[..imax].windows(2).all(|w| w[1] > w[0]));
        assert!(vals[imax..].windows(2).all(|w| w[1] < w[0]));
        assert!((grid[imax] - est).abs() < 1e-3);
    }

    fn periods_for(cases: &[u64], tests: &[u64], start: usize, l: usize) -> Vec<TestPeriod> {
        let mut out = Vec::new();
        let (mut cc, mut ct) = (0u64, 0u64);
        for d in 0..start {
            cc += cases[d];
            ct += tests[d];
        }
        let mut s = start;
        while s + l <= cases.len() {
            let c: u64 = cases[s..s + l].iter().sum();
            let t: u64 = tests[s..s + l].iter().sum();
            cc += c;
            ct += t;
            out.push(TestPeriod {
                start_day: s,
                end_day: s + l - 1,
                cases: c,
                tests: t,
                cum_cases_end: cc,
                cum_tests_end: ct,
            });
            s += l;
        }
        out
    }

    #[test]
    fn full_population_tested_gives_phi() {
        assert_eq!(confirmed_fraction(0.37, 5000.0, 5000.0), 0.37);
    }

    #[test]
    fn one_period_matches_hand_density() {
        let traj = sample_traj(20);
        let n = traj.population;
        let p = TestPeriod {
            start_day: 5,
            end_day: 11,
            cases: 900,
            tests: 4_000,
            cum_cases_end: 1_000,
            cum_tests_end: 5_000,
        };
        let (phi, eta) = (0.8, 300.0);
        // Independent evaluation from the raw compartments.
        let a_end = phi * (5_000.0f64 / n).sqrt();
        let a_prev = phi * (1_000.0f64 / n).sqrt();
        let x_end = traj.states[12].i + traj.states[12].r;
        let x_prev = traj.states[5].i + traj.states[5].r;
        let mean = a_end * x_end - a_prev * x_prev;
        let sd = (eta * eta * 4_000.0 / n).sqrt();
        let z = (900.0 - mean) / sd;
        let expected = -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let got = testing_loglik(&traj, &[p], phi, eta, n).unwrap();
        assert_relative_eq!(got, expected, max_relative = 1e-12);
    }

    #[test]
    fn periods_add() {
        let traj = sample_traj(30);
        let n = traj.population;
        let cases: Vec<u64> = (0..30).map(|d| 20 + 3 * d as u64).collect();
        let tests: Vec<u64> = (0..30).map(|d| 200 + 40 * d as u64).collect();
        let periods = periods_for(&cases, &tests, 2, 7);
        assert_eq!(periods.len(), 4);
        let joint = testing_loglik(&traj, &periods, 1.1, 250.0, n).unwrap();
        let split: f64 = periods
            .iter()
            .map(|p| testing_loglik(&traj, std::slice::from_ref(p), 1.1, 250.0, n).unwrap())
            .sum();
        assert_relative_eq!(joint, split, max_relative = 1e-12);
    }

    #[test]
    fn period_equals_sum_of_daily_normals() {
        // Daily means telescope and daily variances add up to the period law.
        let traj = sample_traj(21);
        let n = traj.population;
        let tests: Vec<u64> = (0..21).map(|d| 100 + 17 * d as u64).collect();
        let cases: Vec<u64> = (0..21).map(|d| 10 + d as u64).collect();
        let periods = periods_for(&cases, &tests, 0, 7);
        let (phi, eta) = (0.9, 120.0);
        let mut cum = vec![0.0; 21];
        let mut acc = 0.0;
        for d in 0..21 {
            acc += tests[d] as f64;
            cum[d] = acc;
        }
        let mut expected = 0.0;
        for p in &periods {
            let mut mean = 0.0;
            let mut var = 0.0;
            for d in p.start_day..=p.end_day {
                let x = traj.end_of_day(d).ever_infected();
                let x_prev = traj.states[d].ever_infected();
                let c_prev = if d == 0 { 0.0 } else { cum[d - 1] };
                mean += phi * (cum[d] / n).sqrt() * x - phi * (c_prev / n).sqrt() * x_prev;
                var += eta * eta * tests[d] as f64 / n;
            }
            let r = p.cases as f64 - mean;
            expected += -0.5 * (2.0 * std::f64::consts::PI * var).ln() - r * r / (2.0 * var);
        }
        let got = testing_loglik(&traj, &periods, phi, eta, n).unwrap();
        assert_relative_eq!(got, expected, max_relative = 1e-10);
    }

    #[test]
    fn zero_test_period_is_impossible() {
        let traj = sample_traj(14);
        let p = TestPeriod {
            start_day: 0,
            end_day: 6,
            cases: 0,
            tests: 0,
            cum_cases_end: 0,
            cum_tests_end: 0,
        };
        assert_eq!(
            testing_loglik(&traj, &[p], 1.0, 1.0, traj.population).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn malformed_periods_are_rejected() {
        let traj = sample_traj(30);
        let n = traj.population;
        let short = TestPeriod {
            start_day: 0,
            end_day: 4,
            cases: 1,
            tests: 10,
            cum_cases_end: 1,
            cum_tests_end: 10,
        };
        assert!(testing_loglik(&traj, &[short], 1.0, 1.0, n).is_err());
        let cases = vec![5u64; 30];
        let tests = vec![50u64; 30];
        let mut ps = periods_for(&cases, &tests, 0, 7);
        ps.remove(1);
        assert!(testing_loglik(&traj, &ps, 1.0, 1.0, n).is_err());
        assert!(testing_loglik(&traj, &[], 0.0, 1.0, n).is_err());
    }

    #[test]
    fn case_mean_decomposition() {
        let traj = sample_traj(15);
        let n = traj.population;
        let cum: Vec<f64> = (0..15).map(|d| 1000.0 * (d as f64 + 1.0).powf(1.3)).collect();
        for t in 1..15 {
            let (a, b) = decompose_case_mean(&traj, 0.6, &cum, n, t);
            let x = traj.end_of_day(t).ever_infected();
            let x_prev = traj.end_of_day(t - 1).ever_infected();
            let full = confirmed_fraction(0.6, cum[t], n) * x - confirmed_fraction(0.6, cum[t - 1], n) * x_prev;
            assert_relative_eq!(a + b, full, max_relative = 1e-10);
        }
        let flat = vec![500.0; 15];
        let (_, backlog) = decompose_case_mean(&traj, 0.6, &flat, n, 4);
        assert_eq!(backlog, 0.0);
        let frozen = flat_traj(10.0, 10.0, n, 5);
        let (share, _) = decompose_case_mean(&frozen, 0.6, &flat, n, 2);
        assert_eq!(share, 0.0);
    }

    proptest! {
        #[test]
        fn pmf_sums_to_one(alpha in 0.2f64..60.0, beta in 0.05f64..5.0, cut in 0.5f64..0.999) {
            let d = build_delay_pmf(alpha, beta, cut).unwrap();
            let s: f64 = d.pmf.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(d.pmf.iter().all(|&p| p >= 0.0));
        }

        #[test]
        fn convolution_matches_double_loop(
            nu in prop::collection::vec(0.0f64..1e4, 1..=60),
            ifr in 0.0f64..0.03,
        ) {
            let delay = DelayDistribution::negative_binomial(21.0, 1.1, 40).unwrap();
            let mu = expected_deaths(&nu, ifr, &delay).unwrap();
            for t in 0..nu.len() {
                let mut acc = 0.0;
                for k in 0..nu.len() {
                    if k <= t && t - k < delay.pmf.len() {
                        acc += nu[k] * delay.pmf[t - k];
                    }
                }
                let want = ifr * acc;
                prop_assert!((mu[t] - want).abs() <= 1e-12 * want.abs().max(1e-300));
            }
        }

        #[test]
        fn shifting_cumulative_history_keeps_period_terms(shift in 0u64..1_000_000) {
            // Adding cases that happened before the first period changes the
            // cumulative counters but not the period increments.
            let traj = sample_traj(21);
            let n = traj.population;
            let cases = vec![30u64; 21];
            let tests = vec![300u64; 21];
            let base = periods_for(&cases, &tests, 0, 7);
            let shifted: Vec<TestPeriod> = base
                .iter()
                .map(|p| TestPeriod { cum_cases_end: p.cum_cases_end + shift, ..p.clone() })
                .collect();
            let a = testing_loglik(&traj, &base, 0.7, 90.0, n).unwrap();
            let b = testing_loglik(&traj, &shifted, 0.7, 90.0, n).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn poisson_term_is_unimodal_in_mean(d in 0u64..200) {
            let grid: Vec<f64> = (1..600).map(|k| k as f64 * 0.5).collect();
            let vals: Vec<f64> = grid.iter().map(|&m| poisson_logpmf(d, m)).collect();
            let imax = vals
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            prop_assert!(vals[..imax].windows(2).all(|w| w[1] > w[0]));
            prop_assert!(vals[imax..].windows(2).all(|w| w[1] < w[0]));
        }
    }
}
