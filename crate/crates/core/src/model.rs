//! Parameters, priors, coordinate transforms and the log-posterior of the
//! single-region SIR model, with its gradient.
//!
//! The sampler works in an unconstrained vector of length `T + 7`:
//!
//! ```text
//! [ifr, sigma, infectious_period, s1, i1, phi, eta, b1, z_2, ..., z_T]
//! ```
//!
//! Bounded scalars use a logit-affine map. The contact path is non-centered:
//! the latent level is `b_t = b_1 + sigma * (z_2 + ... + z_t)` with standard
//! normal `z`, and the contact rate is `beta_t = softplus(b_t)`, a smooth floor
//! at zero. Priors on `gamma` are stated on the infectious period `1 / gamma`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::dynamics::{simulate, ContactPath, DynamicsError, SirState, SirTrajectory};
use crate::observation::{
    check_periods, DelayDistribution, ObservationError, SurveyKind, SurveyObservation, TestPeriod,
};
use crate::sampler::{LogDensity, PosteriorDraws};

/// Sharpness `k` of `softplus(b) = ln(1 + exp(k b)) / k`.
pub const SOFTPLUS_SHARPNESS: f64 = 100.0;

/// Number of scalar parameters ahead of the contact path.
pub const N_SCALARS: usize = 7;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid prior for {param}: {reason}")]
    InvalidPrior { param: String, reason: String },
    #[error("expected a vector of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("model horizon must be at least one day")]
    EmptyHorizon,
    #[error("population must be positive, got {0}")]
    InvalidPopulation(f64),
    #[error("death series has {have} days but the horizon is {need}")]
    DeathsLength { have: usize, need: usize },
    #[error(transparent)]
    Observation(#[from] ObservationError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("parameter {0} is outside its prior support")]
    OutsideSupport(&'static str),
    #[error("need at least {need} draws to build a prior, got {have}")]
    TooFewDraws { have: usize, need: usize },
    #[error("draws for {param} have not converged (R-hat {rhat})")]
    NotConverged { param: String, rhat: f64 },
    #[error("unknown parameter {0}")]
    UnknownParameter(String),
}

/// A one-dimensional prior descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Prior {
    Uniform { lo: f64, hi: f64 },
    TruncatedNormal { mean: f64, sd: f64, lo: f64, hi: f64 },
    /// Normal moment-matched to posterior draws of an earlier fit, truncated
    /// to the original support.
    Empirical { mean: f64, sd: f64, lo: f64, hi: f64 },
}

impl Prior {
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Prior::Uniform { lo, hi }
            | Prior::TruncatedNormal { lo, hi, .. }
            | Prior::Empirical { lo, hi, .. } => (lo, hi),
        }
    }

    fn validate(&self, param: &str) -> Result<(), ModelError> {
        let bad = |reason: &str| ModelError::InvalidPrior {
            param: param.to_string(),
            reason: reason.to_string(),
        };
        let (lo, hi) = self.bounds();
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(bad("bounds must be finite"));
        }
        if !(lo < hi) {
            return Err(bad("lower bound must be below upper bound"));
        }
        match *self {
            Prior::Uniform { .. } => Ok(()),
            Prior::TruncatedNormal { mean, sd, .. } | Prior::Empirical { mean, sd, .. } => {
                if !(sd > 0.0 && sd.is_finite() && mean.is_finite()) {
                    return Err(bad("normal scale must be positive and finite"));
                }
                if self.log_normalizer().is_finite() {
                    Ok(())
                } else {
                    Err(bad("no probability mass inside the bounds"))
                }
            }
        }
    }

    fn log_normalizer(&self) -> f64 {
        match *self {
            Prior::Uniform { lo, hi } => (hi - lo).ln(),
            Prior::TruncatedNormal { mean, sd, lo, hi } | Prior::Empirical { mean, sd, lo, hi } => {
                let std = Normal::standard();
                let mass = std.cdf((hi - mean) / sd) - std.cdf((lo - mean) / sd);
                sd.ln() + 0.5 * LN_2PI + mass.ln()
            }
        }
    }

    /// Log-density at `v`, `-inf` outside the closed support.
    pub fn log_density(&self, v: f64) -> f64 {
        let (lo, hi) = self.bounds();
        if !(v >= lo && v <= hi) {
            return f64::NEG_INFINITY;
        }
        self.log_kernel(v) - self.log_normalizer()
    }

    fn log_kernel(&self, v: f64) -> f64 {
        match *self {
            Prior::Uniform { .. } => 0.0,
            Prior::TruncatedNormal { mean, sd, .. } | Prior::Empirical { mean, sd, .. } => {
                let z = (v - mean) / sd;
                -0.5 * z * z
            }
        }
    }

    fn dlog_kernel(&self, v: f64) -> f64 {
        match *self {
            Prior::Uniform { .. } => 0.0,
            Prior::TruncatedNormal { mean, sd, .. } | Prior::Empirical { mean, sd, .. } => {
                -(v - mean) / (sd * sd)
            }
        }
    }
}

/// One descriptor per parameter. `s1` and `i1` are fractions of the population
/// and must be uniform; their joint prior is uniform on the part of the box
/// where `s1 + i1 <= 1`. `infectious_period` is the prior on `1 / gamma`, and
/// `beta1` is on the latent level of the first day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSpec {
    pub ifr: Prior,
    pub beta1: Prior,
    pub sigma: Prior,
    #[serde(alias = "gamma_inv")]
    pub infectious_period: Prior,
    pub s1: Prior,
    pub i1: Prior,
    pub phi: Prior,
    pub eta: Prior,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            ifr: Prior::Uniform { lo: 0.0, hi: 0.03 },
            beta1: Prior::Uniform { lo: 0.0, hi: 2.0 },
            sigma: Prior::Uniform { lo: 0.0, hi: 0.3 },
            infectious_period: Prior::TruncatedNormal {
                mean: 8.5,
                sd: 1.5,
                lo: 5.5,
                hi: 11.5,
            },
            s1: Prior::Uniform { lo: 0.9, hi: 1.0 },
            i1: Prior::Uniform { lo: 0.0, hi: 0.001 },
            phi: Prior::Uniform { lo: 0.0, hi: 20.0 },
            eta: Prior::Uniform { lo: 0.0, hi: 5e4 },
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        for (name, p) in [
            ("ifr", &self.ifr),
            ("beta1", &self.beta1),
            ("sigma", &self.sigma),
            ("infectious_period", &self.infectious_period),
            ("s1", &self.s1),
            ("i1", &self.i1),
            ("phi", &self.phi),
            ("eta", &self.eta),
        ] {
            p.validate(name)?;
        }
        let invalid = |param: &str, reason: &str| ModelError::InvalidPrior {
            param: param.into(),
            reason: reason.into(),
        };
        let (ifr_lo, ifr_hi) = self.ifr.bounds();
        if ifr_lo < 0.0 || ifr_hi > 1.0 {
            return Err(invalid("ifr", "support must lie in [0, 1]"));
        }
        for (name, p) in [("sigma", &self.sigma), ("phi", &self.phi), ("eta", &self.eta)] {
            if p.bounds().0 < 0.0 {
                return Err(invalid(name, "support must be non-negative"));
            }
        }
        if self.infectious_period.bounds().0 < 1.0 {
            return Err(invalid("infectious_period", "must be at least one day"));
        }
        for (name, p) in [("s1", &self.s1), ("i1", &self.i1)] {
            if !matches!(p, Prior::Uniform { .. }) {
                return Err(invalid(name, "only uniform priors are supported"));
            }
            let (lo, hi) = p.bounds();
            if lo < 0.0 || hi > 1.0 {
                return Err(invalid(name, "fractions must lie in [0, 1]"));
            }
        }
        if self.s1.bounds().0 + self.i1.bounds().1 >= 1.0 {
            return Err(invalid("s1", "lower bound plus the i1 upper bound must stay below 1"));
        }
        Ok(())
    }

    /// Log of the area, in population-fraction units, of the joint `(s1, i1)` support.
    fn initial_log_area(&self) -> f64 {
        let (ls, hs) = self.s1.bounds();
        let (li, hi) = self.i1.bounds();
        // Width in s of the strip at i: min(hs, 1 - i) - ls.
        let knee = (1.0 - hs).clamp(li, hi);
        let flat = (hs - ls) * (knee - li);
        let sloped = {
            let f = |u: f64| (1.0 - ls) * u - 0.5 * u * u;
            f(hi) - f(knee)
        };
        (flat + sloped).ln()
    }
}

/// Model parameters in natural units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub ifr: f64,
    pub beta: Vec<f64>,
    pub sigma: f64,
    pub gamma: f64,
    pub s1: f64,
    pub i1: f64,
    pub phi: f64,
    pub eta: f64,
}

impl ParameterVector {
    pub fn days(&self) -> usize {
        self.beta.len()
    }

    /// `[ifr, sigma, gamma, s1, i1, phi, eta, beta_1..beta_T]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = vec![
            self.ifr, self.sigma, self.gamma, self.s1, self.i1, self.phi, self.eta,
        ];
        v.extend_from_slice(&self.beta);
        v
    }

    pub fn from_flat(v: &[f64]) -> Result<Self, ModelError> {
        if v.len() <= N_SCALARS {
            return Err(ModelError::DimensionMismatch {
                expected: N_SCALARS + 1,
                got: v.len(),
            });
        }
        Ok(Self {
            ifr: v[0],
            sigma: v[1],
            gamma: v[2],
            s1: v[3],
            i1: v[4],
            phi: v[5],
            eta: v[6],
            beta: v[N_SCALARS..].to_vec(),
        })
    }

    pub fn names(days: usize) -> Vec<String> {
        let mut names: Vec<String> = ["ifr", "sigma", "gamma", "s1", "i1", "phi", "eta"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        names.extend((1..=days).map(|t| format!("beta[{t}]")));
        names
    }

    pub fn initial_state(&self, n: f64) -> SirState {
        SirState::from_initial(self.s1, self.i1, n)
    }

    pub fn trajectory(&self, n: f64) -> Result<SirTrajectory, DynamicsError> {
        simulate(
            self.initial_state(n),
            &ContactPath::new(self.beta.clone(), self.sigma),
            self.gamma,
            n,
            self.days(),
        )
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logit(u: f64) -> f64 {
    (u / (1.0 - u)).ln()
}

/// `ln(1 + exp(k b)) / k`.
pub fn softplus(b: f64) -> f64 {
    let kb = SOFTPLUS_SHARPNESS * b;
    if kb > 0.0 {
        b + (-kb).exp().ln_1p() / SOFTPLUS_SHARPNESS
    } else {
        kb.exp().ln_1p() / SOFTPLUS_SHARPNESS
    }
}

/// Inverse of [`softplus`]; `-inf` at zero.
pub fn inverse_softplus(beta: f64) -> f64 {
    let kb = SOFTPLUS_SHARPNESS * beta;
    if kb > 30.0 {
        beta + (-(-kb).exp()).ln_1p() / SOFTPLUS_SHARPNESS
    } else {
        kb.exp_m1().ln() / SOFTPLUS_SHARPNESS
    }
}

/// `(value, d value / dx, log |d value / dx|, d log|.| / dx)` of the map
/// `x -> lo + (hi - lo) * sigmoid(x)`.
#[derive(Clone, Copy)]
struct Bounded {
    value: f64,
    slope: f64,
    log_jac: f64,
    dlog_jac: f64,
}

fn bounded(x: f64, lo: f64, hi: f64) -> Bounded {
    let s = sigmoid(x);
    let w = hi - lo;
    let sp = s * (1.0 - s);
    Bounded {
        value: lo + w * s,
        slope: w * sp,
        log_jac: w.ln() + log_sigmoid(x) + log_sigmoid(-x),
        dlog_jac: 1.0 - 2.0 * s,
    }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn to_unit(v: f64, lo: f64, hi: f64) -> f64 {
    logit((v - lo) / (hi - lo))
}

/// Observations entering the likelihood for one region. An empty `deaths`
/// series drops the death term.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelData {
    pub days: usize,
    pub population: f64,
    pub deaths: Vec<u64>,
    pub surveys: Vec<SurveyObservation>,
    pub periods: Vec<TestPeriod>,
}

impl ModelData {
    /// Prior-only data over `days` days.
    pub fn empty(days: usize, population: f64) -> Self {
        Self {
            days,
            population,
            deaths: Vec::new(),
            surveys: Vec::new(),
            periods: Vec::new(),
        }
    }

    fn has_observations(&self) -> bool {
        !(self.deaths.is_empty() && self.surveys.is_empty() && self.periods.is_empty())
    }
}

/// Log-posterior split into its parts.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Components {
    pub prior: f64,
    pub jacobian: f64,
    pub deaths: f64,
    pub surveys: f64,
    pub testing: f64,
}

impl Components {
    pub fn total(&self) -> f64 {
        let t = self.prior + self.jacobian + self.deaths + self.surveys + self.testing;
        if t.is_nan() {
            f64::NEG_INFINITY
        } else {
            t
        }
    }
}

/// Log-posterior of one region in unconstrained coordinates.
#[derive(Debug, Clone)]
pub struct SirModel {
    data: ModelData,
    spec: PriorSpec,
    delay: DelayDistribution,
    ln_factorials: Vec<f64>,
    initial_log_area: f64,
}

/// Log-prior of a parameter vector in natural units, including the random
/// walk of the latent contact level; `-inf` outside the support.
pub fn log_prior(p: &ParameterVector, spec: &PriorSpec, n: f64) -> f64 {
    let t = p.days();
    if t == 0 {
        return f64::NEG_INFINITY;
    }
    let mut lp = spec.ifr.log_density(p.ifr)
        + spec.sigma.log_density(p.sigma)
        + spec.phi.log_density(p.phi)
        + spec.eta.log_density(p.eta);
    if !(p.gamma > 0.0) {
        return f64::NEG_INFINITY;
    }
    lp += spec.infectious_period.log_density(1.0 / p.gamma);
    lp += log_prior_initial(p.s1 / n, p.i1 / n, spec);
    if p.beta.iter().any(|b| !(*b > 0.0)) {
        return f64::NEG_INFINITY;
    }
    let latent: Vec<f64> = p.beta.iter().map(|&b| inverse_softplus(b)).collect();
    lp += spec.beta1.log_density(latent[0]);
    lp + walk_log_density(&latent, p.sigma)
}

fn log_prior_initial(s: f64, i: f64, spec: &PriorSpec) -> f64 {
    let (ls, hs) = spec.s1.bounds();
    let (li, hi) = spec.i1.bounds();
    if s >= ls && s <= hs && i >= li && i <= hi && s + i <= 1.0 {
        -spec.initial_log_area()
    } else {
        f64::NEG_INFINITY
    }
}

/// `sum_t log Normal(b_{t+1}; b_t, sigma^2)`.
pub fn walk_log_density(latent: &[f64], sigma: f64) -> f64 {
    if latent.len() < 2 {
        return 0.0;
    }
    if !(sigma > 0.0) {
        return f64::NEG_INFINITY;
    }
    let steps = (latent.len() - 1) as f64;
    let ss: f64 = latent.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    -steps * (0.5 * LN_2PI + sigma.ln()) - ss / (2.0 * sigma * sigma)
}

impl SirModel {
    pub fn new(data: ModelData, spec: PriorSpec, delay: DelayDistribution) -> Result<Self, ModelError> {
        spec.validate()?;
        if data.days == 0 {
            return Err(ModelError::EmptyHorizon);
        }
        if !(data.population > 0.0 && data.population.is_finite()) {
            return Err(ModelError::InvalidPopulation(data.population));
        }
        if !data.deaths.is_empty() && data.deaths.len() != data.days {
            return Err(ModelError::DeathsLength {
                have: data.deaths.len(),
                need: data.days,
            });
        }
        for s in &data.surveys {
            if s.window_start > s.window_end || s.window_end >= data.days {
                return Err(ObservationError::WindowOutsideHorizon {
                    start: s.window_start,
                    end: s.window_end,
                    days: data.days,
                }
                .into());
            }
        }
        check_periods(&data.periods, data.days)?;
        let ln_factorials = data
            .deaths
            .iter()
            .map(|&d| statrs::function::gamma::ln_gamma(d as f64 + 1.0))
            .collect();
        let initial_log_area = spec.initial_log_area();
        Ok(Self {
            data,
            spec,
            delay,
            ln_factorials,
            initial_log_area,
        })
    }

    pub fn data(&self) -> &ModelData {
        &self.data
    }

    pub fn spec(&self) -> &PriorSpec {
        &self.spec
    }

    pub fn delay(&self) -> &DelayDistribution {
        &self.delay
    }

    pub fn days(&self) -> usize {
        self.data.days
    }

    pub fn population(&self) -> f64 {
        self.data.population
    }

    pub fn dim(&self) -> usize {
        self.data.days + N_SCALARS
    }

    fn check_dim(&self, len: usize) -> Result<(), ModelError> {
        if len == self.dim() {
            Ok(())
        } else {
            Err(ModelError::DimensionMismatch {
                expected: self.dim(),
                got: len,
            })
        }
    }

    /// Maps an unconstrained vector to natural units.
    pub fn constrain(&self, x: &[f64]) -> Result<ParameterVector, ModelError> {
        self.check_dim(x.len())?;
        Ok(self.forward_transform(x).params)
    }

    /// Inverse of [`SirModel::constrain`].
    pub fn unconstrain(&self, p: &ParameterVector) -> Result<Vec<f64>, ModelError> {
        let t = self.days();
        if p.days() != t {
            return Err(ModelError::DimensionMismatch {
                expected: t,
                got: p.days(),
            });
        }
        let n = self.population();
        if !log_prior(p, &self.spec, n).is_finite() {
            return Err(ModelError::OutsideSupport("parameter vector"));
        }
        let spec = &self.spec;
        let unit = |v: f64, pr: &Prior| {
            let (lo, hi) = pr.bounds();
            to_unit(v, lo, hi)
        };
        let (ls, hs) = spec.s1.bounds();
        let (li, hi) = spec.i1.bounds();
        let upper = (n * hs).min(n - p.i1);
        let mut x = vec![
            unit(p.ifr, &spec.ifr),
            unit(p.sigma, &spec.sigma),
            unit(1.0 / p.gamma, &spec.infectious_period),
            logit((p.s1 - n * ls) / (upper - n * ls)),
            to_unit(p.i1 / n, li, hi),
            unit(p.phi, &spec.phi),
            unit(p.eta, &spec.eta),
        ];
        let latent: Vec<f64> = p.beta.iter().map(|&b| inverse_softplus(b)).collect();
        x.push(unit(latent[0], &spec.beta1));
        x.extend(latent.windows(2).map(|w| (w[1] - w[0]) / p.sigma));
        Ok(x)
    }

    /// Log-determinant of the Jacobian of [`SirModel::constrain`] onto the
    /// scalars and the latent contact levels.
    pub fn log_jacobian(&self, x: &[f64]) -> Result<f64, ModelError> {
        self.check_dim(x.len())?;
        Ok(self.forward_transform(x).log_jac)
    }

    fn forward_transform(&self, x: &[f64]) -> Transformed {
        let spec = &self.spec;
        let n = self.population();
        let t = self.days();
        let b = |k: usize, pr: &Prior| {
            let (lo, hi) = pr.bounds();
            bounded(x[k], lo, hi)
        };
        let ifr = b(0, &spec.ifr);
        let sigma = b(1, &spec.sigma);
        let period = b(2, &spec.infectious_period);
        let phi = b(5, &spec.phi);
        let eta = b(6, &spec.eta);
        let b1 = b(7, &spec.beta1);

        let (li, hi) = spec.i1.bounds();
        let i_unit = bounded(x[4], li, hi);
        let i1 = n * i_unit.value;
        let (ls, hs) = spec.s1.bounds();
        let knee_bound = n - i1 < n * hs;
        let upper = if knee_bound { n - i1 } else { n * hs };
        let span = upper - n * ls;
        let ss = sigmoid(x[3]);
        let s1 = n * ls + span * ss;
        // Same as n - s1 - i1, written so that both terms are non-negative.
        let r1 = span * (1.0 - ss) + (n - i1 - upper);

        let mut cum = vec![0.0; t];
        let mut latent = vec![0.0; t];
        let mut beta = vec![0.0; t];
        let mut acc = 0.0;
        for k in 0..t {
            if k > 0 {
                acc += x[N_SCALARS + k];
            }
            cum[k] = acc;
            latent[k] = b1.value + sigma.value * acc;
            beta[k] = softplus(latent[k]);
        }

        let log_jac = ifr.log_jac
            + sigma.log_jac
            + period.log_jac
            + phi.log_jac
            + eta.log_jac
            + b1.log_jac
            + (n.ln() + i_unit.log_jac)
            + (span.ln() + log_sigmoid(x[3]) + log_sigmoid(-x[3]))
            + (t.saturating_sub(1)) as f64 * sigma.value.ln();

        Transformed {
            params: ParameterVector {
                ifr: ifr.value,
                beta,
                sigma: sigma.value,
                gamma: 1.0 / period.value,
                s1,
                i1,
                phi: phi.value,
                eta: eta.value,
            },
            r1,
            latent,
            cum,
            log_jac,
            ifr,
            sigma,
            period,
            phi,
            eta,
            b1,
            i_unit,
            knee_bound,
            span,
            s_sig: ss,
        }
    }

    /// Log-posterior split into prior, Jacobian and likelihood parts.
    pub fn components(&self, x: &[f64]) -> Result<Components, ModelError> {
        self.check_dim(x.len())?;
        let mut grad = vec![0.0; x.len()];
        Ok(self.evaluate(x, &mut grad, false))
    }

    /// Log-posterior and its gradient; `-inf` with a zero gradient when the
    /// parameters imply an impossible observation or a negative compartment.
    pub fn log_posterior(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        assert_eq!(x.len(), self.dim(), "unconstrained vector has the wrong length");
        assert_eq!(grad.len(), self.dim(), "gradient buffer has the wrong length");
        let c = self.evaluate(x, grad, true);
        let total = c.total();
        if !total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return f64::NEG_INFINITY;
        }
        total
    }

    fn evaluate(&self, x: &[f64], grad: &mut [f64], want_grad: bool) -> Components {
        let t = self.days();
        let n = self.population();
        let spec = &self.spec;
        let tr = self.forward_transform(x);
        let p = &tr.params;
        grad.iter_mut().for_each(|g| *g = 0.0);

        // Priors in natural units; the walk itself is standard normal in z.
        let z_ss: f64 = x[N_SCALARS + 1..].iter().map(|z| z * z).sum();
        let prior = spec.ifr.log_density(p.ifr)
            + spec.sigma.log_density(p.sigma)
            + spec.infectious_period.log_density(tr.period.value)
            + spec.phi.log_density(p.phi)
            + spec.eta.log_density(p.eta)
            + spec.beta1.log_density(tr.b1.value)
            - self.initial_log_area
            - (t - 1) as f64 * 0.5 * LN_2PI
            - 0.5 * z_ss
            - (t - 1) as f64 * p.sigma.ln();
        // The last term cancels the sigma part of the Jacobian: in z the walk
        // density has no sigma dependence.
        let jacobian = tr.log_jac;
        let mut comp = Components {
            prior,
            jacobian,
            ..Components::default()
        };
        if !comp.total().is_finite() {
            return comp;
        }

        // Adjoints with respect to constrained quantities.
        let mut g_ifr = 0.0;
        let mut g_phi = 0.0;
        let mut g_eta = 0.0;
        let mut g_beta = vec![0.0; t];
        let mut g_gamma = 0.0;
        let mut g_s1 = 0.0;
        let mut g_i1 = 0.0;

        if self.data.has_observations() {
            let fwd = match self.simulate(p, tr.r1) {
                Some(f) => f,
                None => {
                    comp.deaths = f64::NEG_INFINITY;
                    return comp;
                }
            };
            let mut a_s = vec![0.0; t + 1];
            let mut a_i = vec![0.0; t + 1];
            let mut a_r = vec![0.0; t + 1];
            let mut g_nu = vec![0.0; t];

            if !self.data.deaths.is_empty() {
                comp.deaths = self.deaths_term(&fwd.nu, p.ifr, &mut g_nu, &mut g_ifr);
                if !comp.deaths.is_finite() {
                    return comp;
                }
            }
            for obs in &self.data.surveys {
                let ll = survey_term(&fwd, obs, n, &mut a_i, &mut a_r);
                comp.surveys += ll;
                if !ll.is_finite() {
                    return comp;
                }
            }
            if !self.data.periods.is_empty() {
                comp.testing = self.testing_term(
                    &fwd, p.phi, p.eta, &mut a_i, &mut a_r, &mut g_phi, &mut g_eta,
                );
                if !comp.testing.is_finite() {
                    return comp;
                }
            }

            if want_grad {
                for k in (0..t).rev() {
                    let (s, i) = (fwd.s[k], fwd.i[k]);
                    let beta = p.beta[k];
                    let a_inf = -a_s[k + 1] + a_i[k + 1] + g_nu[k];
                    let a_rec = -a_i[k + 1] + a_r[k + 1];
                    a_s[k] += a_s[k + 1] + a_inf * beta * i / n;
                    a_i[k] += a_i[k + 1] + a_inf * beta * s / n + a_rec * p.gamma;
                    a_r[k] += a_r[k + 1];
                    g_beta[k] = a_inf * i * s / n;
                    g_gamma += a_rec * i;
                }
                g_s1 = a_s[0] - a_r[0];
                g_i1 = a_i[0] - a_r[0];
            }
        }

        if want_grad {
            self.chain_to_unconstrained(x, &tr, grad, g_ifr, g_phi, g_eta, &g_beta, g_gamma, g_s1, g_i1);
        }
        comp
    }

    #[allow(clippy::too_many_arguments)]
    fn chain_to_unconstrained(
        &self,
        x: &[f64],
        tr: &Transformed,
        grad: &mut [f64],
        g_ifr: f64,
        g_phi: f64,
        g_eta: f64,
        g_beta: &[f64],
        g_gamma: f64,
        g_s1: f64,
        g_i1: f64,
    ) {
        let spec = &self.spec;
        let t = self.days();
        let n = self.population();
        let scalar = |b: &Bounded, g: f64, pr: &Prior| {
            (g + pr.dlog_kernel(b.value)) * b.slope + b.dlog_jac
        };

        // Latent walk.
        let mut g_latent = vec![0.0; t];
        for k in 0..t {
            g_latent[k] = g_beta[k] * sigmoid(SOFTPLUS_SHARPNESS * tr.latent[k]);
        }
        let g_b1: f64 = g_latent.iter().sum();
        let g_sigma: f64 = g_latent.iter().zip(&tr.cum).map(|(g, c)| g * c).sum();
        let mut suffix = 0.0;
        for k in (1..t).rev() {
            suffix += g_latent[k];
            grad[N_SCALARS + k] = tr.sigma.value * suffix - x[N_SCALARS + k];
        }

        grad[0] = scalar(&tr.ifr, g_ifr, &spec.ifr);
        // The sigma Jacobian term (T-1) ln sigma is cancelled in the prior, so
        // only the sigmoid part of the Jacobian remains.
        grad[1] = scalar(&tr.sigma, g_sigma, &spec.sigma);
        let g_period = -g_gamma / (tr.period.value * tr.period.value);
        grad[2] = scalar(&tr.period, g_period, &spec.infectious_period);
        grad[5] = scalar(&tr.phi, g_phi, &spec.phi);
        grad[6] = scalar(&tr.eta, g_eta, &spec.eta);
        grad[7] = scalar(&tr.b1, g_b1, &spec.beta1);

        let ss = tr.s_sig;
        grad[3] = g_s1 * tr.span * ss * (1.0 - ss) + (1.0 - 2.0 * ss);
        let mut g_i1_total = g_i1;
        if tr.knee_bound {
            g_i1_total += -g_s1 * ss - 1.0 / tr.span;
        }
        grad[4] = g_i1_total * n * tr.i_unit.slope + tr.i_unit.dlog_jac;
    }

    fn simulate(&self, p: &ParameterVector, r1: f64) -> Option<Forward> {
        let t = self.days();
        let n = self.population();
        let mut s = Vec::with_capacity(t + 1);
        let mut i = Vec::with_capacity(t + 1);
        let mut r = Vec::with_capacity(t + 1);
        let mut nu = Vec::with_capacity(t);
        let (mut cs, mut ci, mut cr) = (p.s1, p.i1, r1);
        if !(cs >= 0.0 && ci >= 0.0 && cr >= 0.0) {
            return None;
        }
        s.push(cs);
        i.push(ci);
        r.push(cr);
        for k in 0..t {
            let inf = p.beta[k] * ci * cs / n;
            let rec = p.gamma * ci;
            cs -= inf;
            ci += inf - rec;
            cr += rec;
            if !(cs >= 0.0 && ci >= 0.0) {
                return None;
            }
            s.push(cs);
            i.push(ci);
            r.push(cr);
            nu.push(inf);
        }
        Some(Forward { s, i, r, nu })
    }

    fn deaths_term(&self, nu: &[f64], ifr: f64, g_nu: &mut [f64], g_ifr: &mut f64) -> f64 {
        let pmf = &self.delay.pmf;
        let t = nu.len();
        let mut total = 0.0;
        let mut g_mu = vec![0.0; t];
        for d in 0..t {
            let lags = pmf.len().min(d + 1);
            let conv: f64 = (0..lags).map(|j| pmf[j] * nu[d - j]).sum();
            let mu = ifr * conv;
            let obs = self.data.deaths[d];
            if obs == 0 {
                total -= mu;
                g_mu[d] = -1.0;
            } else if mu > 0.0 {
                let o = obs as f64;
                total += o * mu.ln() - mu - self.ln_factorials[d];
                g_mu[d] = o / mu - 1.0;
            } else {
                return f64::NEG_INFINITY;
            }
            *g_ifr += g_mu[d] * conv;
        }
        for k in 0..t {
            let lags = pmf.len().min(t - k);
            let acc: f64 = (0..lags).map(|j| pmf[j] * g_mu[k + j]).sum();
            g_nu[k] = ifr * acc;
        }
        total
    }

    #[allow(clippy::too_many_arguments)]
    fn testing_term(
        &self,
        fwd: &Forward,
        phi: f64,
        eta: f64,
        a_i: &mut [f64],
        a_r: &mut [f64],
        g_phi: &mut f64,
        g_eta: &mut f64,
    ) -> f64 {
        let n = self.population();
        let mut total = 0.0;
        for period in &self.data.periods {
            if period.tests == 0 {
                return f64::NEG_INFINITY;
            }
            let e = period.end_day + 1;
            let b = period.start_day;
            let w_end = (period.cum_tests_end as f64 / n).sqrt();
            let w_prev = (period.cum_tests_before() as f64 / n).sqrt();
            let x_end = fwd.i[e] + fwd.r[e];
            let x_prev = fwd.i[b] + fwd.r[b];
            let core = w_end * x_end - w_prev * x_prev;
            let mean = phi * core;
            let var = eta * eta * period.tests as f64 / n;
            let resid = period.cases as f64 - mean;
            total += -0.5 * (LN_2PI + var.ln()) - resid * resid / (2.0 * var);
            let g_mean = resid / var;
            *g_phi += g_mean * core;
            *g_eta += -1.0 / eta + resid * resid / (var * eta);
            a_i[e] += g_mean * phi * w_end;
            a_r[e] += g_mean * phi * w_end;
            a_i[b] -= g_mean * phi * w_prev;
            a_r[b] -= g_mean * phi * w_prev;
        }
        total
    }

    /// Draws a starting point: scalars and the first latent level from their
    /// priors, walk increments standard normal.
    pub fn draw_initial(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        use rand::Rng;
        let mut x = Vec::with_capacity(self.dim());
        let spec = &self.spec;
        for pr in [
            &spec.ifr,
            &spec.sigma,
            &spec.infectious_period,
            &spec.s1,
            &spec.i1,
            &spec.phi,
            &spec.eta,
            &spec.beta1,
        ] {
            let (lo, hi) = pr.bounds();
            // Draw in natural units by rejection against the uniform envelope.
            let v = loop {
                let v = lo + (hi - lo) * rng.random_range(0.02..0.98);
                let accept = (pr.log_kernel(v) - max_kernel(pr)).exp();
                if rng.random::<f64>() < accept {
                    break v;
                }
            };
            x.push(to_unit(v, lo, hi));
        }
        for _ in 1..self.days() {
            let z: f64 = rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut *rng);
            x.push(z);
        }
        x
    }
}

fn max_kernel(p: &Prior) -> f64 {
    match *p {
        Prior::Uniform { .. } => 0.0,
        Prior::TruncatedNormal { mean, lo, hi, .. } | Prior::Empirical { mean, lo, hi, .. } => {
            p.log_kernel(mean.clamp(lo, hi))
        }
    }
}

struct Transformed {
    params: ParameterVector,
    r1: f64,
    latent: Vec<f64>,
    cum: Vec<f64>,
    log_jac: f64,
    ifr: Bounded,
    sigma: Bounded,
    period: Bounded,
    phi: Bounded,
    eta: Bounded,
    b1: Bounded,
    i_unit: Bounded,
    knee_bound: bool,
    span: f64,
    s_sig: f64,
}

struct Forward {
    s: Vec<f64>,
    i: Vec<f64>,
    r: Vec<f64>,
    nu: Vec<f64>,
}

fn survey_term(fwd: &Forward, obs: &SurveyObservation, n: f64, a_i: &mut [f64], a_r: &mut [f64]) -> f64 {
    let len = obs.window_len() as f64;
    let series = match obs.kind {
        SurveyKind::Viral => &fwd.i,
        SurveyKind::Sero => &fwd.r,
    };
    let sum: f64 = (obs.window_start..=obs.window_end).map(|d| series[d + 1]).sum();
    let theta = sum / (n * len);
    if !(theta > 0.0 && theta < 1.0) {
        return f64::NEG_INFINITY;
    }
    let ns = obs.sample_size as f64;
    let var = theta * (1.0 - theta) / ns;
    let resid = obs.estimate - theta;
    let ll = -0.5 * (LN_2PI + var.ln()) - resid * resid / (2.0 * var);
    let dvar = (1.0 - 2.0 * theta) / ns;
    let g_theta = -0.5 * dvar / var + resid / var + resid * resid * dvar / (2.0 * var * var);
    let target = match obs.kind {
        SurveyKind::Viral => a_i,
        SurveyKind::Sero => a_r,
    };
    for d in obs.window_start..=obs.window_end {
        target[d + 1] += g_theta / (n * len);
    }
    ll
}

impl LogDensity for SirModel {
    fn dim(&self) -> usize {
        SirModel::dim(self)
    }

    fn log_density_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        self.log_posterior(x, grad)
    }

    fn initial_position(&self, rng: &mut dyn rand::RngCore) -> Vec<f64> {
        self.draw_initial(rng)
    }

    fn param_names(&self) -> Vec<String> {
        ParameterVector::names(self.days())
    }

    fn constrain(&self, x: &[f64]) -> Vec<f64> {
        self.forward_transform(x).params.to_flat()
    }
}

/// Minimum number of draws accepted by [`chain_posterior_to_prior`].
pub const MIN_CHAIN_DRAWS: usize = 1000;
/// Floor on the standard deviation of a chained prior.
pub const MIN_CHAIN_SD: f64 = 1e-6;

/// Moment-matches the posterior draws of `param` to a normal truncated to
/// `support`, for use as the next region's prior.
///
/// `"gamma"` is chained on the infectious period `1 / gamma`, matching where
/// its prior lives.
pub fn chain_posterior_to_prior(
    draws: &PosteriorDraws,
    param: &str,
    support: (f64, f64),
) -> Result<Prior, ModelError> {
    let col = draws
        .column_index(param)
        .ok_or_else(|| ModelError::UnknownParameter(param.to_string()))?;
    let n = draws.n_draws();
    if n < MIN_CHAIN_DRAWS {
        return Err(ModelError::TooFewDraws {
            have: n,
            need: MIN_CHAIN_DRAWS,
        });
    }
    let rhat = draws.rhat.get(col).copied().unwrap_or(f64::NAN);
    let values: Vec<f64> = draws
        .column(col)
        .into_iter()
        .map(|v| if param == "gamma" { 1.0 / v } else { v })
        .collect();
    let constant = values.iter().all(|&v| v == values[0]);
    // A constant column has an undefined R-hat; it is trivially converged.
    if !(rhat < 1.05 || (rhat.is_nan() && constant)) {
        return Err(ModelError::NotConverged {
            param: param.to_string(),
            rhat,
        });
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let sd = var.sqrt().max(MIN_CHAIN_SD);
    let (lo, hi) = support;
    let prior = Prior::Empirical { mean, sd, lo, hi };
    prior.validate(param)?;
    Ok(prior)
}

impl Prior {
    /// One exact draw; truncated normals by inverse CDF.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Prior::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Prior::TruncatedNormal { mean, sd, lo, hi } | Prior::Empirical { mean, sd, lo, hi } => {
                let std = Normal::standard();
                let a = std.cdf((lo - mean) / sd);
                let b = std.cdf((hi - mean) / sd);
                let u = a + (b - a) * rng.random::<f64>();
                (mean + sd * std.inverse_cdf(u)).clamp(lo, hi)
            }
        }
    }
}

/// Draws a full parameter vector from the prior, including the random walk
/// of the latent contact level.
pub fn sample_prior<R: rand::Rng + ?Sized>(spec: &PriorSpec, days: usize, n: f64, rng: &mut R) -> ParameterVector {
    let ifr = spec.ifr.sample(rng);
    let sigma = spec.sigma.sample(rng);
    let gamma = 1.0 / spec.infectious_period.sample(rng);
    let (s_frac, i_frac) = loop {
        let s = spec.s1.sample(rng);
        let i = spec.i1.sample(rng);
        if s + i <= 1.0 {
            break (s, i);
        }
    };
    let phi = spec.phi.sample(rng);
    let eta = spec.eta.sample(rng);
    let mut b = spec.beta1.sample(rng);
    let mut beta = Vec::with_capacity(days);
    for t in 0..days {
        if t > 0 {
            let z: f64 = rng.sample(rand_distr::StandardNormal);
            b += sigma * z;
        }
        beta.push(softplus(b));
    }
    ParameterVector {
        ifr,
        beta,
        sigma,
        gamma,
        s1: s_frac * n,
        i1: i_frac * n,
        phi,
        eta,
    }
}

impl PriorSpec {
    /// Replaces the descriptor of a named parameter.
    pub fn set(&mut self, param: &str, prior: Prior) -> Result<(), ModelError> {
        let slot = match param {
            "ifr" => &mut self.ifr,
            "beta1" => &mut self.beta1,
            "sigma" => &mut self.sigma,
            "gamma" | "infectious_period" | "gamma_inv" => &mut self.infectious_period,
            "s1" => &mut self.s1,
            "i1" => &mut self.i1,
            "phi" => &mut self.phi,
            "eta" => &mut self.eta,
            other => return Err(ModelError::UnknownParameter(other.to_string())),
        };
        *slot = prior;
        Ok(())
    }

    pub fn get(&self, param: &str) -> Result<Prior, ModelError> {
        Ok(match param {
            "ifr" => self.ifr,
            "beta1" => self.beta1,
            "sigma" => self.sigma,
            "gamma" | "infectious_period" | "gamma_inv" => self.infectious_period,
            "s1" => self.s1,
            "i1" => self.i1,
            "phi" => self.phi,
            "eta" => self.eta,
            other => return Err(ModelError::UnknownParameter(other.to_string())),
        })
    }
}
