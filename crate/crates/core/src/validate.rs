//! Oracle checks on the model and sampler, shared by the `validate`
//! command and the acceptance suite.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{effective_beta, simulate, ContactPath, SirState};
use crate::model::{Prior, PriorSpec, SirModel, N_SCALARS};
use crate::observation::{build_delay_pmf, expected_deaths, DelayDistribution};
use crate::sampler::{sample, LogDensity, SamplerConfig};
use crate::synth::{generate, sbc_run, GroundTruth, SbcOptions, SurveyWindow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub outcome: Outcome,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: String) -> Self {
        Check {
            name: name.to_string(),
            outcome: if passed { Outcome::Pass } else { Outcome::Fail },
            detail,
        }
    }

    pub fn skip(name: &str, detail: impl Into<String>) -> Self {
        Check {
            name: name.to_string(),
            outcome: Outcome::Skip,
            detail: detail.into(),
        }
    }

    pub fn passed(&self) -> bool {
        self.outcome != Outcome::Fail
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.outcome {
            Outcome::Pass => "PASS",
            Outcome::Fail => "FAIL",
            Outcome::Skip => "SKIP",
        };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }
}

fn desk_cfg(seed: u64) -> SamplerConfig {
    SamplerConfig {
        chains: 4,
        total_steps: 2000,
        warmup_steps: 1000,
        seed,
        ..SamplerConfig::default()
    }
}

/// The desk truth cut to its first `days` days, surveys moved inside.
pub fn short_truth(days: usize) -> GroundTruth {
    let mut t = GroundTruth::desk();
    t.params.beta.truncate(days);
    t.tests.truncate(days);
    let mid = days / 2;
    t.surveys = vec![
        SurveyWindow {
            kind: crate::observation::SurveyKind::Viral,
            start: mid,
            end: (mid + 2).min(days - 1),
            sample_size: 3000,
        },
        SurveyWindow {
            kind: crate::observation::SurveyKind::Sero,
            start: mid,
            end: (mid + 2).min(days - 1),
            sample_size: 3000,
        },
    ];
    t
}

/// Random interior point: scalars in (-1.5, 1.5), walk increments half that.
pub fn random_interior(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim)
        .map(|k| {
            let v = rng.random_range(-1.5..1.5);
            if k > N_SCALARS {
                0.5 * v
            } else {
                v
            }
        })
        .collect()
}

/// Worst relative error `|g - fd| / max(|fd|, 1)` between the analytic
/// gradient and five-point central differences with step `h` over `points`.
///
/// Log-densities far from the data reach `1e6` in magnitude, so roundoff
/// grows like `eps * |f| / h` and calls for a larger step than usual; the
/// fourth-order stencil keeps the truncation error small at that step.
pub fn max_gradient_error<T: LogDensity + ?Sized>(target: &T, points: &[Vec<f64>], h: f64) -> f64 {
    let dim = target.dim();
    let mut g = vec![0.0; dim];
    let mut scratch = vec![0.0; dim];
    let mut worst = 0.0f64;
    for x in points {
        target.log_density_and_gradient(x, &mut g);
        let mut xp = x.clone();
        for k in 0..dim {
            let mut at = |step: f64| {
                xp[k] = x[k] + step;
                let f = target.log_density_and_gradient(&xp, &mut scratch);
                xp[k] = x[k];
                f
            };
            let fd = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
            let err = (g[k] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(if err.is_nan() { f64::INFINITY } else { err });
        }
    }
    worst
}

/// Seeded interior points where the target is finite.
pub fn finite_points<T: LogDensity + ?Sized>(target: &T, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = vec![0.0; target.dim()];
    let mut out = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count && tries < 100 * count {
        tries += 1;
        let x = random_interior(&mut rng, target.dim());
        if target.log_density_and_gradient(&x, &mut g).is_finite() {
            out.push(x);
        }
    }
    out
}

/// Seeded points around `base`: scalars within 0.5, walk increments within
/// 0.15. Far from the data the log-density reaches `1e7` and its own
/// roundoff swamps any finite difference.
pub fn points_near<T: LogDensity + ?Sized>(target: &T, base: &[f64], count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = vec![0.0; target.dim()];
    let mut out = Vec::with_capacity(count);
    let mut tries = 0;
    while out.len() < count && tries < 100 * count {
        tries += 1;
        let x: Vec<f64> = base
            .iter()
            .enumerate()
            .map(|(k, b)| b + if k > N_SCALARS { 0.15 } else { 0.5 } * rng.random_range(-1.0..1.0))
            .collect();
        if target.log_density_and_gradient(&x, &mut g).is_finite() {
            out.push(x);
        }
    }
    out
}

fn synth_model(days: usize, seed: u64) -> SirModel {
    let t = short_truth(days);
    let ds = generate(&t, seed).expect("desk truth is valid");
    SirModel::new(ds.model_data(), gradient_spec(), t.delay).expect("valid model")
}

/// Default priors with the initial state narrowed so random interior points
/// describe plausible epidemics. The desk truth lies inside.
fn gradient_spec() -> PriorSpec {
    PriorSpec {
        s1: Prior::Uniform { lo: 0.95, hi: 1.0 },
        i1: Prior::Uniform { lo: 1e-5, hi: 1e-3 },
        ..PriorSpec::default()
    }
}

pub fn gradient_check(seed: u64) -> Check {
    gradient_check_with(seed, |m| m)
}

/// [`gradient_check`] on whatever `wrap` makes of each synthetic model.
pub fn gradient_check_with<T: LogDensity>(seed: u64, wrap: impl Fn(SirModel) -> T) -> Check {
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for days in [10usize, 60, 120] {
        let model = synth_model(days, seed);
        let base = model.unconstrain(&short_truth(days).params).expect("truth inside the support");
        let pts = points_near(&model, &base, 20, seed + days as u64);
        if pts.len() < 20 {
            return Check::new("gradient", false, format!("only {} finite points at T={days}", pts.len()));
        }
        let e = max_gradient_error(&wrap(model), &pts, 1e-3);
        detail.push(format!("T={days}: {e:.2e}"));
        worst = worst.max(e);
    }
    Check::new(
        "gradient vs central differences (20 points near the truth, T in 10/60/120)",
        worst < 1e-5,
        format!("max relative error {} (tol 1e-5)", detail.join(", ")),
    )
}

fn random_epidemic(rng: &mut ChaCha8Rng, days: usize) -> (SirState, ContactPath, f64, f64) {
    let n = 10f64.powf(rng.random_range(3.0..8.0));
    let i = n * rng.random_range(1e-5..0.05);
    let r = n * rng.random_range(0.0..0.2);
    let init = SirState::new(n - i - r, i, r);
    let beta = (0..days).map(|_| rng.random_range(0.0..0.95)).collect();
    (init, ContactPath::new(beta, 0.0), rng.random_range(0.05..0.5), n)
}

pub fn conservation_check(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let days = rng.random_range(1..200);
        let (init, path, gamma, n) = random_epidemic(&mut rng, days);
        let traj = simulate(init, &path, gamma, n, days).expect("valid epidemic");
        for st in &traj.states {
            worst = worst.max((st.total() - n).abs() / n);
        }
    }
    Check::new("SIR conservation", worst <= 1e-9, format!("max |S+I+R-N|/N {worst:.2e} (tol 1e-9)"))
}

pub fn effective_beta_check(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let days = rng.random_range(1..120);
        let (init, path, gamma, n) = random_epidemic(&mut rng, days);
        let traj = simulate(init, &path, gamma, n, days).expect("valid epidemic");
        let eff = effective_beta(&traj).expect("at least one day");
        // Recovering beta from S loses about eps * N / I, so days with
        // almost no one infectious say nothing about the inversion.
        for ((b, e), st) in path.beta.iter().zip(eff).zip(&traj.states) {
            if let (Some(e), true) = (e, st.i >= 1e-6 * n) {
                worst = worst.max((b - e).abs() / b.abs().max(1.0));
            }
        }
    }
    Check::new(
        "effective contact rate round trip",
        worst <= 1e-9,
        format!("max error {worst:.2e} where I/N >= 1e-6 (tol 1e-9)"),
    )
}

pub fn convolution_check(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let days = rng.random_range(1..=60);
        let m = rng.random_range(0..50);
        let mut pmf: Vec<f64> = (0..=m).map(|_| rng.random::<f64>()).collect();
        let s: f64 = pmf.iter().sum();
        pmf.iter_mut().for_each(|p| *p /= s);
        let delay = DelayDistribution { pmf };
        let nu: Vec<f64> = (0..days).map(|_| rng.random_range(0.0..1e4)).collect();
        let ifr = rng.random::<f64>();
        let fast = expected_deaths(&nu, ifr, &delay).expect("valid inputs");
        for (d, f) in fast.iter().enumerate() {
            let mut brute = 0.0;
            for (s, v) in nu.iter().enumerate() {
                for (k, p) in delay.pmf.iter().enumerate() {
                    if s + k == d {
                        brute += ifr * v * p;
                    }
                }
            }
            worst = worst.max((f - brute).abs() / brute.abs().max(1.0));
        }
    }
    Check::new("delay convolution vs brute force", worst <= 1e-12, format!("max error {worst:.2e} (tol 1e-12)"))
}

pub fn delay_truncation_check() -> Check {
    match build_delay_pmf(21.0, 1.1, 0.99) {
        Ok(d) => Check::new(
            "delay truncation at the 0.99 quantile",
            d.max_delay() == 40,
            format!("m = {} (expected 40)", d.max_delay()),
        ),
        Err(e) => Check::new("delay truncation at the 0.99 quantile", false, e.to_string()),
    }
}

pub fn transform_check(seed: u64) -> Check {
    let model = synth_model(60, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let x = random_interior(&mut rng, model.dim());
        let p = match model.constrain(&x) {
            Ok(p) => p,
            Err(e) => return Check::new("transform round trip", false, e.to_string()),
        };
        let back = match model.unconstrain(&p) {
            Ok(b) => b,
            Err(e) => return Check::new("transform round trip", false, e.to_string()),
        };
        for (a, b) in x.iter().zip(&back) {
            worst = worst.max((a - b).abs() / a.abs().max(1.0));
        }
        let again = model.constrain(&back).expect("round trip stays valid");
        for (a, b) in p.to_flat().iter().zip(again.to_flat()) {
            worst = worst.max((a - b).abs() / a.abs().max(1.0));
        }
    }
    Check::new("transform round trip", worst <= 1e-10, format!("max error {worst:.2e} (tol 1e-10)"))
}

pub fn property_checks(seed: u64) -> Vec<Check> {
    vec![
        conservation_check(seed),
        effective_beta_check(seed),
        convolution_check(seed),
        delay_truncation_check(),
        gradient_check(seed),
        transform_check(seed),
    ]
}

/// Independent standard normal.
pub struct StdNormal(pub usize);

impl LogDensity for StdNormal {
    fn dim(&self) -> usize {
        self.0
    }
    fn log_density_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        for (g, v) in grad.iter_mut().zip(x) {
            *g = -v;
        }
        -0.5 * x.iter().map(|v| v * v).sum::<f64>()
    }
}

/// Zero-mean bivariate normal with unit variances and correlation `rho`.
pub struct Correlated(pub f64);

impl LogDensity for Correlated {
    fn dim(&self) -> usize {
        2
    }
    fn log_density_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let r = self.0;
        let c = 1.0 / (1.0 - r * r);
        grad[0] = -c * (x[0] - r * x[1]);
        grad[1] = -c * (x[1] - r * x[0]);
        -0.5 * c * (x[0] * x[0] - 2.0 * r * x[0] * x[1] + x[1] * x[1])
    }
}

/// `exp(-(x^2 - 4)^2 / 8)`: modes at +-2 behind a barrier of 2 nats.
pub struct DoubleWell;

impl DoubleWell {
    fn potential(x: f64) -> f64 {
        (x * x - 4.0).powi(2) / 8.0
    }

    /// Exact probabilities of `bins` equal bins on `[lo, hi]`.
    pub fn bin_probabilities(lo: f64, hi: f64, bins: usize) -> Vec<f64> {
        let sub = 200;
        let h = (hi - lo) / (bins * sub) as f64;
        let mut probs: Vec<f64> = (0..bins)
            .map(|b| {
                (0..sub)
                    .map(|k| {
                        let a = lo + (b * sub + k) as f64 * h;
                        // Simpson on each sub-interval.
                        h / 6.0
                            * ((-Self::potential(a)).exp()
                                + 4.0 * (-Self::potential(a + h / 2.0)).exp()
                                + (-Self::potential(a + h)).exp())
                    })
                    .sum()
            })
            .collect();
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        probs
    }
}

impl LogDensity for DoubleWell {
    fn dim(&self) -> usize {
        1
    }
    fn log_density_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let v = x[0];
        grad[0] = -v * (v * v - 4.0) / 2.0;
        -Self::potential(v)
    }
}

fn moments(col: &[f64]) -> (f64, f64) {
    let n = col.len() as f64;
    let m = col.iter().sum::<f64>() / n;
    let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

fn oracle_cfg(seed: u64, total: usize) -> SamplerConfig {
    SamplerConfig {
        chains: 4,
        total_steps: total,
        warmup_steps: 1000,
        target_accept: 0.8,
        max_tree_depth: 10,
        seed,
        ..SamplerConfig::default()
    }
}

pub fn standard_normal_check(seed: u64) -> Check {
    let name = "10-d standard normal moments";
    let draws = match sample(&StdNormal(10), &oracle_cfg(seed, 3000)) {
        Ok(d) => d,
        Err(e) => return Check::new(name, false, e.to_string()),
    };
    let worst = (0..10)
        .map(|j| {
            let (m, sd) = moments(&draws.column(j));
            m.abs().max((sd - 1.0).abs())
        })
        .fold(0.0f64, f64::max);
    Check::new(name, worst < 0.05, format!("max |mean|, |sd - 1| = {worst:.4} (tol 0.05)"))
}

pub fn correlated_check(seed: u64) -> Check {
    let name = "2-d normal with correlation 0.9";
    let draws = match sample(&Correlated(0.9), &oracle_cfg(seed, 3000)) {
        Ok(d) => d,
        Err(e) => return Check::new(name, false, e.to_string()),
    };
    let (a, b) = (draws.column(0), draws.column(1));
    let (ma, sa) = moments(&a);
    let (mb, sb) = moments(&b);
    let n = a.len() as f64;
    let cov = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0);
    let rho = cov / (sa * sb);
    Check::new(name, (rho - 0.9).abs() < 0.05, format!("sample correlation {rho:.4} (tol 0.05)"))
}

pub fn double_well_check(seed: u64) -> Check {
    let name = "double-well total variation";
    let draws = match sample(&DoubleWell, &oracle_cfg(seed, 21_000)) {
        Ok(d) => d,
        Err(e) => return Check::new(name, false, e.to_string()),
    };
    let (lo, hi, bins) = (-4.0, 4.0, 40);
    let exact = DoubleWell::bin_probabilities(lo, hi, bins);
    let col = draws.column(0);
    let mut hist = vec![0.0; bins];
    let mut outside = 0.0;
    for v in &col {
        if *v < lo || *v >= hi {
            outside += 1.0;
        } else {
            hist[((v - lo) / (hi - lo) * bins as f64) as usize] += 1.0;
        }
    }
    let n = col.len() as f64;
    let tv = 0.5 * (hist.iter().zip(&exact).map(|(h, p)| (h / n - p).abs()).sum::<f64>() + outside / n);
    Check::new(name, tv < 0.03, format!("TV {tv:.4} over {bins} bins (tol 0.03)"))
}

pub fn reproducibility_check(seed: u64) -> Check {
    let cfg = SamplerConfig {
        total_steps: 400,
        warmup_steps: 200,
        ..oracle_cfg(seed, 400)
    };
    let a = sample(&Correlated(0.5), &cfg);
    let b = sample(&Correlated(0.5), &cfg);
    let same = matches!((&a, &b), (Ok(x), Ok(y)) if x.draws.iter().zip(&y.draws).all(|(p, q)| p.to_bits() == q.to_bits()) && x == y);
    Check::new("same-seed bit reproducibility", same, "two runs with one seed".into())
}

pub fn sampler_checks(seed: u64) -> Vec<Check> {
    vec![
        standard_normal_check(seed),
        correlated_check(seed),
        double_well_check(seed),
        reproducibility_check(seed),
    ]
}

/// Fits the default synthetic fixture with default priors.
pub fn recovery_checks(cfg: &SamplerConfig, data_seed: u64) -> Vec<Check> {
    let truth = GroundTruth::desk();
    let ds = match generate(&truth, data_seed) {
        Ok(d) => d,
        Err(e) => return vec![Check::new("synthetic recovery", false, e.to_string())],
    };
    let model = SirModel::new(ds.model_data(), PriorSpec::default(), truth.delay.clone()).expect("valid model");
    let draws = match sample(&model, cfg) {
        Ok(d) => d,
        Err(e) => return vec![Check::new("synthetic recovery", false, e.to_string())],
    };
    let ifr = draws.column_by_name("ifr").expect("ifr column");
    let q = crate::analysis::quantiles(&ifr, &[0.025, 0.975]);
    let max_rhat = draws.rhat.iter().copied().filter(|r| !r.is_nan()).fold(f64::NAN, f64::max);
    let div = draws.divergence_rate();
    vec![
        Check::new(
            "true IFR inside the 95% interval",
            q[0] <= truth.params.ifr && truth.params.ifr <= q[1],
            format!("[{:.5}, {:.5}] vs {}", q[0], q[1], truth.params.ifr),
        ),
        Check::new("all R-hat below 1.05", max_rhat < 1.05, format!("max R-hat {max_rhat:.4}")),
        Check::new("divergence rate below 2%", div < 0.02, format!("{:.2}%", 100.0 * div)),
    ]
}

/// Calibration of IFR and gamma, coverage and the corrupted-generator control.
pub fn sbc_checks(prior: &PriorSpec, replications: usize, cfg: &SamplerConfig, opts: &SbcOptions) -> Vec<Check> {
    let report = match sbc_run(prior, replications, cfg, opts) {
        Ok(r) => r,
        Err(e) => return vec![Check::new("calibration run", false, e.to_string())],
    };
    let mut checks: Vec<Check> = report
        .p_values
        .iter()
        .map(|(name, p)| {
            Check::new(
                &format!("{name} rank uniformity"),
                *p > 0.01,
                format!(
                    "chi-square p = {p:.4} (reject at 0.01); {} of {} replications used",
                    report.included(),
                    report.replications.len()
                ),
            )
        })
        .collect();
    checks.push(Check::new(
        "IFR 95% interval coverage",
        (report.ifr_coverage - 0.95).abs() <= 0.07,
        format!("{:.1}% (95 +- 7)", 100.0 * report.ifr_coverage),
    ));
    let control = SbcOptions {
        ifr_factor: 2.0,
        ..opts.clone()
    };
    let name = "corrupted generator fails uniformity";
    checks.push(match sbc_run(prior, replications, cfg, &control) {
        Ok(r) => {
            let p = r.p_values.get("ifr").copied().unwrap_or(f64::NAN);
            Check::new(name, p <= 0.01, format!("IFR chi-square p = {p:.2e}"))
        }
        Err(e) => Check::new(name, false, e.to_string()),
    });
    checks
}

/// Sampler settings used for every desk-scale fit in validation.
pub fn desk_sampler(seed: u64) -> SamplerConfig {
    desk_cfg(seed)
}
