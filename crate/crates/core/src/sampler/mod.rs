//! Dynamic Hamiltonian Monte Carlo with multinomial trajectory sampling,
//! dual-averaging step size adaptation and a diagonal metric estimated in
//! windows during warmup.

mod adapt;
mod metric;
pub mod diagnostics;
mod nuts;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use adapt::{DualAveraging, WindowSchedule};
pub use metric::{Metric, MetricKind};
pub use diagnostics::{ess_bulk, split_rhat, DiagnosticsError};
pub use nuts::{hamiltonian, leapfrog, PhasePoint, Transition};

/// Maximum attempts at finding a finite starting point.
pub const MAX_INIT_ATTEMPTS: usize = 100;
/// Energy error beyond which a trajectory is declared divergent.
pub const MAX_DELTA_H: f64 = 1000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("invalid sampler configuration: {0}")]
    InvalidConfig(String),
    #[error("chain {chain}: no finite starting point after {attempts} attempts")]
    InitializationFailed { chain: usize, attempts: usize },
    #[error("chain {chain}: step size search failed: {reason}")]
    StepSize { chain: usize, reason: String },
}

/// A differentiable log-density in unconstrained coordinates.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the log-density; `-inf`
    /// marks points outside the support.
    fn log_density_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64;

    /// Starting point for a chain; uniform on `(-2, 2)` in every coordinate by default.
    fn initial_position(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        use rand::Rng;
        (0..self.dim()).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x[{i}]")).collect()
    }

    /// Maps an unconstrained point to the values reported in draws.
    fn constrain(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub chains: usize,
    /// Iterations per chain including warmup.
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub target_accept: f64,
    pub max_tree_depth: u32,
    pub seed: u64,
    pub metric: MetricKind,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            chains: 4,
            total_steps: 20_000,
            warmup_steps: 10_000,
            target_accept: 0.9,
            max_tree_depth: 10,
            seed: 1,
            metric: MetricKind::Diagonal,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), SamplerError> {
        let bad = |m: &str| Err(SamplerError::InvalidConfig(m.to_string()));
        if self.chains == 0 {
            return bad("chains must be at least 1");
        }
        if self.warmup_steps >= self.total_steps {
            return bad("warmup_steps must be below total_steps");
        }
        if !(self.target_accept > 0.5 && self.target_accept < 1.0) {
            return bad("target_accept must lie in (0.5, 1)");
        }
        if self.max_tree_depth == 0 {
            return bad("max_tree_depth must be at least 1");
        }
        Ok(())
    }

    pub fn draws_per_chain(&self) -> usize {
        self.total_steps - self.warmup_steps
    }
}

/// Post-warmup draws of all chains, in chain order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorDraws {
    pub param_names: Vec<String>,
    /// Row-major, one row per draw, constrained coordinates.
    pub draws: Vec<f64>,
    pub chain_id: Vec<usize>,
    pub divergent: Vec<bool>,
    pub tree_depth: Vec<u32>,
    /// Per-parameter split R-hat; `NaN` when undefined.
    pub rhat: Vec<f64>,
    /// Per-parameter bulk effective sample size; `NaN` when undefined.
    pub ess: Vec<f64>,
    pub step_size: Vec<f64>,
    pub inv_metric: Vec<Vec<f64>>,
    pub mean_accept: Vec<f64>,
}

impl PosteriorDraws {
    pub fn dim(&self) -> usize {
        self.param_names.len()
    }

    pub fn n_draws(&self) -> usize {
        self.chain_id.len()
    }

    pub fn chains(&self) -> usize {
        self.chain_id.iter().max().map_or(0, |c| c + 1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.draws[i * d..(i + 1) * d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.draws.chunks_exact(self.dim().max(1))
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.param_names.iter().position(|n| n == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn column_by_name(&self, name: &str) -> Option<Vec<f64>> {
        self.column_index(name).map(|j| self.column(j))
    }

    /// Draws of column `j` split by chain.
    pub fn chain_columns(&self, j: usize) -> Vec<Vec<f64>> {
        let mut out = vec![Vec::new(); self.chains()];
        for (row, &c) in self.rows().zip(&self.chain_id) {
            out[c].push(row[j]);
        }
        out
    }

    pub fn divergence_rate(&self) -> f64 {
        if self.divergent.is_empty() {
            return 0.0;
        }
        self.divergent.iter().filter(|&&d| d).count() as f64 / self.divergent.len() as f64
    }

    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().copied().filter(|r| !r.is_nan()).fold(f64::NAN, f64::max)
    }

    /// Recomputes R-hat and ESS from the stored draws.
    pub fn refresh_diagnostics(&mut self) {
        let (rhat, ess) = (0..self.dim())
            .map(|j| {
                let chains = self.chain_columns(j);
                let refs: Vec<&[f64]> = chains.iter().map(|c| c.as_slice()).collect();
                (
                    split_rhat(&refs).unwrap_or(f64::NAN),
                    ess_bulk(&refs).unwrap_or(f64::NAN),
                )
            })
            .unzip();
        self.rhat = rhat;
        self.ess = ess;
    }

    /// Keeps every `k`-th draw of each chain.
    pub fn thin(&self, k: usize) -> PosteriorDraws {
        let k = k.max(1);
        let mut out = PosteriorDraws {
            draws: Vec::new(),
            chain_id: Vec::new(),
            divergent: Vec::new(),
            tree_depth: Vec::new(),
            ..self.clone()
        };
        let mut seen = vec![0usize; self.chains()];
        for (i, row) in self.rows().enumerate() {
            let c = self.chain_id[i];
            if seen[c] % k == 0 {
                out.draws.extend_from_slice(row);
                out.chain_id.push(c);
                out.divergent.push(self.divergent[i]);
                out.tree_depth.push(self.tree_depth[i]);
            }
            seen[c] += 1;
        }
        out
    }
}

/// Per-parameter `(r_hat, ess)`; needs at least two chains of 100 draws.
pub fn diagnostics(draws: &PosteriorDraws) -> Result<Vec<(f64, f64)>, DiagnosticsError> {
    (0..draws.dim())
        .map(|j| {
            let chains = draws.chain_columns(j);
            let refs: Vec<&[f64]> = chains.iter().map(|c| c.as_slice()).collect();
            diagnostics::check_shape(&refs)?;
            Ok((split_rhat(&refs)?, ess_bulk(&refs)?))
        })
        .collect()
}

struct ChainOutput {
    draws: Vec<f64>,
    divergent: Vec<bool>,
    tree_depth: Vec<u32>,
    step_size: f64,
    inv_metric: Vec<f64>,
    mean_accept: f64,
}

/// Runs all chains (in parallel when a thread pool is available) and
/// assembles their post-warmup draws in chain order.
pub fn sample<T: LogDensity + ?Sized>(target: &T, cfg: &SamplerConfig) -> Result<PosteriorDraws, SamplerError> {
    cfg.validate()?;
    let outputs: Vec<Result<ChainOutput, SamplerError>> = (0..cfg.chains)
        .into_par_iter()
        .map(|chain| run_chain(target, cfg, chain))
        .collect();
    let mut result = PosteriorDraws {
        param_names: target.param_names(),
        draws: Vec::new(),
        chain_id: Vec::new(),
        divergent: Vec::new(),
        tree_depth: Vec::new(),
        rhat: Vec::new(),
        ess: Vec::new(),
        step_size: Vec::new(),
        inv_metric: Vec::new(),
        mean_accept: Vec::new(),
    };
    for (chain, out) in outputs.into_iter().enumerate() {
        let out = out?;
        result.draws.extend(out.draws);
        result
            .chain_id
            .extend(std::iter::repeat(chain).take(out.divergent.len()));
        result.divergent.extend(out.divergent);
        result.tree_depth.extend(out.tree_depth);
        result.step_size.push(out.step_size);
        result.inv_metric.push(out.inv_metric);
        result.mean_accept.push(out.mean_accept);
    }
    result.refresh_diagnostics();
    Ok(result)
}

fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

fn initialize<T: LogDensity + ?Sized>(
    target: &T,
    rng: &mut ChaCha8Rng,
    chain: usize,
) -> Result<PhasePoint, SamplerError> {
    let dim = target.dim();
    for _ in 0..MAX_INIT_ATTEMPTS {
        let q = target.initial_position(rng);
        let mut grad = vec![0.0; dim];
        let logp = target.log_density_and_gradient(&q, &mut grad);
        if logp.is_finite() && grad.iter().all(|g| g.is_finite()) {
            return Ok(PhasePoint {
                q,
                p: vec![0.0; dim],
                grad,
                logp,
            });
        }
    }
    Err(SamplerError::InitializationFailed {
        chain,
        attempts: MAX_INIT_ATTEMPTS,
    })
}

fn run_chain<T: LogDensity + ?Sized>(
    target: &T,
    cfg: &SamplerConfig,
    chain: usize,
) -> Result<ChainOutput, SamplerError> {
    let mut rng = chain_rng(cfg.seed, chain);
    let dim = target.dim();
    let mut z = initialize(target, &mut rng, chain)?;
    let mut metric = Metric::unit(dim);
    let step_err = |reason: String| SamplerError::StepSize { chain, reason };

    let mut eps = nuts::init_stepsize(target, &mut z, &metric, 1.0, &mut rng).map_err(step_err)?;
    let mut dual = DualAveraging::new(cfg.target_accept, eps);
    let mut windows = WindowSchedule::new(cfg.warmup_steps);
    let mut welford = metric::Welford::new(dim, cfg.metric);

    for _ in 0..cfg.warmup_steps {
        let tr = nuts::transition(target, &mut z, &metric, eps, cfg.max_tree_depth, &mut rng);
        eps = dual.learn(tr.accept_stat);
        if windows.in_slow_window() {
            welford.add(&z.q);
        }
        if windows.end_of_slow_window() {
            metric = welford.regularized();
            welford = metric::Welford::new(dim, cfg.metric);
            eps = nuts::init_stepsize(target, &mut z, &metric, eps, &mut rng).map_err(step_err)?;
            dual = DualAveraging::new(cfg.target_accept, eps);
        }
        windows.advance();
    }
    if cfg.warmup_steps > 0 {
        eps = dual.final_step_size();
    }

    let n = cfg.draws_per_chain();
    let mut out = ChainOutput {
        draws: Vec::with_capacity(n * dim),
        divergent: Vec::with_capacity(n),
        tree_depth: Vec::with_capacity(n),
        step_size: eps,
        inv_metric: metric.variances(),
        mean_accept: 0.0,
    };
    let mut accept = 0.0;
    for _ in 0..n {
        let tr = nuts::transition(target, &mut z, &metric, eps, cfg.max_tree_depth, &mut rng);
        accept += tr.accept_stat;
        out.draws.extend(target.constrain(&z.q));
        out.divergent.push(tr.divergent);
        out.tree_depth.push(tr.depth);
    }
    out.mean_accept = accept / n as f64;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct StdNormal(usize);

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

    /// Zero-mean normal with unit variances and correlation `rho` in two dimensions.
    struct Correlated(f64);

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

    struct Nowhere;

    impl LogDensity for Nowhere {
        fn dim(&self) -> usize {
            1
        }
        fn log_density_and_gradient(&self, _: &[f64], _: &mut [f64]) -> f64 {
            f64::NEG_INFINITY
        }
    }

    fn small_cfg(seed: u64) -> SamplerConfig {
        SamplerConfig {
            chains: 4,
            total_steps: 3000,
            warmup_steps: 1000,
            target_accept: 0.8,
            max_tree_depth: 10,
            seed,
            metric: MetricKind::Diagonal,
        }
    }

    #[test]
    fn standard_normal_moments() {
        let draws = sample(&StdNormal(10), &small_cfg(7)).unwrap();
        assert_eq!(draws.n_draws(), 8000);
        for j in 0..10 {
            let col = draws.column(j);
            let m = col.iter().sum::<f64>() / col.len() as f64;
            let sd = (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (col.len() - 1) as f64).sqrt();
            assert!(m.abs() < 0.05, "mean {m}");
            assert!((sd - 1.0).abs() < 0.05, "sd {sd}");
        }
        assert!(draws.rhat.iter().all(|r| *r < 1.01));
        assert_eq!(draws.divergence_rate(), 0.0);
    }

    #[test]
    fn correlated_normal() {
        let draws = sample(&Correlated(0.9), &small_cfg(3)).unwrap();
        let a = draws.column(0);
        let b = draws.column(1);
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(&b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n;
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / n;
        let rho = cov / (va * vb).sqrt();
        assert!((rho - 0.9).abs() < 0.05, "rho {rho}");
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let cfg = SamplerConfig {
            total_steps: 400,
            warmup_steps: 200,
            ..small_cfg(11)
        };
        let a = sample(&Correlated(0.5), &cfg).unwrap();
        let b = sample(&Correlated(0.5), &cfg).unwrap();
        assert_eq!(a, b);
        let c = sample(&Correlated(0.5), &SamplerConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.draws, c.draws);
    }

    #[test]
    fn chains_differ() {
        let cfg = SamplerConfig {
            total_steps: 300,
            warmup_steps: 100,
            ..small_cfg(2)
        };
        let d = sample(&StdNormal(2), &cfg).unwrap();
        let cols = d.chain_columns(0);
        assert_ne!(cols[0], cols[1]);
    }

    #[test]
    fn config_validation() {
        let ok = SamplerConfig::default();
        assert!(ok.validate().is_ok());
        for bad in [
            SamplerConfig { chains: 0, ..ok.clone() },
            SamplerConfig { warmup_steps: 20_000, ..ok.clone() },
            SamplerConfig { target_accept: 0.5, ..ok.clone() },
            SamplerConfig { target_accept: 1.0, ..ok.clone() },
            SamplerConfig { max_tree_depth: 0, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn impossible_target_fails_initialization() {
        let err = sample(&Nowhere, &small_cfg(1)).unwrap_err();
        assert!(matches!(err, SamplerError::InitializationFailed { attempts: 100, .. }));
    }

    #[test]
    fn thinning_keeps_every_kth_draw_per_chain() {
        let cfg = SamplerConfig {
            chains: 2,
            total_steps: 150,
            warmup_steps: 50,
            ..small_cfg(4)
        };
        let d = sample(&StdNormal(1), &cfg).unwrap();
        let t = d.thin(10);
        assert_eq!(t.n_draws(), 20);
        assert_eq!(t.row(1), d.row(10));
        assert_eq!(t.chain_id[10], 1);
    }
}
