//! Euclidean metrics for the kinetic energy `p' M^{-1} p / 2`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    #[default]
    Diagonal,
    Dense,
}

/// Inverse metric, i.e. the covariance estimate of the position.
#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    Diagonal(Vec<f64>),
    Dense {
        cov: DMatrix<f64>,
        /// Lower Cholesky factor of `cov`.
        chol: DMatrix<f64>,
    },
}

impl Metric {
    pub fn unit(dim: usize) -> Self {
        Metric::Diagonal(vec![1.0; dim])
    }

    /// Dense metric from a row-major covariance; `None` unless positive definite.
    pub fn dense(dim: usize, cov: &[f64]) -> Option<Self> {
        let cov = DMatrix::from_row_slice(dim, dim, cov);
        let chol = cov.clone().cholesky()?.unpack();
        Some(Metric::Dense { cov, chol })
    }

    pub fn dim(&self) -> usize {
        match self {
            Metric::Diagonal(m) => m.len(),
            Metric::Dense { cov, .. } => cov.nrows(),
        }
    }

    /// `M^{-1} p`, the velocity.
    pub fn sharp(&self, p: &[f64]) -> Vec<f64> {
        match self {
            Metric::Diagonal(m) => p.iter().zip(m).map(|(a, b)| a * b).collect(),
            Metric::Dense { cov, .. } => (cov * DVector::from_column_slice(p)).data.into(),
        }
    }

    /// `p' M^{-1} p / 2`.
    pub fn kinetic(&self, p: &[f64]) -> f64 {
        match self {
            Metric::Diagonal(m) => 0.5 * p.iter().zip(m).map(|(p, m)| p * p * m).sum::<f64>(),
            Metric::Dense { .. } => 0.5 * p.iter().zip(self.sharp(p)).map(|(a, b)| a * b).sum::<f64>(),
        }
    }

    /// Momentum from `N(0, M)`.
    pub fn draw_momentum<R: Rng + ?Sized>(&self, p: &mut [f64], rng: &mut R) {
        let u: Vec<f64> = (0..p.len()).map(|_| rng.sample(StandardNormal)).collect();
        match self {
            Metric::Diagonal(m) => {
                for ((p, m), u) in p.iter_mut().zip(m).zip(u) {
                    *p = u / m.sqrt();
                }
            }
            Metric::Dense { chol, .. } => {
                // cov = L L', so M = L'^{-1} L^{-1} and L'^{-1} u has covariance M.
                let x = chol
                    .tr_solve_lower_triangular(&DVector::from_vec(u))
                    .expect("Cholesky factor has a positive diagonal");
                p.copy_from_slice(x.as_slice());
            }
        }
    }

    /// Diagonal of the inverse metric, for reporting.
    pub fn variances(&self) -> Vec<f64> {
        match self {
            Metric::Diagonal(m) => m.clone(),
            Metric::Dense { cov, .. } => cov.diagonal().iter().copied().collect(),
        }
    }
}

/// Running mean and covariance (full or per-coordinate).
#[derive(Debug, Clone)]
pub(crate) struct Welford {
    kind: MetricKind,
    n: usize,
    mean: Vec<f64>,
    /// Row-major `dim x dim` for dense, length `dim` for diagonal.
    m2: Vec<f64>,
}

impl Welford {
    pub(crate) fn new(dim: usize, kind: MetricKind) -> Self {
        let size = match kind {
            MetricKind::Diagonal => dim,
            MetricKind::Dense => dim * dim,
        };
        Self {
            kind,
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; size],
        }
    }

    pub(crate) fn add(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        let dim = self.mean.len();
        let delta: Vec<f64> = x.iter().zip(&self.mean).map(|(v, m)| v - m).collect();
        for (m, d) in self.mean.iter_mut().zip(&delta) {
            *m += d / n;
        }
        match self.kind {
            MetricKind::Diagonal => {
                for ((s, d), (v, m)) in self.m2.iter_mut().zip(&delta).zip(x.iter().zip(&self.mean)) {
                    *s += d * (v - m);
                }
            }
            MetricKind::Dense => {
                for i in 0..dim {
                    let di = delta[i];
                    let row = &mut self.m2[i * dim..(i + 1) * dim];
                    for j in 0..dim {
                        row[j] += di * (x[j] - self.mean[j]);
                    }
                }
            }
        }
    }

    /// Sample covariance shrunk towards `1e-3 I`.
    pub(crate) fn regularized(&self) -> Metric {
        let n = self.n as f64;
        let dim = self.mean.len();
        let w = n / (n + 5.0);
        let shrink = 1e-3 * (5.0 / (n + 5.0));
        let var = |s: f64| if self.n > 1 { s / (n - 1.0) } else { 0.0 };
        match self.kind {
            MetricKind::Diagonal => Metric::Diagonal(
                self.m2
                    .iter()
                    .map(|&s| if self.n > 1 { w * var(s) + shrink } else { 1.0 })
                    .collect(),
            ),
            MetricKind::Dense => {
                if self.n <= 1 {
                    return Metric::unit(dim);
                }
                let mut cov: Vec<f64> = self.m2.iter().map(|&s| w * var(s)).collect();
                for i in 0..dim {
                    for j in 0..i {
                        let avg = 0.5 * (cov[i * dim + j] + cov[j * dim + i]);
                        cov[i * dim + j] = avg;
                        cov[j * dim + i] = avg;
                    }
                    cov[i * dim + i] += shrink;
                }
                Metric::dense(dim, &cov).unwrap_or_else(|| {
                    Metric::Diagonal((0..dim).map(|i| cov[i * dim + i]).collect())
                })
            }
        }
    }
}
