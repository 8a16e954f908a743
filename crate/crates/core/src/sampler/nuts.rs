//! One transition of the No-U-Turn sampler with multinomial sampling and the
//! generalized U-turn criterion, checked within and across subtrees.

use rand::Rng;

use super::{LogDensity, Metric, MAX_DELTA_H};

/// Position, momentum, gradient and log-density at one point of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub logp: f64,
}

/// Outcome of one transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub accept_stat: f64,
    pub depth: u32,
    pub n_leapfrog: usize,
    pub divergent: bool,
}

/// `-log p(q) + p' M^{-1} p / 2`; infinite where the density vanishes.
pub fn hamiltonian(z: &PhasePoint, metric: &Metric) -> f64 {
    let h = -z.logp + metric.kinetic(&z.p);
    if h.is_nan() {
        f64::INFINITY
    } else {
        h
    }
}

/// One leapfrog step of size `eps` (negative to integrate backwards).
pub fn leapfrog<T: LogDensity + ?Sized>(target: &T, z: &mut PhasePoint, metric: &Metric, eps: f64) {
    for (p, g) in z.p.iter_mut().zip(&z.grad) {
        *p += 0.5 * eps * g;
    }
    for (q, v) in z.q.iter_mut().zip(metric.sharp(&z.p)) {
        *q += eps * v;
    }
    z.logp = target.log_density_and_gradient(&z.q, &mut z.grad);
    for (p, g) in z.p.iter_mut().zip(&z.grad) {
        *p += 0.5 * eps * g;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

fn criterion(p_sharp_minus: &[f64], p_sharp_plus: &[f64], rho: &[f64]) -> bool {
    dot(p_sharp_plus, rho) > 0.0 && dot(p_sharp_minus, rho) > 0.0
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// End of a subtree: momentum and its metric-scaled version.
struct Edge {
    p: Vec<f64>,
    p_sharp: Vec<f64>,
}

struct Builder<'a, T: ?Sized, R: ?Sized> {
    target: &'a T,
    metric: &'a Metric,
    eps: f64,
    h0: f64,
    rng: &'a mut R,
    n_leapfrog: usize,
    sum_metro_prob: f64,
    divergent: bool,
}

/// Result of building a subtree starting next to the current trajectory end.
struct Subtree {
    valid: bool,
    proposal: PhasePoint,
    log_weight: f64,
    rho: Vec<f64>,
    /// Edge closest to the existing trajectory.
    begin: Edge,
    /// Edge farthest from it.
    end: Edge,
}

impl<T: LogDensity + ?Sized, R: Rng + ?Sized> Builder<'_, T, R> {
    /// Extends from `z` by `2^depth` leapfrog steps in direction `sign`; `z`
    /// ends at the new outermost point.
    fn build(&mut self, depth: u32, z: &mut PhasePoint, sign: f64) -> Subtree {
        if depth == 0 {
            leapfrog(self.target, z, self.metric, sign * self.eps);
            self.n_leapfrog += 1;
            let p_sharp = self.metric.sharp(&z.p);
            let h = -z.logp + 0.5 * dot(&z.p, &p_sharp);
            let h = if h.is_nan() { f64::INFINITY } else { h };
            let valid = h - self.h0 <= MAX_DELTA_H;
            if !valid {
                self.divergent = true;
            }
            let log_weight = self.h0 - h;
            self.sum_metro_prob += if log_weight > 0.0 { 1.0 } else { log_weight.exp() };
            return Subtree {
                valid,
                proposal: z.clone(),
                log_weight,
                rho: z.p.clone(),
                begin: Edge {
                    p: z.p.clone(),
                    p_sharp: p_sharp.clone(),
                },
                end: Edge {
                    p: z.p.clone(),
                    p_sharp,
                },
            };
        }

        let init = self.build(depth - 1, z, sign);
        if !init.valid {
            return init;
        }
        let fin = self.build(depth - 1, z, sign);
        if !fin.valid {
            return Subtree { valid: false, ..fin };
        }

        let log_weight = log_sum_exp(init.log_weight, fin.log_weight);
        let accept = (fin.log_weight - log_weight).exp();
        let take_final = fin.log_weight > log_weight || self.rng.random::<f64>() < accept;
        let rho = add(&init.rho, &fin.rho);

        let mut valid = criterion(&init.begin.p_sharp, &fin.end.p_sharp, &rho);
        valid &= criterion(&init.begin.p_sharp, &fin.begin.p_sharp, &add(&init.rho, &fin.begin.p));
        valid &= criterion(&init.end.p_sharp, &fin.end.p_sharp, &add(&fin.rho, &init.end.p));

        Subtree {
            valid,
            proposal: if take_final { fin.proposal } else { init.proposal },
            log_weight,
            rho,
            begin: init.begin,
            end: fin.end,
        }
    }
}

/// Draws a fresh momentum and moves `z` to the next state of the chain.
pub fn transition<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    z: &mut PhasePoint,
    metric: &Metric,
    eps: f64,
    max_depth: u32,
    rng: &mut R,
) -> Transition {
    metric.draw_momentum(&mut z.p, rng);
    let h0 = hamiltonian(z, metric);

    let mut fwd = z.clone();
    let mut bck = z.clone();
    let start_sharp = metric.sharp(&z.p);
    // Outer edges of the whole trajectory.
    let mut edge_bck = Edge {
        p: z.p.clone(),
        p_sharp: start_sharp.clone(),
    };
    let mut edge_fwd = Edge {
        p: z.p.clone(),
        p_sharp: start_sharp,
    };
    let mut rho = z.p.clone();
    let mut log_sum_weight = 0.0;
    let mut sample = z.clone();

    let mut b = Builder {
        target,
        metric,
        eps,
        h0,
        rng,
        n_leapfrog: 0,
        sum_metro_prob: 0.0,
        divergent: false,
    };
    let mut depth = 0;
    while depth < max_depth {
        let forward = b.rng.random::<f64>() > 0.5;
        let sub = if forward {
            b.build(depth, &mut fwd, 1.0)
        } else {
            b.build(depth, &mut bck, -1.0)
        };
        if !sub.valid {
            break;
        }
        depth += 1;

        if sub.log_weight > log_sum_weight {
            sample = sub.proposal.clone();
        } else {
            let accept = (sub.log_weight - log_sum_weight).exp();
            if b.rng.random::<f64>() < accept {
                sample = sub.proposal.clone();
            }
        }
        log_sum_weight = log_sum_exp(log_sum_weight, sub.log_weight);

        // Order the old trajectory and the new subtree along the time axis.
        let (left_rho, right_rho, left_in, right_in, left_out, right_out);
        if forward {
            left_rho = rho.clone();
            right_rho = sub.rho.clone();
            left_in = &edge_fwd;
            right_in = &sub.begin;
            left_out = &edge_bck;
            right_out = &sub.end;
        } else {
            left_rho = sub.rho.clone();
            right_rho = rho.clone();
            left_in = &sub.begin;
            right_in = &edge_bck;
            left_out = &sub.end;
            right_out = &edge_fwd;
        }
        rho = add(&left_rho, &right_rho);
        let mut persist = criterion(&left_out.p_sharp, &right_out.p_sharp, &rho);
        persist &= criterion(&left_out.p_sharp, &right_in.p_sharp, &add(&left_rho, &right_in.p));
        persist &= criterion(&left_in.p_sharp, &right_out.p_sharp, &add(&right_rho, &left_in.p));

        if forward {
            edge_fwd = sub.end;
        } else {
            edge_bck = sub.end;
        }
        if !persist {
            break;
        }
    }

    let n_leapfrog = b.n_leapfrog.max(1);
    let accept_stat = b.sum_metro_prob / n_leapfrog as f64;
    let divergent = b.divergent;
    *z = sample;
    Transition {
        accept_stat,
        depth,
        n_leapfrog: b.n_leapfrog,
        divergent,
    }
}

/// Doubles or halves `eps` until a single leapfrog step crosses an
/// acceptance probability of 0.8.
pub(crate) fn init_stepsize<T: LogDensity + ?Sized, R: Rng + ?Sized>(
    target: &T,
    z: &mut PhasePoint,
    metric: &Metric,
    eps: f64,
    rng: &mut R,
) -> Result<f64, String> {
    let mut eps = eps;
    if eps == 0.0 || eps > 1e7 || eps.is_nan() {
        return Ok(eps);
    }
    let start = z.clone();
    let threshold = 0.8f64.ln();
    let probe = |eps: f64, rng: &mut R| {
        let mut w = start.clone();
        metric.draw_momentum(&mut w.p, rng);
        let h0 = hamiltonian(&w, metric);
        leapfrog(target, &mut w, metric, eps);
        h0 - hamiltonian(&w, metric)
    };
    let direction = if probe(eps, rng) > threshold { 1 } else { -1 };
    loop {
        let delta = probe(eps, rng);
        if direction == 1 && !(delta > threshold) {
            break;
        }
        if direction == -1 && !(delta < threshold) {
            break;
        }
        eps = if direction == 1 { 2.0 * eps } else { 0.5 * eps };
        if eps > 1e7 {
            return Err("step size diverged; the posterior may be improper".into());
        }
        if eps == 0.0 {
            return Err("no acceptably small step size".into());
        }
    }
    *z = start;
    Ok(eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Quadratic;

    impl LogDensity for Quadratic {
        fn dim(&self) -> usize {
            3
        }
        fn log_density_and_gradient(&self, x: &[f64], g: &mut [f64]) -> f64 {
            let scales = [1.0, 4.0, 0.25];
            let mut lp = 0.0;
            for i in 0..3 {
                g[i] = -x[i] / scales[i];
                lp -= 0.5 * x[i] * x[i] / scales[i];
            }
            lp
        }
    }

    fn point(q: Vec<f64>, p: Vec<f64>) -> PhasePoint {
        let mut grad = vec![0.0; q.len()];
        let logp = Quadratic.log_density_and_gradient(&q, &mut grad);
        PhasePoint { q, p, grad, logp }
    }

    #[test]
    fn leapfrog_conserves_energy_with_small_steps() {
        let m = Metric::unit(3);
        let mut z = point(vec![0.3, -1.2, 0.7], vec![0.5, 0.1, -0.9]);
        let h0 = hamiltonian(&z, &m);
        for _ in 0..100 {
            leapfrog(&Quadratic, &mut z, &m, 1e-4);
        }
        assert!((hamiltonian(&z, &m) - h0).abs() < 1e-6);
    }

    #[test]
    fn leapfrog_is_reversible() {
        let m = Metric::Diagonal(vec![1.0, 0.5, 2.0]);
        let z0 = point(vec![0.3, -1.2, 0.7], vec![0.5, 0.1, -0.9]);
        let mut z = z0.clone();
        for _ in 0..20 {
            leapfrog(&Quadratic, &mut z, &m, 0.1);
        }
        for _ in 0..20 {
            leapfrog(&Quadratic, &mut z, &m, -0.1);
        }
        for (a, b) in z.q.iter().zip(&z0.q) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_leapfrog_is_reversible_and_conserves_energy() {
        let m = Metric::dense(3, &[1.0, 0.3, 0.0, 0.3, 0.5, 0.1, 0.0, 0.1, 2.0]).unwrap();
        let z0 = point(vec![0.3, -1.2, 0.7], vec![0.5, 0.1, -0.9]);
        let mut z = z0.clone();
        for _ in 0..20 {
            leapfrog(&Quadratic, &mut z, &m, 0.1);
        }
        for _ in 0..20 {
            leapfrog(&Quadratic, &mut z, &m, -0.1);
        }
        for (a, b) in z.q.iter().zip(&z0.q) {
            assert!((a - b).abs() < 1e-12);
        }
        let h0 = hamiltonian(&z, &m);
        for _ in 0..100 {
            leapfrog(&Quadratic, &mut z, &m, 1e-4);
        }
        assert!((hamiltonian(&z, &m) - h0).abs() < 1e-6);
    }

    #[test]
    fn huge_step_is_divergent() {
        let m = Metric::unit(3);
        let mut z = point(vec![1.0, 1.0, 1.0], vec![0.0; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tr = transition(&Quadratic, &mut z, &m, 500.0, 10, &mut rng);
        assert!(tr.divergent);
        assert_eq!(tr.depth, 0);
    }

    #[test]
    fn depth_is_capped() {
        let m = Metric::unit(3);
        let mut z = point(vec![1.0, 1.0, 1.0], vec![0.0; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tr = transition(&Quadratic, &mut z, &m, 1e-3, 4, &mut rng);
        assert_eq!(tr.depth, 4);
        assert_eq!(tr.n_leapfrog, 15);
    }

    #[test]
    fn step_size_search_lands_near_acceptance_boundary() {
        let m = Metric::unit(3);
        let mut z = point(vec![0.1, 0.2, 0.3], vec![0.0; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let eps = init_stepsize(&Quadratic, &mut z, &m, 1.0, &mut rng).unwrap();
        assert!(eps > 0.01 && eps < 2.0, "{eps}");
        assert_eq!(z.q, vec![0.1, 0.2, 0.3]);
    }
}
