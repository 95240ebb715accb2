//! Brute-force check of the closed-form proximal map.
//!
//! Nothing here calls into [`crate::regularization`] except the closed form
//! under test. The minimizer enumerates supports: on the open orthant where
//! `sign(theta) = sigma` the objective is smooth, so each support is solved by
//! damped Newton and the best feasible candidate (or zero) wins. Signs are
//! fixed to `sign(theta_hat)`, since flipping a coordinate toward `theta_hat`
//! never increases the objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::Result;
use crate::regularization::prox_group;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProxInstance {
    pub theta_hat: Vec<f64>,
    pub t: f64,
    pub lambda: f64,
    pub alpha: f64,
}

impl ProxInstance {
    fn group_coef(&self) -> f64 {
        self.lambda * (1.0 - self.alpha) * (self.theta_hat.len() as f64).sqrt()
    }

    fn l1_coef(&self) -> f64 {
        self.lambda * self.alpha
    }

    /// `1/(2t) ||theta - theta_hat||^2 + lambda ((1 - alpha) sqrt(P) ||theta||_2 + alpha ||theta||_1)`
    pub fn objective(&self, theta: &[f64]) -> f64 {
        let mut dist = 0.0;
        let mut sq = 0.0;
        let mut abs = 0.0;
        for (x, y) in theta.iter().zip(&self.theta_hat) {
            dist += (x - y) * (x - y);
            sq += x * x;
            abs += x.abs();
        }
        dist / (2.0 * self.t) + self.group_coef() * sq.sqrt() + self.l1_coef() * abs
    }
}

/// Smooth restriction of the objective to one support with fixed signs
/// (smooth away from the origin).
struct Restricted<'a> {
    target: Vec<f64>,
    sign: Vec<f64>,
    inst: &'a ProxInstance,
}

impl Restricted<'_> {
    fn value(&self, x: &[f64]) -> f64 {
        let mut dist = 0.0;
        let mut sq = 0.0;
        let mut lin = 0.0;
        for ((v, target), sign) in x.iter().zip(&self.target).zip(&self.sign) {
            dist += (v - target) * (v - target);
            sq += v * v;
            lin += sign * v;
        }
        dist / (2.0 * self.inst.t) + self.inst.group_coef() * sq.sqrt() + self.inst.l1_coef() * lin
    }

    fn gradient_and_hessian(&self, x: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = x.len();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let a = self.inst.group_coef();
        let inv_t = 1.0 / self.inst.t;
        let mut g = vec![0.0; n];
        let mut h = vec![vec![0.0; n]; n];
        for i in 0..n {
            g[i] = (x[i] - self.target[i]) * inv_t + a * x[i] / norm + self.inst.l1_coef() * self.sign[i];
            for j in 0..n {
                let delta = if i == j { 1.0 } else { 0.0 };
                h[i][j] = inv_t * delta + a * (delta / norm - x[i] * x[j] / (norm * norm * norm));
            }
        }
        (g, h)
    }

    fn minimize(&self) -> Vec<f64> {
        let mut x = self.target.clone();
        for _ in 0..200 {
            let (g, h) = self.gradient_and_hessian(&x);
            let Some(step) = solve(h, g.iter().map(|v| -v).collect()) else {
                break;
            };
            let f0 = self.value(&x);
            let slope: f64 = g.iter().zip(&step).map(|(a, b)| a * b).sum();
            // Near the origin the Hessian blows up and full steps land on the
            // kink, so a step may at most halve the norm.
            let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
            let floor = 0.5 * norm(&x);
            let mut eta = 1.0;
            let mut next = x.clone();
            for _ in 0..60 {
                for i in 0..x.len() {
                    next[i] = x[i] + eta * step[i];
                }
                if norm(&next) >= floor {
                    break;
                }
                eta *= 0.5;
            }
            let mut accepted = false;
            for _ in 0..60 {
                for i in 0..x.len() {
                    next[i] = x[i] + eta * step[i];
                }
                if self.value(&next) <= f0 + 1e-4 * eta * slope {
                    accepted = true;
                    break;
                }
                eta *= 0.5;
            }
            if !accepted {
                break;
            }
            let moved = step.iter().map(|v| (eta * v).abs()).fold(0.0, f64::max);
            x.copy_from_slice(&next);
            if moved <= 1e-15 * (1.0 + x.iter().map(|v| v.abs()).fold(0.0, f64::max)) {
                break;
            }
        }
        x
    }
}

/// Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col] == 0.0 || !a[pivot][col].is_finite() {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            let (upper, lower) = a.split_at_mut(row);
            for (dst, src) in lower[0][col..].iter_mut().zip(&upper[col][col..]) {
                *dst -= f * src;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[row][k] * x[k];
        }
        x[row] = acc / a[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Numerical minimizer of the proximal subproblem by support enumeration.
pub fn brute_force_prox(inst: &ProxInstance) -> Vec<f64> {
    let p = inst.theta_hat.len();
    let mut best = vec![0.0; p];
    let mut best_value = inst.objective(&best);
    let active: Vec<usize> = (0..p).filter(|&j| inst.theta_hat[j] != 0.0).collect();

    for mask in 1u32..(1u32 << active.len()) {
        let support: Vec<usize> = (0..active.len()).filter(|i| mask & (1 << i) != 0).map(|i| active[i]).collect();
        let restricted = Restricted {
            target: support.iter().map(|&j| inst.theta_hat[j]).collect(),
            sign: support.iter().map(|&j| inst.theta_hat[j].signum()).collect(),
            inst,
        };
        let x = restricted.minimize();
        let feasible = x.iter().zip(&restricted.sign).all(|(v, s)| v * s > 0.0);
        if !feasible {
            continue;
        }
        let mut full = vec![0.0; p];
        for (&j, &v) in support.iter().zip(&x) {
            full[j] = v;
        }
        let value = inst.objective(&full);
        if value < best_value {
            best_value = value;
            best = full;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Deviation {
    /// `||closed - oracle||_2`.
    pub param: f64,
    /// `objective(closed) - objective(oracle)`; negative when the closed form
    /// does better.
    pub objective: f64,
}

pub fn compare(inst: &ProxInstance) -> Result<Deviation> {
    let closed = prox_group(&inst.theta_hat, inst.t, inst.lambda, inst.alpha, inst.theta_hat.len())?;
    let oracle = brute_force_prox(inst);
    let param = closed.iter().zip(&oracle).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    Ok(Deviation {
        param,
        objective: inst.objective(&closed) - inst.objective(&oracle),
    })
}

pub const ALPHAS: [f64; 4] = [0.0, 0.25, 0.5, 1.0];

/// A random instance with group size at most 8. Every fifth instance, starting
/// with the first, is placed on the clamp boundary: `||S(theta_hat, t alpha
/// lambda)||_2` equals `t (1 - alpha) lambda sqrt(P)` up to rounding.
pub fn random_instance(rng: &mut ChaCha8Rng, index: usize) -> ProxInstance {
    let p = rng.random_range(1..=8usize);
    let alpha = ALPHAS[index % ALPHAS.len()];
    let t = rng.random_range(0.05..1.0);
    let lambda = rng.random_range(0.0..2.0);
    let mut theta_hat: Vec<f64> = (0..p).map(|_| StandardNormal.sample(rng)).collect();

    if index.is_multiple_of(5) {
        let level = t * alpha * lambda;
        let tau = t * (1.0 - alpha) * lambda * (p as f64).sqrt();
        let norm = theta_hat.iter().map(|v: &f64| v * v).sum::<f64>().sqrt().max(1e-12);
        theta_hat = theta_hat
            .iter()
            .map(|v| {
                let s = v / norm * tau;
                s + s.signum() * level
            })
            .collect();
    }
    ProxInstance {
        theta_hat,
        t,
        lambda,
        alpha,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProxCheckSummary {
    pub trials: usize,
    pub max_param_deviation: f64,
    pub max_objective_excess: f64,
    pub kills: usize,
}

impl ProxCheckSummary {
    pub fn passed(&self, param_tol: f64, objective_tol: f64) -> bool {
        self.max_param_deviation <= param_tol && self.max_objective_excess <= objective_tol
    }
}

pub fn run_prox_check(trials: usize, seed: u64) -> Result<ProxCheckSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = ProxCheckSummary {
        trials,
        max_param_deviation: 0.0,
        max_objective_excess: 0.0,
        kills: 0,
    };
    for i in 0..trials {
        let inst = random_instance(&mut rng, i);
        let dev = compare(&inst)?;
        let closed = prox_group(&inst.theta_hat, inst.t, inst.lambda, inst.alpha, inst.theta_hat.len())?;
        if closed.iter().all(|&v| v == 0.0) {
            summary.kills += 1;
        }
        summary.max_param_deviation = summary.max_param_deviation.max(dev.param);
        summary.max_objective_excess = summary.max_objective_excess.max(dev.objective.abs());
    }
    Ok(summary)
}

/// An `alpha = 0` instance straddling the kill threshold `t lambda sqrt(P)`:
/// every tenth lies exactly on it (a single nonzero coordinate of magnitude
/// `tau`), the rest alternate just below and just above by a relative margin
/// between `1e-10` and `1e-2`.
pub fn boundary_instance(rng: &mut ChaCha8Rng, index: usize) -> ProxInstance {
    let p = rng.random_range(1..=8usize);
    let t = rng.random_range(0.01..1.0);
    let lambda = rng.random_range(0.05..2.0);
    let tau = t * lambda * (p as f64).sqrt();
    let theta_hat = if index.is_multiple_of(10) {
        let mut v = vec![0.0; p];
        v[rng.random_range(0..p)] = if rng.random_bool(0.5) { tau } else { -tau };
        v
    } else {
        let u: Vec<f64> = (0..p).map(|_| StandardNormal.sample(rng)).collect();
        let n = u.iter().map(|x| x * x).sum::<f64>().sqrt();
        let delta = 10f64.powf(rng.random_range(-10.0..-2.0));
        let target = if index.is_multiple_of(2) { tau * (1.0 - delta) } else { tau * (1.0 + delta) };
        u.iter().map(|x| x / n * target).collect()
    };
    ProxInstance {
        theta_hat,
        t,
        lambda,
        alpha: 0.0,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundaryCheckSummary {
    pub trials: usize,
    pub zeroed: usize,
    pub misclassified: usize,
}

/// Checks that the closed form zeroes a group iff `||theta_hat||_2 <= t lambda sqrt(P)`.
pub fn run_boundary_check(trials: usize, seed: u64) -> Result<BoundaryCheckSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = BoundaryCheckSummary {
        trials,
        zeroed: 0,
        misclassified: 0,
    };
    for i in 0..trials {
        let inst = boundary_instance(&mut rng, i);
        let p = inst.theta_hat.len();
        let tau = inst.t * inst.lambda * (p as f64).sqrt();
        let norm = inst.theta_hat.iter().map(|x| x * x).sum::<f64>().sqrt();
        let out = prox_group(&inst.theta_hat, inst.t, inst.lambda, 0.0, p)?;
        let killed = out.iter().all(|&v| v == 0.0);
        summary.zeroed += killed as usize;
        if killed != (norm <= tau) {
            summary.misclassified += 1;
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_finds_known_minimizers() {
        // alpha = 0, ||theta_hat|| = 5, t lambda sqrt(P) = 2.5 -> half length
        let inst = ProxInstance { theta_hat: vec![3.0, 4.0], t: 1.25, lambda: 2f64.sqrt(), alpha: 0.0 };
        let x = brute_force_prox(&inst);
        assert!((x[0] - 1.5).abs() < 1e-10 && (x[1] - 2.0).abs() < 1e-10, "{x:?}");

        // pure l1: coordinatewise shrinkage
        let inst = ProxInstance { theta_hat: vec![3.0, -0.5, -2.0], t: 1.0, lambda: 1.0, alpha: 1.0 };
        let x = brute_force_prox(&inst);
        for (a, b) in x.iter().zip([2.0, 0.0, -1.0]) {
            assert!((a - b).abs() < 1e-12);
        }

        let inst = ProxInstance { theta_hat: vec![0.1, 0.1], t: 1.0, lambda: 1.0, alpha: 0.0 };
        assert_eq!(brute_force_prox(&inst), vec![0.0, 0.0]);
    }

    #[test]
    fn boundary_check_splits_evenly() {
        let s = run_boundary_check(200, 1).unwrap();
        assert_eq!(s.misclassified, 0);
        assert_eq!(s.zeroed, 100);
    }

    #[test]
    fn small_check_passes() {
        let s = run_prox_check(50, 3).unwrap();
        assert!(s.passed(1e-6, 1e-8), "{s:?}");
    }
}
