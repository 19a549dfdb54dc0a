//! Per-sample diagonal quadratics with closed-form optima, plus the
//! two-client scalar instance that illustrates why locally adaptive
//! stepsizes beat any single shared stepsize.

use super::{FedProblem, ProblemError};
use crate::rng::{stream_rng, StreamKind};
use rand::Rng;

/// Finite sums of diagonal quadratics: sample `j` of client `i` is
/// `F_ij(x) = 1/2 sum_k a_ijk (x_k - b_ijk)^2` with all `a_ijk > 0`.
///
/// Everything interesting has a closed form: the global minimizer is a
/// curvature-weighted mean of the centers, the per-sample smoothness
/// constant is the largest curvature and the per-sample strong convexity
/// constant the smallest.
#[derive(Debug, Clone)]
pub struct QuadraticProblem {
    curvatures: Vec<Vec<Vec<f64>>>,
    centers: Vec<Vec<Vec<f64>>>,
    dim: usize,
    x_star: Vec<f64>,
    smoothness: f64,
    strong_convexity: f64,
}

impl QuadraticProblem {
    /// `curvatures[i][j]` and `centers[i][j]` are the diagonal and center of
    /// sample `j` on client `i`.
    pub fn new(
        curvatures: Vec<Vec<Vec<f64>>>,
        centers: Vec<Vec<Vec<f64>>>,
    ) -> Result<Self, ProblemError> {
        if curvatures.is_empty() || curvatures.len() != centers.len() {
            return Err(ProblemError::InvalidProblem(
                "curvatures/centers shape mismatch".into(),
            ));
        }
        let dim = curvatures
            .first()
            .and_then(|c| c.first())
            .map(|v| v.len())
            .unwrap_or(0);
        if dim == 0 {
            return Err(ProblemError::InvalidProblem("zero-dimensional".into()));
        }
        let mut smoothness: f64 = 0.0;
        let mut strong_convexity = f64::INFINITY;
        for (ci, bi) in curvatures.iter().zip(&centers) {
            if ci.is_empty() || ci.len() != bi.len() {
                return Err(ProblemError::InvalidProblem(
                    "client without samples or shape mismatch".into(),
                ));
            }
            for (a, b) in ci.iter().zip(bi) {
                if a.len() != dim || b.len() != dim {
                    return Err(ProblemError::InvalidProblem("ragged dimensions".into()));
                }
                for &ak in a {
                    if !(ak > 0.0) || !ak.is_finite() {
                        return Err(ProblemError::InvalidProblem(format!(
                            "curvatures must be positive and finite, got {ak}"
                        )));
                    }
                    smoothness = smoothness.max(ak);
                    strong_convexity = strong_convexity.min(ak);
                }
            }
        }
        // Minimizer of the double mean: curvature-weighted center mean,
        // clients weighted equally, samples within a client by 1/m_i.
        let n = curvatures.len() as f64;
        let mut num = vec![0.0; dim];
        let mut den = vec![0.0; dim];
        for (ci, bi) in curvatures.iter().zip(&centers) {
            let w = 1.0 / (n * ci.len() as f64);
            for (a, b) in ci.iter().zip(bi) {
                for k in 0..dim {
                    num[k] += w * a[k] * b[k];
                    den[k] += w * a[k];
                }
            }
        }
        let x_star = num.iter().zip(&den).map(|(p, q)| p / q).collect();
        Ok(QuadraticProblem {
            curvatures,
            centers,
            dim,
            x_star,
            smoothness,
            strong_convexity,
        })
    }

    /// 1-D instance from per-client (curvature, center) lists.
    pub fn scalar(clients: &[Vec<(f64, f64)>]) -> Result<Self, ProblemError> {
        let curv = clients
            .iter()
            .map(|c| c.iter().map(|&(a, _)| vec![a]).collect())
            .collect();
        let cent = clients
            .iter()
            .map(|c| c.iter().map(|&(_, b)| vec![b]).collect())
            .collect();
        Self::new(curv, cent)
    }

    /// Random instance: curvatures uniform in `[curv_lo, curv_hi]`, centers
    /// uniform in `[-spread, spread]`.
    pub fn random(
        n_clients: usize,
        samples_per_client: usize,
        dim: usize,
        curv_lo: f64,
        curv_hi: f64,
        spread: f64,
        seed: u64,
    ) -> Self {
        let mut rng = stream_rng(seed, StreamKind::Synth, 2);
        let mut curvatures = Vec::with_capacity(n_clients);
        let mut centers = Vec::with_capacity(n_clients);
        for _ in 0..n_clients {
            let mut ci = Vec::with_capacity(samples_per_client);
            let mut bi = Vec::with_capacity(samples_per_client);
            for _ in 0..samples_per_client {
                ci.push(
                    (0..dim)
                        .map(|_| curv_lo + (curv_hi - curv_lo) * rng.gen::<f64>())
                        .collect::<Vec<f64>>(),
                );
                bi.push(
                    (0..dim)
                        .map(|_| spread * (2.0 * rng.gen::<f64>() - 1.0))
                        .collect::<Vec<f64>>(),
                );
            }
            curvatures.push(ci);
            centers.push(bi);
        }
        Self::new(curvatures, centers).expect("random instance is valid by construction")
    }

    /// Global objective value at the minimizer (the irreducible loss).
    pub fn optimal_value(&self) -> f64 {
        self.global_loss(&self.x_star.clone())
    }
}

impl FedProblem for QuadraticProblem {
    fn dim(&self) -> usize {
        self.dim
    }

    fn n_clients(&self) -> usize {
        self.curvatures.len()
    }

    fn client_samples(&self, client: usize) -> usize {
        self.curvatures[client].len()
    }

    fn sample_loss(&self, client: usize, sample: usize, x: &[f64]) -> f64 {
        let a = &self.curvatures[client][sample];
        let b = &self.centers[client][sample];
        0.5 * x
            .iter()
            .zip(a)
            .zip(b)
            .map(|((xk, ak), bk)| ak * (xk - bk) * (xk - bk))
            .sum::<f64>()
    }

    fn eval_sample_into(
        &self,
        client: usize,
        sample: usize,
        x: &[f64],
        weight: f64,
        grad: &mut [f64],
    ) -> f64 {
        let a = &self.curvatures[client][sample];
        let b = &self.centers[client][sample];
        let mut loss = 0.0;
        for k in 0..self.dim {
            let diff = x[k] - b[k];
            loss += 0.5 * a[k] * diff * diff;
            grad[k] += weight * a[k] * diff;
        }
        loss
    }

    fn optimum(&self) -> Option<&[f64]> {
        Some(&self.x_star)
    }

    fn smoothness(&self) -> Option<f64> {
        Some(self.smoothness)
    }

    fn strong_convexity(&self) -> Option<f64> {
        Some(self.strong_convexity)
    }
}

/// The two-client scalar instance `f_1(x) = a x^2 / 2`, `f_2(x) = x^2 / 2`
/// together with its per-client optimal stepsizes.
#[derive(Debug, Clone)]
pub struct Example1 {
    pub problem: QuadraticProblem,
    /// Optimal stepsize of client 1, `1/a`.
    pub gamma1_star: f64,
    /// Optimal stepsize of client 2, `1`.
    pub gamma2_star: f64,
    /// Smoothness constant of the averaged objective, `(1 + a)/2`.
    pub mean_smoothness: f64,
    pub a: f64,
}

/// Build the two-client instance for curvature ratio `a > 0`. The global
/// minimizer is 0.
pub fn example1_instance(a: f64) -> Example1 {
    assert!(a > 0.0, "curvature ratio must be positive");
    let problem =
        QuadraticProblem::scalar(&[vec![(a, 0.0)], vec![(1.0, 0.0)]]).expect("valid instance");
    Example1 {
        problem,
        gamma1_star: 1.0 / a,
        gamma2_star: 1.0,
        mean_smoothness: 0.5 * (1.0 + a),
        a,
    }
}

/// Iterations of the deterministic averaged update
/// `x <- x - (gamma/2)(grad f_1 + grad f_2) = x (1 - gamma (1+a)/2)`
/// until `|x| < tol`. `None` when the budget runs out first.
pub fn example1_fullbatch_iterations(
    a: f64,
    gamma: f64,
    x0: f64,
    tol: f64,
    max_iters: usize,
) -> Option<usize> {
    let factor = 1.0 - gamma * (1.0 + a) / 2.0;
    let mut x = x0;
    for t in 0..max_iters {
        if x.abs() < tol {
            return Some(t);
        }
        x *= factor;
    }
    (x.abs() < tol).then_some(max_iters)
}

/// Iterations of the locally adaptive averaged update
/// `x <- x - (gamma_1 grad f_1 + gamma_2 grad f_2)/2`.
pub fn example1_adaptive_iterations(
    a: f64,
    gamma1: f64,
    gamma2: f64,
    x0: f64,
    tol: f64,
    max_iters: usize,
) -> Option<usize> {
    let factor = 1.0 - 0.5 * (gamma1 * a + gamma2);
    let mut x = x0;
    for t in 0..max_iters {
        if x.abs() < tol {
            return Some(t);
        }
        x *= factor;
    }
    (x.abs() < tol).then_some(max_iters)
}

/// Iterations of single-sample SGD with one shared stepsize: each step picks
/// client 1 or 2 uniformly at random and applies its gradient alone.
pub fn example1_uniform_sgd_iterations(
    a: f64,
    gamma: f64,
    x0: f64,
    tol: f64,
    max_iters: usize,
    seed: u64,
) -> Option<usize> {
    let mut rng = stream_rng(seed, StreamKind::Fuzz, 13);
    let mut x = x0;
    for t in 0..max_iters {
        if x.abs() < tol {
            return Some(t);
        }
        if !x.is_finite() {
            return None;
        }
        let curv = if rng.gen::<bool>() { a } else { 1.0 };
        x *= 1.0 - gamma * curv;
    }
    (x.abs() < tol).then_some(max_iters)
}
