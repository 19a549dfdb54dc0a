//! Convex loss oracles and measurements on them.
//!
//! A [`FedProblem`] exposes per-sample stochastic losses and gradients for a
//! fixed set of clients. Batch and full-batch evaluations are means of
//! per-sample evaluations. Built-in problems: logistic regression (binary and
//! multinomial softmax), least squares, and per-sample diagonal quadratics
//! (which carry closed-form optima and exact smoothness constants).

mod least_squares;
mod logistic;
mod quadratics;
pub mod solve;

pub use least_squares::LeastSquaresProblem;
pub use logistic::LogisticProblem;
pub use quadratics::{
    example1_adaptive_iterations, example1_fullbatch_iterations, example1_instance,
    example1_uniform_sgd_iterations, Example1, QuadraticProblem,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("sample {sample} out of range for client {client} ({len} samples)")]
    SampleOutOfRange {
        client: usize,
        sample: usize,
        len: usize,
    },
    #[error("client {client} out of range ({n} clients)")]
    ClientOutOfRange { client: usize, n: usize },
    #[error("optimum solve stalled: gradient norm {reached} above target {target}")]
    OptimumNotFound { target: f64, reached: f64 },
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
}

/// Dense model parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(dim: usize) -> Self {
        ParamVector(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self += alpha * g`.
    pub fn axpy(&mut self, alpha: f64, g: &[f64]) {
        debug_assert_eq!(self.0.len(), g.len());
        for (x, gi) in self.0.iter_mut().zip(g) {
            *x += alpha * gi;
        }
    }

    pub fn dist_sq(&self, other: &[f64]) -> f64 {
        debug_assert_eq!(self.0.len(), other.len());
        self.0
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// Dot product of a sparse row against a dense vector slice.
pub fn sparse_dot(row: &[(u32, f64)], x: &[f64]) -> f64 {
    row.iter().map(|&(j, v)| v * x[j as usize]).sum()
}

/// A federated stochastic loss oracle: `n_clients` clients, each holding a
/// finite set of samples, all losses bounded below by `lower_bound`.
///
/// Implementations are read-only after construction and safe to evaluate
/// concurrently.
pub trait FedProblem: Send + Sync {
    /// Parameter dimension.
    fn dim(&self) -> usize;

    fn n_clients(&self) -> usize;

    /// Number of samples held by `client`.
    fn client_samples(&self, client: usize) -> usize;

    /// Loss of one sample at `x`.
    fn sample_loss(&self, client: usize, sample: usize, x: &[f64]) -> f64;

    /// Loss of one sample; additionally accumulates `weight * gradient`
    /// into `grad`.
    fn eval_sample_into(
        &self,
        client: usize,
        sample: usize,
        x: &[f64],
        weight: f64,
        grad: &mut [f64],
    ) -> f64;

    /// Lower bound on every stochastic loss of `client` (zero for all
    /// built-in problems).
    fn lower_bound(&self, _client: usize) -> f64 {
        0.0
    }

    /// Seed component identifying this client's batch-draw stream; dataset
    /// backed problems return their shard's `rng_seed`.
    fn client_seed(&self, client: usize) -> u64 {
        client as u64
    }

    /// Exact global minimizer, when the problem has a closed form for it.
    fn optimum(&self) -> Option<&[f64]> {
        None
    }

    /// Exact per-sample smoothness constant, when known.
    fn smoothness(&self) -> Option<f64> {
        None
    }

    /// Exact per-sample strong convexity constant, when known.
    fn strong_convexity(&self) -> Option<f64> {
        None
    }

    /// Mean loss and gradient over a batch of client-local sample indices.
    /// `grad` is overwritten.
    fn eval_batch(
        &self,
        client: usize,
        x: &[f64],
        batch: &[usize],
        grad: &mut [f64],
    ) -> Result<f64, ProblemError> {
        if client >= self.n_clients() {
            return Err(ProblemError::ClientOutOfRange {
                client,
                n: self.n_clients(),
            });
        }
        if x.len() != self.dim() || grad.len() != self.dim() {
            return Err(ProblemError::DimensionMismatch {
                expected: self.dim(),
                got: if x.len() != self.dim() {
                    x.len()
                } else {
                    grad.len()
                },
            });
        }
        if batch.is_empty() {
            return Err(ProblemError::EmptyBatch);
        }
        let len = self.client_samples(client);
        let w = 1.0 / batch.len() as f64;
        grad.fill(0.0);
        let mut loss = 0.0;
        for &s in batch {
            if s >= len {
                return Err(ProblemError::SampleOutOfRange {
                    client,
                    sample: s,
                    len,
                });
            }
            loss += self.eval_sample_into(client, s, x, w, grad);
        }
        Ok(loss * w)
    }

    /// Full-batch loss of one client, `f_i(x)`.
    fn client_full_loss(&self, client: usize, x: &[f64]) -> f64 {
        let m = self.client_samples(client);
        let mut sum = 0.0;
        for s in 0..m {
            sum += self.sample_loss(client, s, x);
        }
        sum / m as f64
    }

    /// Full-batch loss and gradient of one client. `grad` is overwritten.
    fn client_full_eval(&self, client: usize, x: &[f64], grad: &mut [f64]) -> f64 {
        let m = self.client_samples(client);
        let w = 1.0 / m as f64;
        grad.fill(0.0);
        let mut sum = 0.0;
        for s in 0..m {
            sum += self.eval_sample_into(client, s, x, w, grad);
        }
        sum * w
    }

    /// Global objective `f(x)`: mean of the client full-batch losses.
    fn global_loss(&self, x: &[f64]) -> f64 {
        let n = self.n_clients();
        (0..n).map(|i| self.client_full_loss(i, x)).sum::<f64>() / n as f64
    }

    /// Global loss and gradient. `grad` is overwritten.
    fn global_full_eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let n = self.n_clients();
        let mut client_grad = vec![0.0; self.dim()];
        grad.fill(0.0);
        let mut loss = 0.0;
        for i in 0..n {
            loss += self.client_full_eval(i, x, &mut client_grad);
            for (g, c) in grad.iter_mut().zip(&client_grad) {
                *g += c / n as f64;
            }
        }
        loss / n as f64
    }

    /// Mean of the per-client lower bounds.
    fn mean_lower_bound(&self) -> f64 {
        let n = self.n_clients();
        (0..n).map(|i| self.lower_bound(i)).sum::<f64>() / n as f64
    }
}

/// Heterogeneity measures of a problem instance, evaluated at the global
/// optimizer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeterogeneityReport {
    /// Mean optimal objective gap `mean_i (f_i(x*) - l_i*)`.
    pub sigma_f_sq: f64,
    /// Gradient heterogeneity `mean_i ||grad f_i(x*)||^2`.
    pub zeta_star_sq: f64,
    /// Gradient variance `mean_i mean_j ||grad F_ij(x*) - grad f_i(x*)||^2`.
    pub sigma_star_sq: f64,
    /// Per-sample smoothness constant (exact when available, else estimated).
    pub smoothness_l: f64,
    /// The global optimizer the measures were evaluated at.
    pub x_star: Vec<f64>,
}

impl HeterogeneityReport {
    /// Do the measures satisfy `zeta*^2 <= 2 L sigma_f^2` and
    /// `sigma*^2 <= 2 L sigma_f^2` (within a relative tolerance)?
    pub fn satisfies_comparison_bounds(&self, rel_tol: f64) -> bool {
        let bound = 2.0 * self.smoothness_l * self.sigma_f_sq;
        let slack = bound * rel_tol + 1e-300;
        self.zeta_star_sq <= bound + slack && self.sigma_star_sq <= bound + slack
    }
}

/// Compute the heterogeneity measures of a problem.
///
/// Uses the problem's closed-form optimizer when available; otherwise runs
/// the full-batch capped-Polyak solver down to gradient norm
/// `x_star_tolerance` (with a tiny ridge for uniqueness) and fails with
/// `OptimumNotFound` if that stalls.
pub fn compute_heterogeneity(
    problem: &dyn FedProblem,
    x_star_tolerance: f64,
) -> Result<HeterogeneityReport, ProblemError> {
    let x_star: Vec<f64> = match problem.optimum() {
        Some(x) => x.to_vec(),
        None => solve::minimize_full_batch(problem, &vec![0.0; problem.dim()], x_star_tolerance)?,
    };
    let n = problem.n_clients();
    let d = problem.dim();
    let mut sigma_f_sq = 0.0;
    let mut zeta_star_sq = 0.0;
    let mut sigma_star_sq = 0.0;
    let mut client_grad = vec![0.0; d];
    let mut sample_grad = vec![0.0; d];
    for i in 0..n {
        let fi = problem.client_full_eval(i, &x_star, &mut client_grad);
        sigma_f_sq += fi - problem.lower_bound(i);
        zeta_star_sq += norm_sq(&client_grad);
        let m = problem.client_samples(i);
        let mut var = 0.0;
        for s in 0..m {
            sample_grad.fill(0.0);
            problem.eval_sample_into(i, s, &x_star, 1.0, &mut sample_grad);
            var += sample_grad
                .iter()
                .zip(&client_grad)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>();
        }
        sigma_star_sq += var / m as f64;
    }
    let nf = n as f64;
    let smoothness_l = match problem.smoothness() {
        Some(l) => l,
        None => estimate_smoothness(problem, 1000, 0),
    };
    Ok(HeterogeneityReport {
        sigma_f_sq: sigma_f_sq / nf,
        zeta_star_sq: zeta_star_sq / nf,
        sigma_star_sq: sigma_star_sq / nf,
        smoothness_l,
        x_star,
    })
}

/// Ratio `||grad F(x) - grad F(y)|| / ||x - y||` for one sample, or `None`
/// when the probe points coincide.
pub fn lipschitz_ratio(
    problem: &dyn FedProblem,
    client: usize,
    sample: usize,
    x: &[f64],
    y: &[f64],
) -> Option<f64> {
    let d = problem.dim();
    let mut gx = vec![0.0; d];
    let mut gy = vec![0.0; d];
    problem.eval_sample_into(client, sample, x, 1.0, &mut gx);
    problem.eval_sample_into(client, sample, y, 1.0, &mut gy);
    let dist_sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    if dist_sq < 1e-24 {
        return None;
    }
    let diff_sq: f64 = gx.iter().zip(&gy).map(|(a, b)| (a - b) * (a - b)).sum();
    Some((diff_sq / dist_sq).sqrt())
}

/// Estimate the per-sample smoothness constant by maximizing the gradient
/// difference ratio over random probe pairs. Identical probe points are
/// skipped, so at least `probes >= 2` draws are attempted.
pub fn estimate_smoothness(problem: &dyn FedProblem, probes: usize, seed: u64) -> f64 {
    use rand::Rng;
    let probes = probes.max(2);
    let d = problem.dim();
    let mut rng = crate::rng::stream_rng(seed, crate::rng::StreamKind::Fuzz, 11);
    let mut best: f64 = 0.0;
    for _ in 0..probes {
        let client = rng.gen_range(0..problem.n_clients());
        let sample = rng.gen_range(0..problem.client_samples(client));
        let x: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
        let y: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect();
        if let Some(r) = lipschitz_ratio(problem, client, sample, &x, &y) {
            best = best.max(r);
        }
    }
    best
}

/// Central finite-difference gradient of one sample's loss.
pub fn finite_diff_gradient(
    problem: &dyn FedProblem,
    client: usize,
    sample: usize,
    x: &[f64],
    h: f64,
) -> Vec<f64> {
    let mut xp = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for k in 0..x.len() {
        let orig = xp[k];
        xp[k] = orig + h;
        let up = problem.sample_loss(client, sample, &xp);
        xp[k] = orig - h;
        let down = problem.sample_loss(client, sample, &xp);
        xp[k] = orig;
        grad[k] = (up - down) / (2.0 * h);
    }
    grad
}

/// Maximum relative gradient error against central finite differences over
/// random probes. Probe points are standard normal, probe samples uniform.
pub fn max_gradient_error(problem: &dyn FedProblem, probes: usize, h: f64, seed: u64) -> f64 {
    use rand::Rng;
    let d = problem.dim();
    let mut rng = crate::rng::stream_rng(seed, crate::rng::StreamKind::Fuzz, 12);
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let client = rng.gen_range(0..problem.n_clients());
        let sample = rng.gen_range(0..problem.client_samples(client));
        let x: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let mut analytic = vec![0.0; d];
        problem.eval_sample_into(client, sample, &x, 1.0, &mut analytic);
        let numeric = finite_diff_gradient(problem, client, sample, &x, h);
        let diff_sq: f64 = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let scale = norm_sq(&analytic).sqrt().max(norm_sq(&numeric).sqrt()).max(1e-8);
        worst = worst.max(diff_sq.sqrt() / scale);
    }
    worst
}
