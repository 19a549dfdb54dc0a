//! Least-squares oracles: sample `j` contributes `1/2 (a_j . x - b_j)^2`.

use super::{norm_sq, sparse_dot, FedProblem, ProblemError};
use crate::data::{ClientShard, Dataset};

#[derive(Debug, Clone)]
pub struct LeastSquaresProblem {
    data: Dataset,
    shards: Vec<ClientShard>,
    smoothness: f64,
    optimum: Option<Vec<f64>>,
}

impl LeastSquaresProblem {
    /// Requires regression targets on the dataset.
    pub fn new(data: Dataset, shards: Vec<ClientShard>) -> Result<Self, ProblemError> {
        if !data.has_targets() {
            return Err(ProblemError::InvalidProblem(
                "least squares needs regression targets".into(),
            ));
        }
        if shards.is_empty() {
            return Err(ProblemError::InvalidProblem("no client shards".into()));
        }
        for s in &shards {
            if s.is_empty() {
                return Err(ProblemError::InvalidProblem(format!(
                    "client {} has an empty shard",
                    s.client_id
                )));
            }
            if let Some(&bad) = s.indices.iter().find(|&&i| i >= data.n_samples()) {
                return Err(ProblemError::InvalidProblem(format!(
                    "client {} references sample {bad} outside the dataset",
                    s.client_id
                )));
            }
        }
        let smoothness = (0..data.n_samples())
            .map(|i| data.row_sq_norm(i))
            .fold(0.0f64, f64::max);
        Ok(LeastSquaresProblem {
            data,
            shards,
            smoothness,
            optimum: None,
        })
    }

    /// Attach a precomputed global minimizer (for example from
    /// [`Self::pooled_optimum_from`]) so runs can trace distance-to-optimum.
    pub fn with_optimum(mut self, x_star: Vec<f64>) -> Result<Self, ProblemError> {
        if x_star.len() != self.data.dim() {
            return Err(ProblemError::DimensionMismatch {
                expected: self.data.dim(),
                got: x_star.len(),
            });
        }
        self.optimum = Some(x_star);
        Ok(self)
    }

    fn global_index(&self, client: usize, sample: usize) -> usize {
        self.shards[client].indices[sample]
    }

    fn residual(&self, global: usize, x: &[f64]) -> f64 {
        sparse_dot(self.data.row(global), x) - self.data.target(global).expect("targets present")
    }

    /// Minimizer of the pooled objective reached from `x0` by conjugate
    /// gradients on the normal equations. For consistent (interpolating)
    /// systems this is the exact zero-loss point of the affine slice
    /// `x0 + rowspace`, the same point gradient-based training converges to.
    pub fn pooled_optimum_from(
        &self,
        x0: &[f64],
        grad_tol: f64,
        max_iters: usize,
    ) -> Result<Vec<f64>, ProblemError> {
        let d = self.data.dim();
        if x0.len() != d {
            return Err(ProblemError::DimensionMismatch {
                expected: d,
                got: x0.len(),
            });
        }
        let m = self.data.n_samples();
        let mf = m as f64;
        // H v = A^T A v / m via two sparse passes.
        let hv = |v: &[f64], out: &mut [f64]| {
            out.fill(0.0);
            for i in 0..m {
                let t = sparse_dot(self.data.row(i), v) / mf;
                for &(j, val) in self.data.row(i) {
                    out[j as usize] += val * t;
                }
            }
        };
        // r = -grad = A^T b / m - H x.
        let mut r = vec![0.0; d];
        for i in 0..m {
            let b = self.data.target(i).expect("targets present");
            for &(j, val) in self.data.row(i) {
                r[j as usize] += val * b / mf;
            }
        }
        let mut tmp = vec![0.0; d];
        hv(x0, &mut tmp);
        for (rk, hk) in r.iter_mut().zip(&tmp) {
            *rk -= hk;
        }

        let mut x = x0.to_vec();
        let mut p = r.clone();
        let mut rs = norm_sq(&r);
        for _ in 0..max_iters {
            if rs.sqrt() <= grad_tol {
                return Ok(x);
            }
            hv(&p, &mut tmp);
            let denom = super::dot(&p, &tmp);
            if denom <= 0.0 {
                break;
            }
            let alpha = rs / denom;
            for k in 0..d {
                x[k] += alpha * p[k];
                r[k] -= alpha * tmp[k];
            }
            let rs_new = norm_sq(&r);
            let beta = rs_new / rs;
            rs = rs_new;
            for k in 0..d {
                p[k] = r[k] + beta * p[k];
            }
        }
        if rs.sqrt() <= grad_tol {
            Ok(x)
        } else {
            Err(ProblemError::OptimumNotFound {
                target: grad_tol,
                reached: rs.sqrt(),
            })
        }
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }
}

impl FedProblem for LeastSquaresProblem {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn n_clients(&self) -> usize {
        self.shards.len()
    }

    fn client_samples(&self, client: usize) -> usize {
        self.shards[client].len()
    }

    fn client_seed(&self, client: usize) -> u64 {
        self.shards[client].rng_seed
    }

    fn sample_loss(&self, client: usize, sample: usize, x: &[f64]) -> f64 {
        let r = self.residual(self.global_index(client, sample), x);
        0.5 * r * r
    }

    fn eval_sample_into(
        &self,
        client: usize,
        sample: usize,
        x: &[f64],
        weight: f64,
        grad: &mut [f64],
    ) -> f64 {
        let gi = self.global_index(client, sample);
        let r = self.residual(gi, x);
        let coeff = weight * r;
        for &(j, v) in self.data.row(gi) {
            grad[j as usize] += coeff * v;
        }
        0.5 * r * r
    }

    fn optimum(&self) -> Option<&[f64]> {
        self.optimum.as_deref()
    }

    /// Per-sample smoothness is exactly `max_j ||a_j||^2`.
    fn smoothness(&self) -> Option<f64> {
        Some(self.smoothness)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_regression, SynthRegression};
    use crate::problems::{compute_heterogeneity, max_gradient_error};
    use crate::stepsize::{sps_max, StepsizeConfig};

    fn synth(samples: usize, dim: usize, n: usize, noise: f64, shift: f64) -> LeastSquaresProblem {
        let (data, shards) = synth_regression(&SynthRegression {
            samples,
            dim,
            n_clients: n,
            noise,
            shift,
            seed: 17,
        })
        .unwrap();
        LeastSquaresProblem::new(data, shards).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = synth(24, 6, 3, 0.2, 0.4);
        let err = max_gradient_error(&p, 25, 1e-6, 9);
        assert!(err < 1e-5, "max relative gradient error {err}");
    }

    #[test]
    fn exact_solution_has_zero_loss_and_gradient() {
        let p = synth(12, 20, 3, 0.0, 0.0);
        let x_star = p.pooled_optimum_from(&vec![0.0; 20], 1e-13, 2000).unwrap();
        let mut grad = vec![0.0; 20];
        let loss = p.global_full_eval(&x_star, &mut grad);
        assert!(loss < 1e-20, "loss {loss}");
        assert!(norm_sq(&grad).sqrt() < 1e-12);
    }

    #[test]
    fn single_sample_polyak_step_lands_on_the_sample_minimizer() {
        // For one sample, gamma = (F - 0)/(0.5 ||g||^2) = 1/||a||^2 and the
        // update x - gamma g solves a.x = b exactly.
        let p = synth(8, 4, 2, 0.7, 0.0);
        let cfg = StepsizeConfig::sps_max(0.5, 1e9);
        let x: Vec<f64> = vec![0.3, -0.2, 1.0, 0.5];
        let mut grad = vec![0.0; 4];
        let loss = p.eval_batch(0, &x, &[1], &mut grad).unwrap();
        let gsq = norm_sq(&grad);
        let gamma = sps_max(loss, gsq, &cfg).unwrap();
        let gi = p.global_index(0, 1);
        let a_sq = p.data.row_sq_norm(gi);
        assert!((gamma - 1.0 / a_sq).abs() < 1e-12 * gamma.abs());
        let mut x1 = x.clone();
        for (xk, gk) in x1.iter_mut().zip(&grad) {
            *xk -= gamma * gk;
        }
        assert!(p.residual(gi, &x1).abs() < 1e-10);
    }

    #[test]
    fn interpolating_instance_has_zero_sigma_f() {
        // dim > samples, no noise, no shift: sigma_f^2 = 0.
        let p = synth(10, 24, 2, 0.0, 0.0);
        let x_star = p.pooled_optimum_from(&vec![0.0; 24], 1e-13, 4000).unwrap();
        let n = p.n_clients();
        let sigma_f: f64 =
            (0..n).map(|i| p.client_full_loss(i, &x_star)).sum::<f64>() / n as f64;
        assert!(sigma_f < 1e-12, "sigma_f^2 = {sigma_f}");
    }

    #[test]
    fn shifted_clients_are_heterogeneous() {
        // More samples than dimensions plus per-client target shifts force
        // sigma_f^2 > 0.
        let p = synth(120, 4, 4, 0.0, 1.0);
        let x_star = p.pooled_optimum_from(&vec![0.0; 4], 1e-12, 4000).unwrap();
        let n = p.n_clients();
        let sigma_f: f64 =
            (0..n).map(|i| p.client_full_loss(i, &x_star)).sum::<f64>() / n as f64;
        assert!(sigma_f > 1e-3, "sigma_f^2 = {sigma_f}");
        // The generic heterogeneity path agrees with the CG optimum.
        let rep = compute_heterogeneity(&p, 1e-9).unwrap();
        assert!((rep.sigma_f_sq - sigma_f).abs() < 1e-6 * sigma_f.max(1.0));
        assert!(rep.satisfies_comparison_bounds(1e-9));
    }
}
