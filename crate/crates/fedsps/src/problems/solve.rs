//! Full-batch reference optimizer used to locate global minimizers when no
//! closed form exists.
//!
//! Guarded gradient descent with the capped Polyak stepsize: the cap halves
//! whenever a step fails to descend, so no smoothness constant is needed. A
//! tiny ridge keeps the minimizer unique; it is never used in training runs.

use super::{norm_sq, FedProblem, ProblemError};
use crate::stepsize::{sps_max, StepsizeConfig};

/// Ridge added inside the solver only.
pub const SOLVER_RIDGE: f64 = 1e-8;

/// Minimize the global objective down to gradient norm `grad_tol`, starting
/// from `x0`. Fails with `OptimumNotFound` when the iteration budget runs
/// out first.
pub fn minimize_full_batch(
    problem: &dyn FedProblem,
    x0: &[f64],
    grad_tol: f64,
) -> Result<Vec<f64>, ProblemError> {
    minimize_full_batch_opts(problem, x0, grad_tol, 500_000, SOLVER_RIDGE)
}

pub fn minimize_full_batch_opts(
    problem: &dyn FedProblem,
    x0: &[f64],
    grad_tol: f64,
    max_iters: usize,
    ridge: f64,
) -> Result<Vec<f64>, ProblemError> {
    let d = problem.dim();
    if x0.len() != d {
        return Err(ProblemError::DimensionMismatch {
            expected: d,
            got: x0.len(),
        });
    }
    let ell = problem.mean_lower_bound();
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; d];
    let mut cap = 1.0f64;

    let ridged = |problem: &dyn FedProblem, x: &[f64], grad: Option<&mut [f64]>| -> f64 {
        match grad {
            Some(g) => {
                let mut f = problem.global_full_eval(x, g);
                for (gk, xk) in g.iter_mut().zip(x) {
                    *gk += ridge * xk;
                }
                f += 0.5 * ridge * norm_sq(x);
                f
            }
            None => problem.global_loss(x) + 0.5 * ridge * norm_sq(x),
        }
    };

    let mut f = ridged(problem, &x, Some(&mut grad));
    let mut gnorm = norm_sq(&grad).sqrt();
    for _ in 0..max_iters {
        if gnorm <= grad_tol {
            return Ok(x);
        }
        let cfg = StepsizeConfig::sps_max(0.5, cap);
        let gamma = sps_max((f - ell).max(0.0), gnorm * gnorm, &cfg)
            .unwrap_or(cap)
            .max(f64::MIN_POSITIVE);
        let mut candidate = x.clone();
        for (ck, gk) in candidate.iter_mut().zip(&grad) {
            *ck -= gamma * gk;
        }
        let f_cand = ridged(problem, &candidate, None);
        if f_cand <= f {
            x = candidate;
            f = ridged(problem, &x, Some(&mut grad));
            gnorm = norm_sq(&grad).sqrt();
        } else {
            cap *= 0.5;
            if cap < 1e-18 {
                break;
            }
        }
    }
    if gnorm <= grad_tol {
        Ok(x)
    } else {
        Err(ProblemError::OptimumNotFound {
            target: grad_tol,
            reached: gnorm,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{partition_iid, synth_classification};
    use crate::problems::{LogisticProblem, QuadraticProblem};

    #[test]
    fn solves_quadratics_to_the_closed_form_optimum() {
        let p = QuadraticProblem::random(3, 4, 2, 0.5, 4.0, 1.5, 8);
        let x = minimize_full_batch(&p, &[0.0, 0.0], 1e-11).unwrap();
        let exact = p.optimum().unwrap();
        // The ridge shifts the optimum by O(ridge).
        for (a, b) in x.iter().zip(exact) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn solves_nonseparable_logistic() {
        // Overlapping classes: interior optimum with healthy curvature.
        let data = synth_classification(300, 8, 2, 4);
        let shards = partition_iid(&data, 3, 1).unwrap();
        let p = LogisticProblem::binary(data, shards).unwrap();
        let x = minimize_full_batch(&p, &vec![0.0; 8], 1e-9).unwrap();
        let mut grad = vec![0.0; 8];
        p.global_full_eval(&x, &mut grad);
        assert!(norm_sq(&grad).sqrt() < 2e-9);
    }

    #[test]
    fn reports_stall() {
        let p = QuadraticProblem::random(2, 2, 2, 0.5, 4.0, 1.5, 9);
        let err = minimize_full_batch_opts(&p, &[50.0, -30.0], 1e-300, 5, 0.0).unwrap_err();
        assert!(matches!(err, ProblemError::OptimumNotFound { .. }));
    }
}
