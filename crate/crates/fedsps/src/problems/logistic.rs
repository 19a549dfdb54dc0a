//! Logistic regression oracles over sparse datasets: binary log-loss with
//! labels mapped to -1/+1, and multinomial softmax with log-sum-exp
//! stabilization.

use super::{FedProblem, ProblemError};
use crate::data::{ClientShard, Dataset};

/// `log(1 + exp(u))` without overflow.
fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

/// `1 / (1 + exp(-t))` without overflow.
fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// Binary or multinomial logistic regression over a shared dataset split
/// into client shards.
///
/// Binary mode needs exactly two classes and one weight block of dimension
/// `d`; multinomial mode keeps one block per class (`d * K` parameters,
/// class-major layout).
#[derive(Debug, Clone)]
pub struct LogisticProblem {
    data: Dataset,
    shards: Vec<ClientShard>,
    multinomial: bool,
}

impl LogisticProblem {
    pub fn binary(data: Dataset, shards: Vec<ClientShard>) -> Result<Self, ProblemError> {
        if data.n_classes() != 2 {
            return Err(ProblemError::InvalidProblem(format!(
                "binary logistic regression needs 2 classes, dataset has {}",
                data.n_classes()
            )));
        }
        Self::build(data, shards, false)
    }

    pub fn multinomial(data: Dataset, shards: Vec<ClientShard>) -> Result<Self, ProblemError> {
        if data.n_classes() < 2 {
            return Err(ProblemError::InvalidProblem(
                "multinomial logistic regression needs at least 2 classes".into(),
            ));
        }
        Self::build(data, shards, true)
    }

    fn build(
        data: Dataset,
        shards: Vec<ClientShard>,
        multinomial: bool,
    ) -> Result<Self, ProblemError> {
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
        Ok(LogisticProblem {
            data,
            shards,
            multinomial,
        })
    }

    fn global_index(&self, client: usize, sample: usize) -> usize {
        self.shards[client].indices[sample]
    }

    /// Analytic smoothness upper bound from the data: `max ||a||^2 / 4` for
    /// the binary loss, `max ||a||^2 / 2` for softmax.
    pub fn analytic_smoothness_bound(&self) -> f64 {
        let max_sq = (0..self.data.n_samples())
            .map(|i| self.data.row_sq_norm(i))
            .fold(0.0f64, f64::max);
        if self.multinomial {
            max_sq / 2.0
        } else {
            max_sq / 4.0
        }
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }
}

impl FedProblem for LogisticProblem {
    fn dim(&self) -> usize {
        if self.multinomial {
            self.data.dim() * self.data.n_classes()
        } else {
            self.data.dim()
        }
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
        let i = self.global_index(client, sample);
        let row = self.data.row(i);
        if self.multinomial {
            let d = self.data.dim();
            let k = self.data.n_classes();
            let y = self.data.label(i);
            let mut z = vec![0.0; k];
            for (c, zc) in z.iter_mut().enumerate() {
                *zc = super::sparse_dot(row, &x[c * d..(c + 1) * d]);
            }
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            lse - z[y]
        } else {
            let y = if self.data.label(i) == 1 { 1.0 } else { -1.0 };
            let z = super::sparse_dot(row, x);
            softplus(-y * z)
        }
    }

    fn eval_sample_into(
        &self,
        client: usize,
        sample: usize,
        x: &[f64],
        weight: f64,
        grad: &mut [f64],
    ) -> f64 {
        let i = self.global_index(client, sample);
        let row = self.data.row(i);
        if self.multinomial {
            let d = self.data.dim();
            let k = self.data.n_classes();
            let y = self.data.label(i);
            let mut z = vec![0.0; k];
            for (c, zc) in z.iter_mut().enumerate() {
                *zc = super::sparse_dot(row, &x[c * d..(c + 1) * d]);
            }
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum_exp: f64 = z.iter().map(|v| (v - m).exp()).sum();
            let lse = m + sum_exp.ln();
            for c in 0..k {
                let p = (z[c] - m).exp() / sum_exp;
                let coeff = weight * (p - f64::from(u8::from(c == y)));
                let block = &mut grad[c * d..(c + 1) * d];
                for &(j, v) in row {
                    block[j as usize] += coeff * v;
                }
            }
            lse - z[y]
        } else {
            let y = if self.data.label(i) == 1 { 1.0 } else { -1.0 };
            let z = super::sparse_dot(row, x);
            let coeff = weight * (-y) * sigmoid(-y * z);
            for &(j, v) in row {
                grad[j as usize] += coeff * v;
            }
            softplus(-y * z)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_libsvm, partition_iid, synth_classification};
    use crate::problems::{max_gradient_error, norm_sq, sparse_dot};

    fn tiny_binary() -> LogisticProblem {
        let text = "+1 1:1.0 2:0.5\n-1 1:-0.5 3:1.5\n+1 2:2.0\n-1 1:1.0 3:-1.0";
        let data = parse_libsvm(text.as_bytes()).unwrap();
        let shards = partition_iid(&data, 2, 3).unwrap();
        LogisticProblem::binary(data, shards).unwrap()
    }

    #[test]
    fn zero_weights_give_ln2_loss_and_half_mean_gradient() {
        let p = tiny_binary();
        let x = vec![0.0; p.dim()];
        let mut grad = vec![0.0; p.dim()];
        let loss = p.global_full_eval(&x, &mut grad);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        // At x = 0 the gradient is -mean(y * feat) / 2.
        let mut expected = vec![0.0; p.dim()];
        let data = p.dataset();
        for c in 0..p.n_clients() {
            for s in 0..p.client_samples(c) {
                let gi = p.shards[c].indices[s];
                let y = if data.label(gi) == 1 { 1.0 } else { -1.0 };
                for &(j, v) in data.row(gi) {
                    expected[j as usize] +=
                        -y * v / (2.0 * (p.n_clients() * p.client_samples(c)) as f64);
                }
            }
        }
        for (g, e) in grad.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-15, "{g} vs {e}");
        }
    }

    #[test]
    fn separable_loss_vanishes_along_separator() {
        // One positive sample at +e1, one negative at -e1; pushing the
        // weight along e1 drives the loss to zero.
        let data = parse_libsvm("+1 1:1.0\n-1 1:-1.0".as_bytes()).unwrap();
        let shards = partition_iid(&data, 1, 0).unwrap();
        let p = LogisticProblem::binary(data, shards).unwrap();
        let mut prev = f64::INFINITY;
        for scale in [1.0, 10.0, 100.0] {
            let loss = p.global_loss(&[scale]);
            assert!(loss < prev);
            prev = loss;
        }
        assert!(p.global_loss(&[100.0]) < 1e-15);
    }

    #[test]
    fn binary_gradient_matches_finite_differences() {
        let p = tiny_binary();
        let err = max_gradient_error(&p, 25, 1e-6, 7);
        assert!(err < 1e-5, "max relative gradient error {err}");
    }

    #[test]
    fn multinomial_gradient_matches_finite_differences() {
        let data = synth_classification(60, 6, 4, 21);
        let shards = partition_iid(&data, 3, 4).unwrap();
        let p = LogisticProblem::multinomial(data, shards).unwrap();
        let err = max_gradient_error(&p, 25, 1e-6, 8);
        assert!(err < 1e-5, "max relative gradient error {err}");
    }

    #[test]
    fn batch_eval_is_mean_of_samples() {
        let p = tiny_binary();
        let x: Vec<f64> = (0..p.dim()).map(|k| 0.3 * k as f64 - 0.4).collect();
        let batch = [0usize, 1, 0];
        let mut grad = vec![0.0; p.dim()];
        let loss = p.eval_batch(0, &x, &batch, &mut grad).unwrap();
        let mut want_loss = 0.0;
        let mut want_grad = vec![0.0; p.dim()];
        for &s in &batch {
            want_loss += p.eval_sample_into(0, s, &x, 1.0 / 3.0, &mut want_grad) / 3.0;
        }
        assert!((loss - want_loss).abs() <= 1e-12 * want_loss.abs().max(1.0));
        let diff: f64 = grad
            .iter()
            .zip(&want_grad)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        assert!(diff.sqrt() <= 1e-12 * norm_sq(&want_grad).sqrt().max(1.0));
    }

    #[test]
    fn smoothness_estimate_respects_analytic_bound() {
        let p = tiny_binary();
        let bound = p.analytic_smoothness_bound();
        let est = crate::problems::estimate_smoothness(&p, 500, 5);
        assert!(est <= bound * (1.0 + 1e-9), "estimate {est} above bound {bound}");
    }

    #[test]
    fn rejects_bad_shapes() {
        let data = synth_classification(30, 4, 3, 1);
        let shards = partition_iid(&data, 2, 0).unwrap();
        assert!(LogisticProblem::binary(data.clone(), shards.clone()).is_err());
        let p = LogisticProblem::multinomial(data, shards).unwrap();
        let x = vec![0.0; 3];
        let mut g = vec![0.0; p.dim()];
        assert!(matches!(
            p.eval_batch(0, &x, &[0], &mut g),
            Err(ProblemError::DimensionMismatch { .. })
        ));
        let x = vec![0.0; p.dim()];
        assert!(matches!(
            p.eval_batch(0, &x, &[], &mut g),
            Err(ProblemError::EmptyBatch)
        ));
    }

    #[test]
    fn sparse_dot_basics() {
        assert_eq!(sparse_dot(&[(0, 2.0), (2, -1.0)], &[1.0, 5.0, 3.0]), -1.0);
    }
}
