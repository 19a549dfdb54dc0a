//! Run traces, result emission and the bound-verification harness.

mod emit;
mod verify;

pub mod suites;

pub use emit::{
    emit, parse_csv, parse_json, traces_to_csv, traces_to_json, EmitFormat, MetricsError,
};
pub use verify::{
    log_linear_fit, plateau_gap, verify_decsps_rate, verify_linear_rate,
    verify_theorem1_neighborhood, LogLinearFit,
};

use serde::{Deserialize, Serialize};

/// Metrics of one evaluated communication round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    /// Communication round index (0-based).
    pub round: usize,
    /// Iterations completed after this round, `(round + 1) * tau`.
    pub t: u64,
    /// Global full-batch loss at the averaged iterate.
    pub loss: f64,
    /// `f(avg x) - f*` when the optimum is known.
    pub gap: Option<f64>,
    /// `||avg x - x*||^2` when the optimum is known.
    pub dist_sq: Option<f64>,
    /// Consensus distance just before averaging: mean squared deviation of
    /// active-client iterates from their mean.
    pub r_t: f64,
    pub ss_inter_mean: f64,
    pub ss_inter_std: f64,
    pub ss_intra_mean: f64,
    pub ss_intra_std: f64,
    /// Clients sampled in this round.
    pub active_clients: Vec<usize>,
}

/// Stepsize statistics of one round. "Inter" looks across clients (mean and
/// spread of the per-client round means); "intra" looks within clients
/// (grand mean, and the average per-client spread across local steps).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepsizeStats {
    pub inter_mean: f64,
    pub inter_std: f64,
    pub intra_mean: f64,
    pub intra_std: f64,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn pop_std(xs: &[f64], m: f64) -> f64 {
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Aggregate the stepsizes emitted in one round, one inner vector per
/// active client.
pub fn stepsize_stats(per_client: &[Vec<f64>]) -> StepsizeStats {
    assert!(
        per_client.iter().all(|c| !c.is_empty()) && !per_client.is_empty(),
        "stats need at least one stepsize per client"
    );
    let client_means: Vec<f64> = per_client.iter().map(|c| mean(c)).collect();
    let inter_mean = mean(&client_means);
    let inter_std = pop_std(&client_means, inter_mean);
    let all: Vec<f64> = per_client.iter().flatten().copied().collect();
    let intra_mean = mean(&all);
    let intra_std = mean(
        &per_client
            .iter()
            .map(|c| pop_std(c, mean(c)))
            .collect::<Vec<f64>>(),
    );
    StepsizeStats {
        inter_mean,
        inter_std,
        intra_mean,
        intra_std,
    }
}

/// Outcome of one verification check against a theoretical bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Verdict {
    pub check: String,
    pub passed: bool,
    pub observed: f64,
    pub bound: f64,
    pub tolerance: f64,
}

impl Verdict {
    /// Upper-bound check: passes when `observed <= bound * (1 + tolerance)`.
    pub fn upper(check: impl Into<String>, observed: f64, bound: f64, tolerance: f64) -> Self {
        let passed = observed <= bound * (1.0 + tolerance) + f64::MIN_POSITIVE;
        Verdict {
            check: check.into(),
            passed,
            observed,
            bound,
            tolerance,
        }
    }

    /// Exact boolean check, rendered with observed 0/1 against bound 0.
    pub fn boolean(check: impl Into<String>, ok: bool) -> Self {
        Verdict {
            check: check.into(),
            passed: ok,
            observed: f64::from(u8::from(!ok)),
            bound: 0.0,
            tolerance: 0.0,
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<44} {:>6} observed {:>13.6e}  bound {:>13.6e}",
            self.check,
            if self.passed { "PASS" } else { "FAIL" },
            self.observed,
            self.bound,
        )
    }
}

/// Fixed-width table over all verdicts.
pub fn render_verdicts(verdicts: &[Verdict]) -> String {
    let mut out = String::new();
    for v in verdicts {
        out.push_str(&v.to_string());
        out.push('\n');
    }
    let failed = verdicts.iter().filter(|v| !v.passed).count();
    out.push_str(&format!(
        "{} checks, {} failed\n",
        verdicts.len(),
        failed
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stats_on_constant_stepsizes_are_degenerate() {
        let s = stepsize_stats(&[vec![0.5; 4], vec![0.5; 4]]);
        assert_eq!(s.inter_mean, 0.5);
        assert_eq!(s.inter_std, 0.0);
        assert_eq!(s.intra_mean, 0.5);
        assert_eq!(s.intra_std, 0.0);
    }

    #[test]
    fn stats_separate_between_and_within_variation() {
        // Client means 1 and 3 vary; within-client values do not.
        let s = stepsize_stats(&[vec![1.0, 1.0], vec![3.0, 3.0]]);
        assert_eq!(s.inter_mean, 2.0);
        assert_eq!(s.inter_std, 1.0);
        assert_eq!(s.intra_std, 0.0);
        // And the transpose case: within varies, between does not.
        let s = stepsize_stats(&[vec![1.0, 3.0], vec![1.0, 3.0]]);
        assert_eq!(s.inter_std, 0.0);
        assert_eq!(s.intra_std, 1.0);
    }

    #[test]
    fn verdict_upper_semantics() {
        assert!(Verdict::upper("x", 1.0, 1.0, 0.0).passed);
        assert!(Verdict::upper("x", 1.04, 1.0, 0.05).passed);
        assert!(!Verdict::upper("x", 1.06, 1.0, 0.05).passed);
    }
}
