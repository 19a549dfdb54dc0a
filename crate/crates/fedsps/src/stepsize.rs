//! Stepsize rules for federated training.
//!
//! Every rule is a pure function of its inputs and (where the rule is
//! sequential) an explicit state value, so engines can be replayed and
//! compared bit-for-bit. The rules:
//!
//! - [`sps_max`]: capped stochastic Polyak stepsize
//!   `min{(loss - l*)/(c ||g||^2), gamma_b}`, used per client and per local
//!   step by FedSPS.
//! - [`feddecsps`]: decreasing variant
//!   `(1/c_t) min{(loss - l*)/||g||^2, c_{t-1} gamma_{t-1}}` with
//!   `c_t = c0 sqrt(t+1)`; emitted stepsizes are non-increasing.
//! - [`aggregate_global`]: the three ways of collapsing per-client statistics
//!   into one shared stepsize (mean of locals, pooled ratio, pooled ratio
//!   with the averaged gradient).
//! - [`smoothed_cap`]: iteration-dependent cap growth by `2^(|B|/m)`.
//!
//! A zero gradient together with a zero loss gap means the sample sits at its
//! own minimizer (legal under interpolation) and yields the cap; a zero
//! gradient with a positive gap means the loss oracle is inconsistent and is
//! an error.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Below this threshold a squared gradient norm (or loss gap) is treated as
/// exactly zero when deciding whether the Polyak ratio is degenerate.
pub const DIVISION_GUARD: f64 = 1e-30;

/// Relative tolerance for the fundamental inequality diagnostic; headroom
/// for double-precision arithmetic, nothing more.
pub const INEQUALITY_REL_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum StepsizeError {
    /// The observed stochastic loss undercut the configured lower bound.
    #[error("stochastic loss {loss} is below the lower bound {ell_star}")]
    LowerBoundViolated { loss: f64, ell_star: f64 },
    /// Zero gradient with a positive loss gap: the oracle claims we are not
    /// at a minimizer yet offers no descent direction.
    #[error("zero gradient with positive loss gap {gap}")]
    DegenerateGradient { gap: f64 },
    #[error("cannot aggregate an empty set of client statistics")]
    EmptyAggregation,
    #[error("aggregation formula C requires raw gradient vectors")]
    MissingGradient,
    #[error("invalid stepsize configuration: {0}")]
    InvalidConfig(String),
}

/// Which stepsize rule an engine applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepsizeVariant {
    /// Fixed stepsize `gamma_b` (the FedAvg baseline).
    Constant,
    /// Capped stochastic Polyak stepsize.
    SpsMax,
    /// Decreasing Polyak stepsize with scale sequence `c_t`.
    FedDecSps,
}

/// How the stepsize upper bound evolves over iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapSchedule {
    /// The cap stays at `gamma_b`.
    Fixed,
    /// The cap starts at 1 and is multiplied by `2^(batch_size/client_samples)`
    /// after every emission, so it doubles once per local epoch.
    Smoothed {
        batch_size: usize,
        client_samples: usize,
    },
}

/// Parameters shared by all stepsize rules.
///
/// `c` scales the Polyak ratio, `gamma_b` caps it, `ell_star` is the lower
/// bound on all stochastic losses of the client (zero for the non-negative
/// losses built into this crate), and `c0` seeds the decreasing sequence
/// `c_t = c0 sqrt(t+1)` of FedDecSPS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepsizeConfig {
    pub variant: StepsizeVariant,
    pub c: f64,
    pub gamma_b: f64,
    pub ell_star: f64,
    pub c0: f64,
    pub cap_schedule: CapSchedule,
}

impl StepsizeConfig {
    /// Plain FedSPS configuration with the given scale and cap.
    pub fn sps_max(c: f64, gamma_b: f64) -> Self {
        StepsizeConfig {
            variant: StepsizeVariant::SpsMax,
            c,
            gamma_b,
            ell_star: 0.0,
            c0: 0.5,
            cap_schedule: CapSchedule::Fixed,
        }
    }

    /// Constant-stepsize configuration (FedAvg with stepsize `gamma_b`).
    pub fn constant(gamma_b: f64) -> Self {
        StepsizeConfig {
            variant: StepsizeVariant::Constant,
            c: 0.5,
            gamma_b,
            ell_star: 0.0,
            c0: 0.5,
            cap_schedule: CapSchedule::Fixed,
        }
    }

    /// FedDecSPS configuration with `c_t = c0 sqrt(t+1)`.
    pub fn feddecsps(c0: f64, gamma_b: f64) -> Self {
        StepsizeConfig {
            variant: StepsizeVariant::FedDecSps,
            c: c0,
            gamma_b,
            ell_star: 0.0,
            c0,
            cap_schedule: CapSchedule::Fixed,
        }
    }

    /// FedDecSPS with the schedule used by the asymptotic-rate analysis,
    /// `c_t = 2 tau^2 sqrt(t+1)`.
    pub fn feddecsps_theory(tau: usize, gamma_b: f64) -> Self {
        Self::feddecsps(2.0 * (tau * tau) as f64, gamma_b)
    }

    /// The scale sequence value `c_t = c0 sqrt(t+1)`.
    pub fn c_t(&self, t: u64) -> f64 {
        self.c0 * ((t + 1) as f64).sqrt()
    }

    pub fn validate(&self) -> Result<(), StepsizeError> {
        let err = |m: String| Err(StepsizeError::InvalidConfig(m));
        if !(self.c > 0.0) {
            return err(format!("c must be positive, got {}", self.c));
        }
        if !(self.gamma_b > 0.0) {
            return err(format!("gamma_b must be positive, got {}", self.gamma_b));
        }
        if !(self.c0 > 0.0) {
            return err(format!("c0 must be positive, got {}", self.c0));
        }
        if !self.ell_star.is_finite() {
            return err(format!("ell_star must be finite, got {}", self.ell_star));
        }
        if let CapSchedule::Smoothed {
            batch_size,
            client_samples,
        } = self.cap_schedule
        {
            if batch_size < 1 || client_samples < batch_size {
                return err(format!(
                    "smoothed cap needs 1 <= batch_size <= client_samples, got {batch_size}/{client_samples}"
                ));
            }
            if self.variant == StepsizeVariant::FedDecSps {
                return err("smoothed cap is only defined for the sps_max variant".into());
            }
        }
        Ok(())
    }
}

/// Mutable per-client state carried between emissions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepsizeState {
    /// Global iteration index of the next emission.
    pub step_index: u64,
    /// Last emitted stepsize; initialized to `gamma_b` (`gamma_{-1} = gamma_b`).
    pub prev_gamma: f64,
    /// Scale value at the previous emission; initialized to `c0` (`c_{-1} = c0`).
    pub prev_ct: f64,
    /// Current stepsize upper bound (`gamma_b`, or the smoothed cap value).
    pub current_cap: f64,
}

impl StepsizeState {
    pub fn initial(cfg: &StepsizeConfig) -> Self {
        let current_cap = match cfg.cap_schedule {
            CapSchedule::Fixed => cfg.gamma_b,
            // The smoothed schedule starts from cap 1 regardless of gamma_b.
            CapSchedule::Smoothed { .. } => 1.0,
        };
        StepsizeState {
            step_index: 0,
            prev_gamma: cfg.gamma_b,
            prev_ct: cfg.c0,
            current_cap,
        }
    }
}

fn check_gap(loss: f64, ell_star: f64) -> Result<f64, StepsizeError> {
    let gap = loss - ell_star;
    if gap < 0.0 {
        return Err(StepsizeError::LowerBoundViolated { loss, ell_star });
    }
    Ok(gap)
}

fn sps_max_with_cap(
    loss: f64,
    grad_sq_norm: f64,
    cfg: &StepsizeConfig,
    cap: f64,
) -> Result<f64, StepsizeError> {
    let gap = check_gap(loss, cfg.ell_star)?;
    if grad_sq_norm < DIVISION_GUARD {
        if gap < DIVISION_GUARD {
            // Exact minimizer of the sample: the ratio is +inf, the min is the cap.
            return Ok(cap);
        }
        return Err(StepsizeError::DegenerateGradient { gap });
    }
    Ok((gap / (cfg.c * grad_sq_norm)).min(cap))
}

/// Capped stochastic Polyak stepsize `min{(loss - l*)/(c ||g||^2), gamma_b}`.
pub fn sps_max(loss: f64, grad_sq_norm: f64, cfg: &StepsizeConfig) -> Result<f64, StepsizeError> {
    sps_max_with_cap(loss, grad_sq_norm, cfg, cfg.gamma_b)
}

/// Decreasing Polyak stepsize
/// `gamma_t = (1/c_t) min{(loss - l*)/||g||^2, c_{t-1} gamma_{t-1}}`
/// with `c_t = c0 sqrt(t+1)` and `t = state.step_index`.
///
/// Returns the stepsize together with the advanced state; the emitted
/// sequence is non-increasing for any valid inputs.
pub fn feddecsps(
    loss: f64,
    grad_sq_norm: f64,
    cfg: &StepsizeConfig,
    state: &StepsizeState,
) -> Result<(f64, StepsizeState), StepsizeError> {
    let t = state.step_index;
    let c_t = cfg.c_t(t);
    let bound = state.prev_ct * state.prev_gamma;
    let gap = check_gap(loss, cfg.ell_star)?;
    let raw = if grad_sq_norm < DIVISION_GUARD {
        if gap < DIVISION_GUARD {
            bound
        } else {
            return Err(StepsizeError::DegenerateGradient { gap });
        }
    } else {
        (gap / grad_sq_norm).min(bound)
    };
    let gamma = raw / c_t;
    let next = StepsizeState {
        step_index: t + 1,
        prev_gamma: gamma,
        prev_ct: c_t,
        current_cap: state.current_cap,
    };
    Ok((gamma, next))
}

/// Grow the smoothed cap by `2^(batch_size/client_samples)` and return the
/// new value.
pub fn smoothed_cap(
    state: &mut StepsizeState,
    batch_size: usize,
    client_samples: usize,
) -> Result<f64, StepsizeError> {
    if batch_size < 1 || client_samples < batch_size {
        return Err(StepsizeError::InvalidConfig(format!(
            "smoothed cap needs 1 <= batch_size <= client_samples, got {batch_size}/{client_samples}"
        )));
    }
    state.current_cap *= 2f64.powf(batch_size as f64 / client_samples as f64);
    Ok(state.current_cap)
}

/// Diagnostic: does an emitted stepsize satisfy
/// `gamma^2 ||g||^2 <= (gamma/c)(loss - l*)` up to relative tolerance?
/// Holds for every stepsize produced by [`sps_max`].
pub fn fundamental_inequality_check(
    gamma: f64,
    loss: f64,
    grad_sq_norm: f64,
    cfg: &StepsizeConfig,
) -> bool {
    let lhs = gamma * gamma * grad_sq_norm;
    let rhs = (gamma / cfg.c) * (loss - cfg.ell_star);
    lhs <= rhs * (1.0 + INEQUALITY_REL_TOL)
}

/// Last-step statistics one client reports for global stepsize aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientStepStats {
    pub loss: f64,
    pub grad_sq_norm: f64,
    /// Raw gradient vector; only needed by formula C.
    pub grad: Option<Vec<f64>>,
}

impl ClientStepStats {
    pub fn new(loss: f64, grad_sq_norm: f64) -> Self {
        ClientStepStats {
            loss,
            grad_sq_norm,
            grad: None,
        }
    }
}

/// The three global aggregation formulas.
///
/// A: mean of the per-client capped stepsizes. B: pooled ratio
/// `min{mean gap / (c mean ||g||^2), gamma_b}`. C: like B but with the
/// squared norm of the averaged gradient in the denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AggregationFormula {
    A,
    B,
    C,
}

/// Collapse per-client statistics into one shared stepsize.
pub fn aggregate_global(
    stats: &[ClientStepStats],
    cfg: &StepsizeConfig,
    formula: AggregationFormula,
) -> Result<f64, StepsizeError> {
    if stats.is_empty() {
        return Err(StepsizeError::EmptyAggregation);
    }
    let n = stats.len() as f64;
    match formula {
        AggregationFormula::A => {
            let mut sum = 0.0;
            for s in stats {
                sum += sps_max(s.loss, s.grad_sq_norm, cfg)?;
            }
            Ok(sum / n)
        }
        AggregationFormula::B => {
            let mut gap_sum = 0.0;
            let mut gsq_sum = 0.0;
            for s in stats {
                gap_sum += check_gap(s.loss, cfg.ell_star)?;
                gsq_sum += s.grad_sq_norm;
            }
            pooled_ratio(gap_sum / n, gsq_sum / n, cfg)
        }
        AggregationFormula::C => {
            let mut gap_sum = 0.0;
            let mut mean_grad: Option<Vec<f64>> = None;
            for s in stats {
                gap_sum += check_gap(s.loss, cfg.ell_star)?;
                let g = s.grad.as_deref().ok_or(StepsizeError::MissingGradient)?;
                match &mut mean_grad {
                    None => mean_grad = Some(g.to_vec()),
                    Some(acc) => {
                        if acc.len() != g.len() {
                            return Err(StepsizeError::InvalidConfig(format!(
                                "gradient dimensions disagree: {} vs {}",
                                acc.len(),
                                g.len()
                            )));
                        }
                        for (a, b) in acc.iter_mut().zip(g) {
                            *a += b;
                        }
                    }
                }
            }
            let mean_grad = mean_grad.expect("stats nonempty");
            let mean_gsq: f64 = mean_grad.iter().map(|v| (v / n) * (v / n)).sum();
            pooled_ratio(gap_sum / n, mean_gsq, cfg)
        }
    }
}

fn pooled_ratio(mean_gap: f64, mean_gsq: f64, cfg: &StepsizeConfig) -> Result<f64, StepsizeError> {
    if mean_gsq < DIVISION_GUARD {
        if mean_gap < DIVISION_GUARD {
            return Ok(cfg.gamma_b);
        }
        return Err(StepsizeError::DegenerateGradient { gap: mean_gap });
    }
    Ok((mean_gap / (cfg.c * mean_gsq)).min(cfg.gamma_b))
}

/// Per-client stepsize engine: one rule, one state, deterministic emissions.
///
/// `step(t, loss, grad_sq_norm)` emits the stepsize for global iteration `t`.
/// Engines of inactive clients are simply not stepped, which freezes their
/// state until the client is sampled again.
#[derive(Debug, Clone)]
pub struct StepsizeEngine {
    cfg: StepsizeConfig,
    state: StepsizeState,
}

impl StepsizeEngine {
    pub fn new(cfg: StepsizeConfig) -> Result<Self, StepsizeError> {
        cfg.validate()?;
        let state = StepsizeState::initial(&cfg);
        Ok(StepsizeEngine { cfg, state })
    }

    pub fn config(&self) -> &StepsizeConfig {
        &self.cfg
    }

    pub fn state(&self) -> &StepsizeState {
        &self.state
    }

    /// Emit the stepsize for global iteration `t` given the freshly observed
    /// stochastic loss and squared gradient norm.
    pub fn step(&mut self, t: u64, loss: f64, grad_sq_norm: f64) -> Result<f64, StepsizeError> {
        // The lower bound is checked for every variant, even the constant
        // one, so an invalid ell_star surfaces no matter the method.
        check_gap(loss, self.cfg.ell_star)?;
        match self.cfg.variant {
            StepsizeVariant::Constant => {
                self.state.step_index = t + 1;
                self.state.prev_gamma = self.cfg.gamma_b;
                Ok(self.cfg.gamma_b)
            }
            StepsizeVariant::SpsMax => {
                let cap = self.state.current_cap;
                let gamma = sps_max_with_cap(loss, grad_sq_norm, &self.cfg, cap)?;
                if let CapSchedule::Smoothed {
                    batch_size,
                    client_samples,
                } = self.cfg.cap_schedule
                {
                    smoothed_cap(&mut self.state, batch_size, client_samples)?;
                }
                self.state.step_index = t + 1;
                self.state.prev_gamma = gamma;
                Ok(gamma)
            }
            StepsizeVariant::FedDecSps => {
                self.state.step_index = t;
                let (gamma, next) = feddecsps(loss, grad_sq_norm, &self.cfg, &self.state)?;
                self.state = next;
                Ok(gamma)
            }
        }
    }
}
