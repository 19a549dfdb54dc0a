//! The federated training loop: local steps, communication rounds, client
//! sampling, and the four methods (FedAvg, FedSPS, FedDecSPS,
//! FedSPS-Global).
//!
//! Execution is round-synchronous. Sampled clients start the round from the
//! shared server iterate, run `tau` local steps on their own batch stream
//! and stepsize engine, and are then averaged in client-index order.
//! Clients inside a round are independent, so they may run in parallel (the
//! `parallel` feature); per-client RNG streams and the fixed reduction
//! order make traces bit-identical at any thread count. Between rounds the
//! averaged iterate is the physical model; the per-round trace also records
//! the consensus distance of the pre-averaging iterates.

use crate::metrics::{stepsize_stats, RoundTrace};
use crate::problems::{norm_sq, FedProblem, ParamVector, ProblemError};
use crate::rng::{stream_rng, stream_seed, StreamKind};
use crate::stepsize::{
    aggregate_global, sps_max, AggregationFormula, ClientStepStats, StepsizeConfig, StepsizeEngine,
    StepsizeError, StepsizeVariant,
};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid federation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Stepsize(#[from] StepsizeError),
    /// Loss blew past the divergence threshold or the iterate went
    /// non-finite. The trace gathered so far is retained.
    #[error("numerical divergence at round {round}, iteration {t}")]
    NumericalDivergence {
        round: usize,
        t: u64,
        partial: Box<RunOutput>,
    },
}

/// The four training methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    FedAvg,
    FedSps,
    FedDecSps,
    FedSpsGlobal,
}

impl Method {
    /// The stepsize variant a method's engines must be configured with.
    pub fn expected_variant(self) -> StepsizeVariant {
        match self {
            Method::FedAvg => StepsizeVariant::Constant,
            Method::FedSps | Method::FedSpsGlobal => StepsizeVariant::SpsMax,
            Method::FedDecSps => StepsizeVariant::FedDecSps,
        }
    }
}

/// Everything a run needs besides the problem itself.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FederationConfig {
    pub n_total: usize,
    /// Clients sampled per round.
    pub n_active: usize,
    /// Local steps per round.
    pub tau: usize,
    /// Communication rounds; total iterations T = rounds * tau.
    pub rounds: usize,
    pub method: Method,
    pub stepsize: StepsizeConfig,
    pub batch_size: usize,
    pub master_seed: u64,
    /// Rounds between trace evaluations (the final round is always traced).
    pub eval_every: usize,
    /// Initial iterate; zeros when absent.
    pub x0: Option<Vec<f64>>,
    /// Record the per-iteration audit quantities used by the theorem
    /// checks (full-batch client losses, consensus bounds). Costs one
    /// full-batch evaluation per client per local step.
    pub track_audit: bool,
    /// Aggregation formula for FedSPS-Global.
    pub global_formula: AggregationFormula,
    /// Abort threshold on the stochastic loss.
    pub divergence_loss: f64,
}

impl FederationConfig {
    pub fn new(
        method: Method,
        n_total: usize,
        tau: usize,
        rounds: usize,
        stepsize: StepsizeConfig,
    ) -> Self {
        FederationConfig {
            n_total,
            n_active: n_total,
            tau,
            rounds,
            method,
            stepsize,
            batch_size: 1,
            master_seed: 0,
            eval_every: 1,
            x0: None,
            track_audit: false,
            global_formula: AggregationFormula::A,
            divergence_loss: 1e12,
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        let err = |m: String| Err(RunError::InvalidConfig(m));
        if self.n_total == 0 || self.n_active == 0 || self.n_active > self.n_total {
            return err(format!(
                "need 1 <= n_active <= n_total, got {}/{}",
                self.n_active, self.n_total
            ));
        }
        if self.tau == 0 || self.rounds == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return err("tau, rounds, batch_size and eval_every must be >= 1".into());
        }
        self.stepsize.validate()?;
        let want = self.method.expected_variant();
        if self.stepsize.variant != want {
            return err(format!(
                "{:?} requires the {:?} stepsize variant, got {:?}",
                self.method, want, self.stepsize.variant
            ));
        }
        if !(self.divergence_loss > 0.0) {
            return err("divergence_loss must be positive".into());
        }
        Ok(())
    }
}

/// Per-round audit quantities for bound verification.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunAudit {
    /// Completed iterations T.
    pub iterations: u64,
    /// Sum over iterations and active clients of the full-batch client loss
    /// at the pre-step iterate, `sum_{t,i} f_i(x_t^i)`.
    pub sum_client_full_loss: f64,
    /// Number of terms in that sum.
    pub sum_terms: u64,
    /// One consensus record per round.
    pub consensus: Vec<ConsensusCheck>,
}

/// Consensus distance of a round against the Polyak-stepsize bound
/// `(tau/(n c)) sum_i sum_j gamma_j^i (F_i(x_j^i) - l_i*)` assembled from
/// the logged per-step quantities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsensusCheck {
    pub round: usize,
    pub r_t: f64,
    /// Absent for methods whose stepsizes carry no Polyak property.
    pub polyak_bound: Option<f64>,
}

/// What a run produces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunOutput {
    pub traces: Vec<RoundTrace>,
    /// Averaged iterate after the last completed round.
    pub final_average: Vec<f64>,
    /// The initial iterate.
    pub x0: Vec<f64>,
    pub audit: Option<RunAudit>,
}

/// Sample the active client set for a round: uniform without replacement,
/// `round(fraction * n_total)` clients (at least one), deterministic per
/// `(seed, round)`. The result is sorted.
pub fn sample_clients(round: usize, fraction: f64, n_total: usize, seed: u64) -> Vec<usize> {
    debug_assert!(fraction > 0.0 && fraction <= 1.0);
    let k = (((fraction * n_total as f64).round() as usize).max(1)).min(n_total);
    let mut idx: Vec<usize> = (0..n_total).collect();
    let mut rng = stream_rng(seed, StreamKind::Sampling, round as u64);
    for j in 0..k {
        let pick = rng.gen_range(j..n_total);
        idx.swap(j, pick);
    }
    let mut active = idx[..k].to_vec();
    active.sort_unstable();
    active
}

/// Draw a mini-batch of client-local sample indices, uniform with
/// replacement.
pub(crate) fn draw_batch(rng: &mut ChaCha8Rng, n_samples: usize, batch_size: usize) -> Vec<usize> {
    (0..batch_size).map(|_| rng.gen_range(0..n_samples)).collect()
}

/// Average iterates in the given (fixed) order.
pub(crate) fn average_in_order<'a, I>(iterates: I, count: usize, dim: usize) -> Vec<f64>
where
    I: Iterator<Item = &'a [f64]>,
{
    let mut sum = vec![0.0; dim];
    for x in iterates {
        for (s, v) in sum.iter_mut().zip(x) {
            *s += v;
        }
    }
    let n = count as f64;
    for s in &mut sum {
        *s /= n;
    }
    sum
}

struct ClientTask {
    rng: ChaCha8Rng,
    engine: StepsizeEngine,
}

struct RoundJob {
    client: usize,
    x: Vec<f64>,
    task: ClientTask,
}

struct RoundResult {
    client: usize,
    x: Vec<f64>,
    task: ClientTask,
    stepsizes: Vec<f64>,
    /// Sum over the round's steps of `gamma * (batch_loss - l*)`.
    polyak_gap_sum: f64,
    /// Sum over the round's steps of the pre-step full-batch client loss
    /// (audit mode only).
    full_loss_sum: f64,
    last_stats: Option<ClientStepStats>,
    diverged_at: Option<u64>,
}

fn run_client_round(
    job: RoundJob,
    problem: &dyn FedProblem,
    cfg: &FederationConfig,
    round: usize,
    global_gamma: Option<f64>,
) -> Result<RoundResult, RunError> {
    let RoundJob {
        client,
        mut x,
        mut task,
    } = job;
    let dim = problem.dim();
    let m = problem.client_samples(client);
    let ell = problem.lower_bound(client);
    let need_stats = cfg.method == Method::FedSpsGlobal;
    let need_grad_stats = need_stats && cfg.global_formula == AggregationFormula::C;

    let mut grad = vec![0.0; dim];
    let mut stepsizes = Vec::with_capacity(cfg.tau);
    let mut polyak_gap_sum = 0.0;
    let mut full_loss_sum = 0.0;
    let mut last_stats = None;
    let mut diverged_at = None;

    for s in 0..cfg.tau {
        let t = (round * cfg.tau + s) as u64;
        if cfg.track_audit {
            full_loss_sum += problem.client_full_loss(client, &x);
        }
        let batch = draw_batch(&mut task.rng, m, cfg.batch_size);
        let loss = problem.eval_batch(client, &x, &batch, &mut grad)?;
        let grad_sq = norm_sq(&grad);
        let gamma = match cfg.method {
            Method::FedSpsGlobal => {
                if loss < ell {
                    return Err(StepsizeError::LowerBoundViolated {
                        loss,
                        ell_star: ell,
                    }
                    .into());
                }
                global_gamma.expect("global stepsize initialized before round 0")
            }
            _ => task.engine.step(t, loss, grad_sq)?,
        };
        for (xk, gk) in x.iter_mut().zip(&grad) {
            *xk -= gamma * gk;
        }
        stepsizes.push(gamma);
        polyak_gap_sum += gamma * (loss - ell);
        if need_stats && s + 1 == cfg.tau {
            last_stats = Some(ClientStepStats {
                loss,
                grad_sq_norm: grad_sq,
                grad: need_grad_stats.then(|| grad.clone()),
            });
        }
        if loss > cfg.divergence_loss || x.iter().any(|v| !v.is_finite()) {
            diverged_at = Some(t);
            break;
        }
    }
    Ok(RoundResult {
        client,
        x,
        task,
        stepsizes,
        polyak_gap_sum,
        full_loss_sum,
        last_stats,
        diverged_at,
    })
}

#[cfg(feature = "parallel")]
fn map_jobs<F>(jobs: Vec<RoundJob>, f: F) -> Vec<Result<RoundResult, RunError>>
where
    F: Fn(RoundJob) -> Result<RoundResult, RunError> + Sync,
{
    use rayon::prelude::*;
    jobs.into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_jobs<F>(jobs: Vec<RoundJob>, f: F) -> Vec<Result<RoundResult, RunError>>
where
    F: Fn(RoundJob) -> Result<RoundResult, RunError> + Sync,
{
    jobs.into_iter().map(f).collect()
}

/// Execute a federated run and return its trace.
pub fn run(cfg: &FederationConfig, problem: &dyn FedProblem) -> Result<RunOutput, RunError> {
    cfg.validate()?;
    if cfg.n_total != problem.n_clients() {
        return Err(RunError::InvalidConfig(format!(
            "config has {} clients, problem has {}",
            cfg.n_total,
            problem.n_clients()
        )));
    }
    let dim = problem.dim();
    let x0 = match &cfg.x0 {
        Some(x) if x.len() != dim => {
            return Err(RunError::InvalidConfig(format!(
                "x0 has dimension {}, problem has {}",
                x.len(),
                dim
            )));
        }
        Some(x) => x.clone(),
        None => vec![0.0; dim],
    };
    let x_star = problem.optimum().map(<[f64]>::to_vec);
    let f_star = x_star.as_ref().map(|xs| problem.global_loss(xs));
    let fraction = cfg.n_active as f64 / cfg.n_total as f64;

    let mut tasks: Vec<Option<ClientTask>> = (0..cfg.n_total)
        .map(|i| {
            Ok(Some(ClientTask {
                rng: ChaCha8Rng::seed_from_u64(stream_seed(
                    cfg.master_seed,
                    StreamKind::ClientBatch,
                    problem.client_seed(i),
                )),
                engine: StepsizeEngine::new(cfg.stepsize.clone())?,
            }))
        })
        .collect::<Result<_, StepsizeError>>()?;

    let mut server = ParamVector(x0.clone());

    // FedSPS-Global bootstraps its shared stepsize from the first sampled
    // client's own first local stepsize; the peek clones that client's
    // stream so the actual first step sees the same batch.
    let mut global_gamma: Option<f64> = if cfg.method == Method::FedSpsGlobal {
        let first_active = sample_clients(0, fraction, cfg.n_total, cfg.master_seed);
        let j0 = first_active[0];
        let mut peek_rng = tasks[j0].as_ref().expect("task present").rng.clone();
        let batch = draw_batch(&mut peek_rng, problem.client_samples(j0), cfg.batch_size);
        let mut grad = vec![0.0; dim];
        let loss = problem.eval_batch(j0, server.as_slice(), &batch, &mut grad)?;
        Some(sps_max(loss, norm_sq(&grad), &cfg.stepsize)?)
    } else {
        None
    };

    let mut traces: Vec<RoundTrace> = Vec::new();
    let mut audit = cfg.track_audit.then(RunAudit::default);

    for round in 0..cfg.rounds {
        let active = sample_clients(round, fraction, cfg.n_total, cfg.master_seed);
        let jobs: Vec<RoundJob> = active
            .iter()
            .map(|&i| RoundJob {
                client: i,
                x: server.as_slice().to_vec(),
                task: tasks[i].take().expect("client task not checked out"),
            })
            .collect();

        let frozen_gamma = global_gamma;
        let results = map_jobs(jobs, |job| {
            run_client_round(job, problem, cfg, round, frozen_gamma)
        });
        let mut outs = Vec::with_capacity(results.len());
        for r in results {
            outs.push(r?);
        }

        // Consensus distance over the pre-averaging iterates.
        let k = outs.len();
        let xbar = average_in_order(outs.iter().map(|o| o.x.as_slice()), k, dim);
        let r_t = outs
            .iter()
            .map(|o| ParamVector(o.x.clone()).dist_sq(&xbar))
            .sum::<f64>()
            / k as f64;

        if let Some(a) = &mut audit {
            a.iterations = ((round + 1) * cfg.tau) as u64;
            for o in &outs {
                a.sum_client_full_loss += o.full_loss_sum;
                a.sum_terms += o.stepsizes.len() as u64;
            }
            let polyak_bound = (cfg.stepsize.variant == StepsizeVariant::SpsMax).then(|| {
                let total: f64 = outs.iter().map(|o| o.polyak_gap_sum).sum();
                cfg.tau as f64 / (k as f64 * cfg.stepsize.c) * total
            });
            a.consensus.push(ConsensusCheck {
                round,
                r_t,
                polyak_bound,
            });
        }

        // Divergence aborts with the partial trace retained.
        if let Some(t) = outs.iter().filter_map(|o| o.diverged_at).min() {
            let partial = RunOutput {
                traces,
                final_average: server.0,
                x0,
                audit,
            };
            return Err(RunError::NumericalDivergence {
                round,
                t,
                partial: Box::new(partial),
            });
        }

        // Communication: broadcast the average.
        server = ParamVector(xbar);

        // FedSPS-Global: the next round's stepsize aggregates this round's
        // last-step statistics (stale by one round).
        if cfg.method == Method::FedSpsGlobal {
            let stats: Vec<ClientStepStats> = outs
                .iter()
                .map(|o| o.last_stats.clone().expect("stats recorded"))
                .collect();
            global_gamma = Some(aggregate_global(
                &stats,
                &cfg.stepsize,
                cfg.global_formula,
            )?);
        }

        if (round + 1) % cfg.eval_every == 0 || round + 1 == cfg.rounds {
            let loss = problem.global_loss(server.as_slice());
            let stats = stepsize_stats(
                &outs
                    .iter()
                    .map(|o| o.stepsizes.clone())
                    .collect::<Vec<_>>(),
            );
            let dist_sq = x_star.as_ref().map(|xs| server.dist_sq(xs));
            let gap = f_star.map(|fs| loss - fs);
            traces.push(RoundTrace {
                round,
                t: ((round + 1) * cfg.tau) as u64,
                loss,
                gap,
                dist_sq,
                r_t,
                ss_inter_mean: stats.inter_mean,
                ss_inter_std: stats.inter_std,
                ss_intra_mean: stats.intra_mean,
                ss_intra_std: stats.intra_std,
                active_clients: active.clone(),
            });
        }

        for o in outs {
            tasks[o.client] = Some(o.task);
        }
    }

    Ok(RunOutput {
        traces,
        final_average: server.0,
        x0,
        audit,
    })
}

/// Sequential capped-Polyak SGD on client 0, the equivalence oracle for
/// single-client single-local-step federated runs. Returns the iterate
/// after every step.
pub fn sequential_sps_reference(
    problem: &dyn FedProblem,
    stepsize: &StepsizeConfig,
    iterations: usize,
    batch_size: usize,
    master_seed: u64,
) -> Result<Vec<Vec<f64>>, RunError> {
    let dim = problem.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(
        master_seed,
        StreamKind::ClientBatch,
        problem.client_seed(0),
    ));
    let m = problem.client_samples(0);
    let mut x = vec![0.0; dim];
    let mut grad = vec![0.0; dim];
    let mut snapshots = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let batch = draw_batch(&mut rng, m, batch_size);
        let loss = problem.eval_batch(0, &x, &batch, &mut grad)?;
        let gamma = sps_max(loss, norm_sq(&grad), stepsize)?;
        for (xk, gk) in x.iter_mut().zip(&grad) {
            *xk -= gamma * gk;
        }
        snapshots.push(x.clone());
    }
    Ok(snapshots)
}
