//! Federated optimization at desk scale with locally adaptive stochastic
//! Polyak stepsizes.
//!
//! The crate simulates round-synchronous federated training (local SGD with
//! periodic averaging) where every client picks its own stepsize from local
//! loss and gradient statistics. Four methods are provided: constant-stepsize
//! FedAvg, FedSPS (per-client capped Polyak stepsizes), FedDecSPS (decreasing
//! scale sequence, exact convergence without interpolation) and FedSPS-Global
//! (one stale aggregated stepsize per round). Everything is deterministic
//! given a master seed; runs repeated on one or many threads produce
//! bit-identical traces.
//!
//! Module map:
//! - [`stepsize`]: the stepsize rules themselves, pure and per-client.
//! - [`problems`]: convex loss oracles (logistic, least squares, quadratics)
//!   plus heterogeneity measurement.
//! - [`data`]: LIBSVM parsing, synthetic data, client partitioning.
//! - [`fedsim`]: the training loop, client sampling, sequential reference.
//! - [`metrics`]: round traces, CSV/JSON emission, bound-verification
//!   harness.

pub mod data;
pub mod fedsim;
pub mod metrics;
pub mod problems;
pub mod rng;
pub mod stepsize;
