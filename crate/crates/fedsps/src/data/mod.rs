//! Datasets, client shards, parsing and partitioning.
//!
//! Features are stored as sparse rows end to end; labels are class ids
//! remapped to `0..K`. Regression targets, when present, live in a separate
//! real-valued vector so classification and regression problems share one
//! container.

mod libsvm;
mod partition;
mod synth;

pub use libsvm::{parse_libsvm, parse_libsvm_file, serialize_libsvm};
pub use partition::{partition_iid, partition_noniid_two_class};
pub use synth::{synth_classification, synth_regression, SynthRegression};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("parse error at line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("not enough samples: need at least {needed}, have {available}")]
    InsufficientData { needed: usize, available: usize },
    #[error("partition infeasible: {0}")]
    PartitionInfeasible(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// One sample's features: `(column, value)` pairs with strictly increasing
/// 0-based column indices.
pub type SparseRow = Vec<(u32, f64)>;

/// An immutable in-memory dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    rows: Vec<SparseRow>,
    labels: Vec<usize>,
    targets: Option<Vec<f64>>,
    dim: usize,
    n_classes: usize,
}

impl Dataset {
    /// Build a classification dataset, validating all structural invariants.
    pub fn new(
        rows: Vec<SparseRow>,
        labels: Vec<usize>,
        dim: usize,
        n_classes: usize,
    ) -> Result<Self, DataError> {
        if rows.is_empty() {
            return Err(DataError::InvalidDataset("dataset has no samples".into()));
        }
        if rows.len() != labels.len() {
            return Err(DataError::InvalidDataset(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            let mut prev: Option<u32> = None;
            for &(idx, val) in row {
                if idx as usize >= dim {
                    return Err(DataError::InvalidDataset(format!(
                        "sample {i}: feature index {idx} out of range (dim {dim})"
                    )));
                }
                if !val.is_finite() {
                    return Err(DataError::InvalidDataset(format!(
                        "sample {i}: non-finite feature value"
                    )));
                }
                if let Some(p) = prev {
                    if idx <= p {
                        return Err(DataError::InvalidDataset(format!(
                            "sample {i}: feature indices not strictly increasing"
                        )));
                    }
                }
                prev = Some(idx);
            }
        }
        for (i, &l) in labels.iter().enumerate() {
            if l >= n_classes {
                return Err(DataError::InvalidDataset(format!(
                    "sample {i}: label {l} out of range (classes {n_classes})"
                )));
            }
        }
        Ok(Dataset {
            rows,
            labels,
            targets: None,
            dim,
            n_classes,
        })
    }

    /// Attach real-valued regression targets (one per sample).
    pub fn with_targets(mut self, targets: Vec<f64>) -> Result<Self, DataError> {
        if targets.len() != self.rows.len() {
            return Err(DataError::InvalidDataset(format!(
                "{} targets for {} samples",
                targets.len(),
                self.rows.len()
            )));
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(DataError::InvalidDataset("non-finite target".into()));
        }
        self.targets = Some(targets);
        Ok(self)
    }

    pub fn n_samples(&self) -> usize {
        self.rows.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn row(&self, i: usize) -> &[(u32, f64)] {
        &self.rows[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn target(&self, i: usize) -> Option<f64> {
        self.targets.as_ref().map(|t| t[i])
    }

    pub fn has_targets(&self) -> bool {
        self.targets.is_some()
    }

    /// Samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Squared Euclidean norm of a row.
    pub fn row_sq_norm(&self, i: usize) -> f64 {
        self.rows[i].iter().map(|&(_, v)| v * v).sum()
    }
}

/// One client's slice of a dataset: disjoint sample indices plus the seed of
/// its private batch-draw stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientShard {
    pub client_id: usize,
    pub indices: Vec<usize>,
    pub rng_seed: u64,
}

impl ClientShard {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}
