//! Synthetic datasets for interpolating and heterogeneous regimes.

use super::{ClientShard, DataError, Dataset, SparseRow};
use crate::rng::{stream_rng, stream_seed, StreamKind};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// One standard normal draw (Box-Muller). Kept local so no entropy source or
/// distribution crate is needed; determinism comes from the caller's stream.
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Parameters for [`synth_regression`].
#[derive(Debug, Clone)]
pub struct SynthRegression {
    /// Total number of samples across all clients.
    pub samples: usize,
    pub dim: usize,
    pub n_clients: usize,
    /// Standard deviation of per-sample label noise.
    pub noise: f64,
    /// Standard deviation of a per-client target shift. With more samples
    /// than dimensions this creates a strictly heterogeneous instance; with
    /// `dim > samples` any shift can be interpolated away.
    pub shift: f64,
    pub seed: u64,
}

/// Generate a least-squares dataset of `samples` gaussian feature rows with
/// targets `a.w* + shift_i + noise`, split contiguously into equal client
/// shards. `dim > samples` with zero noise and shift yields an interpolating
/// instance (zero optimal loss).
pub fn synth_regression(p: &SynthRegression) -> Result<(Dataset, Vec<ClientShard>), DataError> {
    if p.samples == 0 || p.dim == 0 {
        return Err(DataError::InvalidDataset(
            "samples and dim must be at least 1".into(),
        ));
    }
    if p.n_clients == 0 || p.n_clients > p.samples {
        return Err(DataError::InsufficientData {
            needed: p.n_clients.max(1),
            available: p.samples,
        });
    }
    let mut rng = stream_rng(p.seed, StreamKind::Synth, 0);
    let w_star: Vec<f64> = (0..p.dim).map(|_| gauss(&mut rng)).collect();
    let shifts: Vec<f64> = (0..p.n_clients).map(|_| p.shift * gauss(&mut rng)).collect();

    let base = p.samples / p.n_clients;
    let extra = p.samples % p.n_clients;

    let mut rows: Vec<SparseRow> = Vec::with_capacity(p.samples);
    let mut targets: Vec<f64> = Vec::with_capacity(p.samples);
    let mut shards = Vec::with_capacity(p.n_clients);
    let mut cursor = 0usize;
    for client in 0..p.n_clients {
        let size = base + usize::from(client < extra);
        let mut indices = Vec::with_capacity(size);
        for _ in 0..size {
            let feats: Vec<f64> = (0..p.dim).map(|_| gauss(&mut rng)).collect();
            let clean: f64 = feats.iter().zip(&w_star).map(|(a, w)| a * w).sum();
            let target = clean + shifts[client] + p.noise * gauss(&mut rng);
            rows.push((0..p.dim as u32).map(|j| (j, feats[j as usize])).collect());
            targets.push(target);
            indices.push(cursor);
            cursor += 1;
        }
        shards.push(ClientShard {
            client_id: client,
            indices,
            rng_seed: stream_seed(p.seed, StreamKind::ClientBatch, client as u64),
        });
    }
    let labels = vec![0usize; p.samples];
    let data = Dataset::new(rows, labels, p.dim, 1)?.with_targets(targets)?;
    Ok((data, shards))
}

/// Generate a `k`-class classification dataset with sparse binary-ish
/// features: each class activates feature `j` with its own probability, plus
/// a 2% label flip so the logistic optimum stays interior.
pub fn synth_classification(m: usize, dim: usize, k: usize, seed: u64) -> Dataset {
    assert!(m >= k && k >= 1 && dim >= 1, "degenerate synth request");
    let mut rng = stream_rng(seed, StreamKind::Synth, 1);
    // Per-class activation probabilities.
    let probs: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..dim).map(|_| 0.05 + 0.35 * rng.gen::<f64>()).collect())
        .collect();
    let mut rows: Vec<SparseRow> = Vec::with_capacity(m);
    let mut labels: Vec<usize> = Vec::with_capacity(m);
    for i in 0..m {
        // Round-robin class assignment keeps every class populated.
        let class = i % k;
        let row: SparseRow = (0..dim as u32)
            .filter(|&j| rng.gen::<f64>() < probs[class][j as usize])
            .map(|j| (j, 1.0))
            .collect();
        let label = if rng.gen::<f64>() < 0.02 {
            rng.gen_range(0..k)
        } else {
            class
        };
        rows.push(row);
        labels.push(label);
    }
    Dataset::new(rows, labels, dim, k).expect("synthetic dataset is structurally valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regression_reproducible() {
        let p = SynthRegression {
            samples: 40,
            dim: 10,
            n_clients: 4,
            noise: 0.3,
            shift: 0.5,
            seed: 11,
        };
        let (a, sa) = synth_regression(&p).unwrap();
        let (b, sb) = synth_regression(&p).unwrap();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn regression_shapes() {
        let p = SynthRegression {
            samples: 103,
            dim: 7,
            n_clients: 10,
            noise: 0.0,
            shift: 0.0,
            seed: 0,
        };
        let (data, shards) = synth_regression(&p).unwrap();
        assert_eq!(data.n_samples(), 103);
        assert!(data.has_targets());
        assert_eq!(shards.len(), 10);
        let total: usize = shards.iter().map(|s| s.len()).sum();
        assert_eq!(total, 103);
    }

    #[test]
    fn classification_classes_present() {
        let d = synth_classification(500, 20, 10, 9);
        let counts = d.class_counts();
        assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
    }
}
