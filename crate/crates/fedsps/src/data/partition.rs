//! Client partitioning: i.i.d. shuffle-split and the two-classes-per-client
//! non-i.i.d. split with equal shard sizes.

use super::{ClientShard, DataError, Dataset};
use crate::rng::{stream_rng, stream_seed, StreamKind};
use rand::seq::SliceRandom;

fn shard(client_id: usize, indices: Vec<usize>, seed: u64) -> ClientShard {
    ClientShard {
        client_id,
        indices,
        rng_seed: stream_seed(seed, StreamKind::ClientBatch, client_id as u64),
    }
}

/// Shuffle all samples and split them into `n` shards whose sizes differ by
/// at most one. Deterministic given `seed`.
pub fn partition_iid(data: &Dataset, n: usize, seed: u64) -> Result<Vec<ClientShard>, DataError> {
    if n == 0 {
        return Err(DataError::PartitionInfeasible("zero clients".into()));
    }
    let m = data.n_samples();
    if n > m {
        return Err(DataError::InsufficientData {
            needed: n,
            available: m,
        });
    }
    let mut indices: Vec<usize> = (0..m).collect();
    indices.shuffle(&mut stream_rng(seed, StreamKind::Partition, 0));

    let base = m / n;
    let extra = m % n;
    let mut shards = Vec::with_capacity(n);
    let mut cursor = 0;
    for client in 0..n {
        let size = base + usize::from(client < extra);
        let slice = indices[cursor..cursor + size].to_vec();
        cursor += size;
        shards.push(shard(client, slice, seed));
    }
    Ok(shards)
}

/// Assign each client exactly two classes: client `k` draws from classes
/// `(2k mod K, (2k+1) mod K)`. Every shard receives the same number of
/// samples per class slot; surplus samples of each class are dropped
/// deterministically after an in-class shuffle.
pub fn partition_noniid_two_class(
    data: &Dataset,
    n: usize,
    seed: u64,
) -> Result<Vec<ClientShard>, DataError> {
    if n == 0 {
        return Err(DataError::PartitionInfeasible("zero clients".into()));
    }
    let k = data.n_classes();
    if k < 2 {
        return Err(DataError::PartitionInfeasible(format!(
            "need at least 2 classes, dataset has {k}"
        )));
    }

    // Class slots in client order.
    let slots: Vec<(usize, usize)> = (0..n).map(|c| ((2 * c) % k, (2 * c + 1) % k)).collect();
    let mut uses = vec![0usize; k];
    for &(a, b) in &slots {
        uses[a] += 1;
        uses[b] += 1;
    }

    // Shuffled per-class index pools.
    let mut pools: Vec<Vec<usize>> = vec![Vec::new(); k];
    for i in 0..data.n_samples() {
        pools[data.label(i)].push(i);
    }
    for (c, pool) in pools.iter_mut().enumerate() {
        pool.shuffle(&mut stream_rng(seed, StreamKind::Partition, 1 + c as u64));
    }

    // Equal per-slot quota across all clients.
    let quota = (0..k)
        .filter(|&c| uses[c] > 0)
        .map(|c| pools[c].len() / uses[c])
        .min()
        .unwrap_or(0);
    if quota == 0 {
        let counts = data.class_counts();
        return Err(DataError::PartitionInfeasible(format!(
            "cannot give every client two classes with equal shard sizes: \
             class counts {counts:?}, per-class slot uses {uses:?}"
        )));
    }

    let mut cursors = vec![0usize; k];
    let mut take = |c: usize, cursors: &mut Vec<usize>| -> Vec<usize> {
        let start = cursors[c];
        cursors[c] += quota;
        pools[c][start..start + quota].to_vec()
    };
    let mut shards = Vec::with_capacity(n);
    for (client, &(a, b)) in slots.iter().enumerate() {
        let mut idx = take(a, &mut cursors);
        idx.extend(take(b, &mut cursors));
        shards.push(shard(client, idx, seed));
    }
    Ok(shards)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_classification;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn toy(m: usize, k: usize) -> Dataset {
        let rows = (0..m).map(|i| vec![(0u32, i as f64)]).collect();
        let labels = (0..m).map(|i| i % k).collect();
        Dataset::new(rows, labels, 1, k).unwrap()
    }

    #[test]
    fn iid_even_split() {
        let shards = partition_iid(&toy(100, 2), 10, 7).unwrap();
        assert_eq!(shards.len(), 10);
        assert!(shards.iter().all(|s| s.len() == 10));
    }

    #[test]
    fn iid_deterministic() {
        let a = partition_iid(&toy(53, 2), 7, 99).unwrap();
        let b = partition_iid(&toy(53, 2), 7, 99).unwrap();
        assert_eq!(a, b);
        let c = partition_iid(&toy(53, 2), 7, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn iid_insufficient_data() {
        assert!(matches!(
            partition_iid(&toy(5, 2), 6, 0),
            Err(DataError::InsufficientData { .. })
        ));
    }

    #[test]
    fn noniid_class_pairs_cycle() {
        let data = synth_classification(1000, 8, 10, 3);
        let shards = partition_noniid_two_class(&data, 10, 5).unwrap();
        for (c, s) in shards.iter().enumerate() {
            let classes: HashSet<usize> = s.indices.iter().map(|&i| data.label(i)).collect();
            let want: HashSet<usize> = [(2 * c) % 10, (2 * c + 1) % 10].into_iter().collect();
            assert_eq!(classes, want, "client {c}");
        }
        let sizes: HashSet<usize> = shards.iter().map(|s| s.len()).collect();
        assert_eq!(sizes.len(), 1, "all shards equally sized");
    }

    #[test]
    fn noniid_two_class_degenerate() {
        // K = 2: every client legally holds both classes, balanced halves.
        let data = toy(200, 2);
        let shards = partition_noniid_two_class(&data, 10, 1).unwrap();
        for s in &shards {
            let zeros = s.indices.iter().filter(|&&i| data.label(i) == 0).count();
            assert_eq!(zeros * 2, s.len());
        }
    }

    #[test]
    fn noniid_infeasible() {
        // One class has a single sample but is used by many slots.
        let mut labels: Vec<usize> = vec![0; 40];
        labels.extend(vec![1; 40]);
        labels.push(2);
        let rows = (0..labels.len()).map(|i| vec![(0u32, i as f64)]).collect();
        let data = Dataset::new(rows, labels, 1, 3).unwrap();
        let err = partition_noniid_two_class(&data, 9, 0).unwrap_err();
        assert!(matches!(err, DataError::PartitionInfeasible(_)), "{err}");
    }

    proptest! {
        /// Shards are pairwise disjoint and cover the whole index set.
        #[test]
        fn iid_disjoint_cover(m in 1usize..200, n in 1usize..20, seed in 0u64..100) {
            prop_assume!(n <= m);
            let data = toy(m, 2);
            let shards = partition_iid(&data, n, seed).unwrap();
            let mut seen = HashSet::new();
            for s in &shards {
                prop_assert!(!s.is_empty());
                for &i in &s.indices {
                    prop_assert!(seen.insert(i), "index {} duplicated", i);
                }
            }
            prop_assert_eq!(seen.len(), m);
            let max = shards.iter().map(|s| s.len()).max().unwrap();
            let min = shards.iter().map(|s| s.len()).min().unwrap();
            prop_assert!(max - min <= 1);
        }

        /// Non-i.i.d. shards: at most two label bins occupied, disjoint
        /// indices, equal sizes.
        #[test]
        fn noniid_two_bins(k in 2usize..11, n in 1usize..12, seed in 0u64..50) {
            let data = synth_classification(600, 6, k, seed ^ 0xabc);
            match partition_noniid_two_class(&data, n, seed) {
                Ok(shards) => {
                    let mut seen = HashSet::new();
                    let mut sizes = HashSet::new();
                    for s in &shards {
                        let classes: HashSet<usize> =
                            s.indices.iter().map(|&i| data.label(i)).collect();
                        prop_assert!(classes.len() <= 2);
                        prop_assert!(!s.is_empty());
                        sizes.insert(s.len());
                        for &i in &s.indices {
                            prop_assert!(seen.insert(i));
                        }
                    }
                    prop_assert_eq!(sizes.len(), 1);
                }
                Err(DataError::PartitionInfeasible(_)) => {}
                Err(other) => prop_assert!(false, "unexpected error {}", other),
            }
        }
    }
}
