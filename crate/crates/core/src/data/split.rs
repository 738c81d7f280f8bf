use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Epoch;
use crate::error::{bail, Result};

/// Disjoint train/test index lists over an epoch collection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    pub seed: u64,
}

/// Largest-remainder allocation of `round(frac * total)` items across
/// classes. Ties in the remainder go to the lower class id.
pub fn stratified_counts(class_counts: &[usize], frac: f64) -> Vec<usize> {
    let total: usize = class_counts.iter().sum();
    let target = (frac * total as f64).round() as usize;
    let ideal: Vec<f64> = class_counts.iter().map(|&n| frac * n as f64).collect();
    let mut counts: Vec<usize> = ideal.iter().map(|v| v.floor() as usize).collect();
    let mut order: Vec<usize> = (0..class_counts.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = ideal[a] - ideal[a].floor();
        let rb = ideal[b] - ideal[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    let mut missing = target.saturating_sub(counts.iter().sum());
    for &c in order.iter().cycle().take(order.len() * 2) {
        if missing == 0 {
            break;
        }
        if counts[c] < class_counts[c] {
            counts[c] += 1;
            missing -= 1;
        }
    }
    counts
}

/// Stratified, seeded train/test split.
pub fn split_dataset(epochs: &[Epoch], train_frac: f64, seed: u64) -> Result<DatasetSplit> {
    let labels: Vec<usize> = epochs.iter().map(|e| e.label).collect();
    split_labels(&labels, train_frac, seed)
}

/// [`split_dataset`] over bare labels.
pub fn split_labels(labels: &[usize], train_frac: f64, seed: u64) -> Result<DatasetSplit> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        bail!(InvalidArgument, "train fraction must be in (0, 1), got {train_frac}");
    }
    let n_classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for (c, members) in by_class.iter().enumerate() {
        if !members.is_empty() && members.len() < 2 {
            bail!(InvalidArgument, "class {c} has {} epoch(s), need at least 2", members.len());
        }
    }
    let sizes: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let counts = stratified_counts(&sizes, train_frac);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (members, &n_train) in by_class.iter_mut().zip(&counts) {
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(DatasetSplit {
        train_indices: train,
        test_indices: test,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn labels(per_class: &[usize]) -> Vec<usize> {
        per_class
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect()
    }

    #[test]
    fn ten_epochs_two_classes() {
        let l = labels(&[5, 5]);
        let s = split_labels(&l, 0.7, 1).unwrap();
        assert_eq!(s.train_indices.len(), 7);
        assert_eq!(s.test_indices.len(), 3);
        for c in 0..2 {
            let n = s.train_indices.iter().filter(|&&i| l[i] == c).count() as f64;
            assert!((n - 3.5).abs() <= 1.0);
        }
        assert_eq!(s, split_labels(&l, 0.7, 1).unwrap());
    }

    /// Brute-force largest-remainder oracle: try every allocation with the
    /// right total, keep those within one of the ideal, pick the one that
    /// maximises the summed remainders of the rounded-up classes.
    fn oracle_counts(sizes: &[usize], frac: f64) -> Vec<usize> {
        let total = (frac * sizes.iter().sum::<usize>() as f64).round() as usize;
        let floors: Vec<usize> = sizes.iter().map(|&n| (frac * n as f64).floor() as usize).collect();
        let extra = total - floors.iter().sum::<usize>();
        let k = sizes.len();
        let mut best: Option<(f64, Vec<usize>)> = None;
        for mask in 0u32..(1 << k) {
            if mask.count_ones() as usize != extra {
                continue;
            }
            let alloc: Vec<usize> = (0..k).map(|c| floors[c] + ((mask >> c) & 1) as usize).collect();
            let score: f64 = (0..k)
                .filter(|c| (mask >> c) & 1 == 1)
                .map(|c| frac * sizes[c] as f64 - floors[c] as f64)
                .sum();
            if best.as_ref().is_none_or(|(s, _)| score > *s + 1e-12) {
                best = Some((score, alloc));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn hundred_epochs_four_classes() {
        let l = labels(&[25, 25, 25, 25]);
        let s = split_labels(&l, 0.7, 3).unwrap();
        let mut per_class = [0usize; 4];
        for &i in &s.train_indices {
            per_class[l[i]] += 1;
        }
        assert_eq!(per_class.to_vec(), oracle_counts(&[25; 4], 0.7));
        assert!(per_class.iter().all(|&n| n == 17 || n == 18));
        assert_eq!(per_class.iter().sum::<usize>(), 70);
    }

    #[test]
    fn class_with_one_epoch_is_rejected() {
        let err = split_labels(&[0, 0, 1], 0.7, 0).unwrap_err().to_string();
        assert!(err.contains("class 1"), "{err}");
    }

    proptest! {
        #[test]
        fn split_invariants(sizes in proptest::collection::vec(2usize..30, 1..5), seed in 0u64..1000, frac in 0.1f64..0.9) {
            let l = labels(&sizes);
            let s = split_labels(&l, frac, seed).unwrap();
            let mut all: Vec<usize> = s.train_indices.iter().chain(&s.test_indices).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..l.len()).collect::<Vec<_>>());
            let total = l.len() as f64;
            prop_assert!((s.train_indices.len() as f64 - frac * total).abs() <= 1.0);
            for (c, &n) in sizes.iter().enumerate() {
                let got = s.train_indices.iter().filter(|&&i| l[i] == c).count() as f64;
                prop_assert!((got - frac * n as f64).abs() <= 1.0);
            }
        }

        #[test]
        fn counts_are_permutation_invariant(sizes in proptest::collection::vec(2usize..20, 2..5), seed in 0u64..100) {
            let l = labels(&sizes);
            let mut shuffled = l.clone();
            shuffled.reverse();
            let a = split_labels(&l, 0.7, seed).unwrap();
            let b = split_labels(&shuffled, 0.7, seed).unwrap();
            for c in 0..sizes.len() {
                let ca = a.train_indices.iter().filter(|&&i| l[i] == c).count();
                let cb = b.train_indices.iter().filter(|&&i| shuffled[i] == c).count();
                prop_assert_eq!(ca, cb);
            }
        }
    }
}
