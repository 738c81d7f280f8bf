use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::rng::derive_rng;

/// Stratified `n_folds` assignment: each class is shuffled and dealt
/// round-robin, continuing where the previous class stopped so fold sizes
/// stay within one of each other. Returns the test indices of each fold.
pub fn stratified_folds(labels: &[usize], n_folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if n_folds < 2 {
        bail!(InvalidArgument, "cross-validation needs at least 2 folds, got {n_folds}");
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut folds = vec![Vec::new(); n_folds];
    let mut next = 0;
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        if idx.is_empty() {
            continue;
        }
        if idx.len() < n_folds {
            bail!(InvalidArgument, "class {c} has {} epochs, fewer than {n_folds} folds", idx.len());
        }
        idx.shuffle(&mut derive_rng(seed, &[c as u64]));
        for i in idx {
            folds[next].push(i);
            next = (next + 1) % n_folds;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub fold_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    /// Out-of-fold prediction for every item.
    pub predictions: Vec<usize>,
}

/// Runs `fit_predict(train_idx, test_idx, fold)` on every fold; it returns
/// predicted labels for `test_idx` in order.
pub fn cross_validate(
    labels: &[usize],
    n_folds: usize,
    seed: u64,
    mut fit_predict: impl FnMut(&[usize], &[usize], usize) -> Result<Vec<usize>>,
) -> Result<CvResult> {
    let folds = stratified_folds(labels, n_folds, seed)?;
    let mut preds = vec![usize::MAX; labels.len()];
    let mut acc = Vec::with_capacity(n_folds);
    for (k, test) in folds.iter().enumerate() {
        let train: Vec<usize> = folds
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != k)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        let p = fit_predict(&train, test, k)?;
        if p.len() != test.len() {
            bail!(Shape, "fold {k}: {} predictions for {} items", p.len(), test.len());
        }
        let correct = test.iter().zip(&p).filter(|(&i, &y)| labels[i] == y).count();
        acc.push(correct as f64 / test.len() as f64);
        for (&i, &y) in test.iter().zip(&p) {
            preds[i] = y;
        }
    }
    let mean = acc.iter().sum::<f64>() / acc.len() as f64;
    Ok(CvResult {
        fold_accuracies: acc,
        mean_accuracy: mean,
        predictions: preds,
    })
}
