use crate::error::{bail, Result};

/// Per-feature mean and standard deviation fitted on a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Features with zero spread are centred but not scaled.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            bail!(InvalidArgument, "cannot standardise an empty set");
        };
        let d = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            if r.len() != d {
                bail!(Shape, "feature rows differ in length: {} vs {d}", r.len());
            }
            mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        let std = var.into_iter().map(|s| {
            let sd = (s / n).sqrt();
            if sd > 0.0 { sd } else { 1.0 }
        });
        Ok(Self { mean, std: std.collect() })
    }

    pub fn transform(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                r.iter()
                    .zip(self.mean.iter().zip(&self.std))
                    .map(|(v, (m, s))| (v - m) / s)
                    .collect()
            })
            .collect()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Majority vote among the `k` nearest training rows (Euclidean; equal
/// distances ordered by training index). A tied vote goes to the class
/// whose tied neighbours have the smallest mean distance, then to the
/// lowest class id.
pub fn knn_classify(train: &[Vec<f64>], labels: &[usize], test: &[Vec<f64>], k: usize) -> Result<Vec<usize>> {
    if train.is_empty() {
        bail!(InvalidArgument, "KNN needs a non-empty training set");
    }
    if labels.len() != train.len() {
        bail!(Shape, "{} labels for {} training rows", labels.len(), train.len());
    }
    if k == 0 || k > train.len() {
        bail!(InvalidArgument, "k = {k} must lie in 1..={}", train.len());
    }
    let d = train[0].len();
    if train.iter().chain(test).any(|r| r.len() != d) {
        bail!(Shape, "all feature rows must have {d} values");
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut out = Vec::with_capacity(test.len());
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(train.len());
    for q in test {
        dist.clear();
        dist.extend(train.iter().enumerate().map(|(i, r)| (sq_dist(q, r), i)));
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut votes = vec![0usize; n_classes];
        let mut dsum = vec![0.0; n_classes];
        for &(d2, i) in &dist[..k] {
            votes[labels[i]] += 1;
            dsum[labels[i]] += d2.sqrt();
        }
        let best = (0..n_classes)
            .filter(|&c| votes[c] > 0)
            .min_by(|&a, &b| {
                votes[b]
                    .cmp(&votes[a])
                    .then((dsum[a] / votes[a] as f64).total_cmp(&(dsum[b] / votes[b] as f64)))
                    .then(a.cmp(&b))
            })
            .expect("k >= 1");
        out.push(best);
    }
    Ok(out)
}
