use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::nn::Tensor;
use crate::rng::derive_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LogRegConfig {
    /// Passes over the training set.
    pub max_iter: usize,
    pub l2: f64,
    /// Initial step; the step at update `t` is `lr / sqrt(t)`.
    pub lr: f64,
    /// Stop once the epoch loss fails to improve by `tol` for
    /// `n_iter_no_change` consecutive passes.
    pub tol: f64,
    pub n_iter_no_change: usize,
    pub seed: u64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            l2: 1e-4,
            lr: 0.01,
            tol: 1e-3,
            n_iter_no_change: 5,
            seed: 0,
        }
    }
}

/// Multinomial logistic regression, `weights: [classes, features]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub weights: Tensor,
    pub bias: Vec<f64>,
    pub n_iter: usize,
}

fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
}

impl LogisticModel {
    fn logits(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        for (c, o) in out.iter_mut().enumerate() {
            let w = &self.weights.data()[c * d..(c + 1) * d];
            *o = self.bias[c] + w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub fn predict_proba(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let k = self.bias.len();
        rows.iter()
            .map(|x| {
                let mut z = vec![0.0; k];
                self.logits(x, &mut z);
                softmax_in_place(&mut z);
                z
            })
            .collect()
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Vec<usize> {
        self.predict_proba(rows)
            .iter()
            .map(|p| (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b]).then(b.cmp(&a))).unwrap_or(0))
            .collect()
    }
}

/// Per-sample SGD on softmax cross-entropy plus `l2 ||W||^2 / 2`. The
/// decay is applied as the proximal step `W /= 1 + eta l2`, which stays
/// stable for any `l2`. The bias is not regularised.
pub fn logistic_regression_train(rows: &[Vec<f64>], labels: &[usize], cfg: &LogRegConfig) -> Result<LogisticModel> {
    if rows.len() != labels.len() || rows.is_empty() {
        bail!(Shape, "{} rows and {} labels", rows.len(), labels.len());
    }
    let k = labels.iter().max().copied().unwrap_or(0) + 1;
    let present = (0..k).filter(|c| labels.contains(c)).count();
    if present < 2 {
        bail!(InvalidArgument, "logistic regression needs at least two classes, got {present}");
    }
    let d = rows[0].len();
    if rows.iter().any(|r| r.len() != d) {
        bail!(Shape, "feature rows must all have {d} values");
    }
    let mut model = LogisticModel {
        weights: Tensor::zeros(&[k, d]),
        bias: vec![0.0; k],
        n_iter: 0,
    };
    let mut rng = derive_rng(cfg.seed, &[]);
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut z = vec![0.0; k];
    let mut t = 0u64;
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for _ in 0..cfg.max_iter {
        order.shuffle(&mut rng);
        let mut loss = 0.0;
        for &i in &order {
            t += 1;
            let eta = cfg.lr / (t as f64).sqrt();
            let x = &rows[i];
            model.logits(x, &mut z);
            softmax_in_place(&mut z);
            loss -= z[labels[i]].max(1e-300).ln();
            let shrink = 1.0 / (1.0 + eta * cfg.l2);
            let w = model.weights.data_mut();
            for c in 0..k {
                let g = z[c] - if c == labels[i] { 1.0 } else { 0.0 };
                model.bias[c] -= eta * g;
                for (wv, xv) in w[c * d..(c + 1) * d].iter_mut().zip(x) {
                    *wv = (*wv - eta * g * xv) * shrink;
                }
            }
        }
        model.n_iter += 1;
        let sq: f64 = model.weights.data().iter().map(|v| v * v).sum();
        let loss = loss / rows.len() as f64 + 0.5 * cfg.l2 * sq;
        if loss > best - cfg.tol {
            stale += 1;
            if stale >= cfg.n_iter_no_change {
                break;
            }
        } else {
            stale = 0;
        }
        best = best.min(loss);
    }
    if !model.weights.is_finite() {
        bail!(NonFinite, "logistic regression weights diverged");
    }
    Ok(model)
}
