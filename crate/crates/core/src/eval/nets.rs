//! Convolutional classifiers over whole epochs `[batch, channels, len]`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::diffusion::select_items;
use crate::error::{bail, Result};
use crate::nn::{
    adam_step, AdamState, BatchNorm1d, Conv1d, ConvTranspose1d, Graph, Linear, Mode, ParamStore,
    Tensor, Var,
};
use crate::rng::derive_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for NetTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
        }
    }
}

trait Network {
    fn forward(&mut self, g: &mut Graph, x: Var, mode: Mode) -> Result<Var>;
    fn store_mut(&mut self) -> &mut ParamStore;
}

fn check_inputs(x: &Tensor, labels: &[usize], n_classes: usize) -> Result<()> {
    if x.rank() != 3 {
        bail!(Shape, "classifier input must be [epochs, channels, len], got {:?}", x.shape());
    }
    if labels.len() != x.dim(0) {
        bail!(Shape, "{} labels for {} epochs", labels.len(), x.dim(0));
    }
    if labels.iter().any(|&l| l >= n_classes) {
        bail!(InvalidArgument, "label out of range for {n_classes} classes");
    }
    let present = (0..n_classes).filter(|c| labels.contains(c)).count();
    if present < 2 {
        bail!(InvalidArgument, "training set must contain at least two classes, got {present}");
    }
    Ok(())
}

fn fit<N: Network>(net: &mut N, x: &Tensor, labels: &[usize], cfg: &NetTrainConfig) -> Result<Vec<f64>> {
    if cfg.batch_size == 0 {
        bail!(InvalidArgument, "batch_size must be at least 1");
    }
    let item = x.numel() / x.dim(0);
    let ids = net.store_mut().trainable_ids();
    let mut adam = AdamState::new(net.store_mut(), ids, cfg.lr);
    let mut order: Vec<usize> = (0..x.dim(0)).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut derive_rng(cfg.seed, &[epoch as u64]));
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = select_items(x, chunk, item)?;
            let yb: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let mut g = Graph::new();
            let xv = g.input(xb);
            let logits = net.forward(&mut g, xv, Mode::Train)?;
            let loss = g.softmax_cross_entropy(logits, &yb)?;
            let v = g.value(loss).item();
            if !v.is_finite() {
                bail!(NonFinite, "classifier loss at epoch {epoch}");
            }
            total += v * chunk.len() as f64;
            net.store_mut().zero_grad();
            g.backward(loss, net.store_mut())?;
            adam_step(net.store_mut(), &mut adam)?;
        }
        losses.push(total / x.dim(0) as f64);
    }
    Ok(losses)
}

const PREDICT_BATCH: usize = 64;

fn proba<N: Network>(net: &mut N, x: &Tensor, n_classes: usize) -> Result<Tensor> {
    if x.rank() != 3 {
        bail!(Shape, "classifier input must be [epochs, channels, len], got {:?}", x.shape());
    }
    let n = x.dim(0);
    let item = x.numel() / n.max(1);
    let mut out = Vec::with_capacity(n * n_classes);
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(PREDICT_BATCH) {
        let mut g = Graph::new();
        let xv = g.input(select_items(x, chunk, item)?);
        let logits = net.forward(&mut g, xv, Mode::Eval)?;
        let p = g.softmax(logits)?;
        out.extend_from_slice(g.value(p).data());
    }
    Tensor::new(vec![n, n_classes], out)
}

fn argmax_rows(p: &Tensor) -> Vec<usize> {
    let k = p.dim(1);
    p.data()
        .chunks(k)
        .map(|r| (0..k).max_by(|&a, &b| r[a].total_cmp(&r[b]).then(b.cmp(&a))).unwrap_or(0))
        .collect()
}

/// Two `conv -> ReLU -> max-pool` stages, then a dense softmax layer.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnClassifier {
    pub store: ParamStore,
    conv1: Conv1d,
    conv2: Conv1d,
    dense: Linear,
    shape: (usize, usize),
    n_classes: usize,
    pool: usize,
}

impl Network for CnnClassifier {
    fn forward(&mut self, g: &mut Graph, x: Var, _mode: Mode) -> Result<Var> {
        let s = g.shape(x);
        if s[1..] != [self.shape.0, self.shape.1] {
            bail!(Shape, "CNN built for {:?}, got {s:?}", self.shape);
        }
        let h = self.conv1.forward(g, &self.store, x)?;
        let h = g.relu(h);
        let h = g.max_pool1d(h, self.pool)?;
        let h = self.conv2.forward(g, &self.store, h)?;
        let h = g.relu(h);
        let h = g.max_pool1d(h, self.pool)?;
        let s = g.shape(h);
        let h = g.reshape(h, &[s[0], s[1] * s[2]])?;
        self.dense.forward(g, &self.store, h)
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}

impl CnnClassifier {
    /// Widths 16 and 32, kernel 7, pooling 4.
    pub fn new(channels: usize, len: usize, n_classes: usize, seed: u64) -> Result<Self> {
        let pool = 4;
        if len < pool * pool || n_classes < 2 || channels == 0 {
            bail!(InvalidArgument, "CNN needs len >= 16, channels >= 1 and >= 2 classes");
        }
        let mut rng = derive_rng(seed, &[]);
        let mut store = ParamStore::new();
        let conv1 = Conv1d::new(&mut store, "conv1", channels, 16, 7, 1, 3, &mut rng);
        let conv2 = Conv1d::new(&mut store, "conv2", 16, 32, 7, 1, 3, &mut rng);
        let flat = 32 * (len / pool / pool);
        let dense = Linear::new(&mut store, "dense", flat, n_classes, &mut rng);
        Ok(Self {
            store,
            conv1,
            conv2,
            dense,
            shape: (channels, len),
            n_classes,
            pool,
        })
    }

    /// Builds and trains; returns the model and its per-epoch mean loss.
    pub fn train(x: &Tensor, labels: &[usize], n_classes: usize, cfg: &NetTrainConfig) -> Result<(Self, Vec<f64>)> {
        check_inputs(x, labels, n_classes)?;
        let mut net = Self::new(x.dim(1), x.dim(2), n_classes, cfg.seed)?;
        let losses = fit(&mut net, x, labels, cfg)?;
        Ok((net, losses))
    }

    pub fn predict_proba(&mut self, x: &Tensor) -> Result<Tensor> {
        let k = self.n_classes;
        proba(self, x, k)
    }

    pub fn predict(&mut self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.predict_proba(x)?))
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ConvBn {
    conv: Conv1d,
    bn: BatchNorm1d,
}

impl ConvBn {
    fn forward(&self, g: &mut Graph, store: &mut ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let h = self.conv.forward(g, store, x)?;
        let h = self.bn.forward(g, store, h, mode)?;
        Ok(g.relu(h))
    }
}

/// Two-level encoder/decoder with skip connections, then global average
/// pooling over time and a dense softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct UnetClassifier {
    pub store: ParamStore,
    stem: ConvBn,
    down: [ConvBn; 2],
    up: [(ConvTranspose1d, ConvBn); 2],
    head: Linear,
    shape: (usize, usize),
    n_classes: usize,
}

impl Network for UnetClassifier {
    fn forward(&mut self, g: &mut Graph, x: Var, mode: Mode) -> Result<Var> {
        let s = g.shape(x);
        if s[1..] != [self.shape.0, self.shape.1] {
            bail!(Shape, "U-Net classifier built for {:?}, got {s:?}", self.shape);
        }
        let store = &mut self.store;
        let s0 = self.stem.forward(g, store, x, mode)?;
        let e1 = self.down[0].forward(g, store, s0, mode)?;
        let b = self.down[1].forward(g, store, e1, mode)?;
        let mut h = b;
        for ((up, merge), skip) in self.up.iter().zip([e1, s0]) {
            let len = g.shape(skip)[2];
            let w = g.param(store, up.weight);
            let bias = g.param(store, up.bias);
            let u = g.conv_transpose1d_to_len(h, w, Some(bias), 2, 1, len)?;
            let u = g.relu(u);
            let cat = g.concat_channels(&[u, skip])?;
            h = merge.forward(g, store, cat, mode)?;
        }
        let pooled = g.global_avg_pool(h)?;
        self.head.forward(g, store, pooled)
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
}

impl UnetClassifier {
    /// Widths 16, 32, 64.
    pub fn new(channels: usize, len: usize, n_classes: usize, seed: u64) -> Result<Self> {
        if len < 4 || n_classes < 2 || channels == 0 {
            bail!(InvalidArgument, "U-Net classifier needs len >= 4, channels >= 1 and >= 2 classes");
        }
        let mut rng = derive_rng(seed, &[]);
        let r = &mut rng;
        let mut store = ParamStore::new();
        let s = &mut store;
        let conv_bn = |s: &mut ParamStore, name: &str, ci, co, stride, r: &mut _| ConvBn {
            conv: Conv1d::new(s, &format!("{name}.conv"), ci, co, 3, stride, 1, r),
            bn: BatchNorm1d::new(s, &format!("{name}.bn"), co),
        };
        let stem = conv_bn(s, "stem", channels, 16, 1, r);
        let down = [conv_bn(s, "down1", 16, 32, 2, r), conv_bn(s, "down2", 32, 64, 2, r)];
        let up = [
            (ConvTranspose1d::new(s, "up2.up", 64, 32, 4, 2, 1, r), conv_bn(s, "up2.merge", 64, 32, 1, r)),
            (ConvTranspose1d::new(s, "up1.up", 32, 16, 4, 2, 1, r), conv_bn(s, "up1.merge", 32, 16, 1, r)),
        ];
        let head = Linear::new(s, "head", 16, n_classes, r);
        Ok(Self {
            store,
            stem,
            down,
            up,
            head,
            shape: (channels, len),
            n_classes,
        })
    }

    pub fn train(x: &Tensor, labels: &[usize], n_classes: usize, cfg: &NetTrainConfig) -> Result<(Self, Vec<f64>)> {
        check_inputs(x, labels, n_classes)?;
        let mut net = Self::new(x.dim(1), x.dim(2), n_classes, cfg.seed)?;
        let losses = fit(&mut net, x, labels, cfg)?;
        Ok((net, losses))
    }

    pub fn predict_proba(&mut self, x: &Tensor) -> Result<Tensor> {
        let k = self.n_classes;
        proba(self, x, k)
    }

    pub fn predict(&mut self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.predict_proba(x)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy(n: usize, seed: u64) -> (Tensor, Vec<usize>) {
        // class 1 has a large burst on channel 0
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Tensor::randn(&[n, 2, 32], &mut rng).scale(0.3);
        let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
        for (i, &y) in labels.iter().enumerate() {
            if y == 1 {
                for j in 8..24 {
                    x.data_mut()[i * 64 + j] += if j % 2 == 0 { 2.0 } else { -2.0 };
                }
            }
        }
        (x, labels)
    }

    #[test]
    fn cnn_learns_toy_task_and_is_deterministic() {
        let (x, y) = toy(64, 0);
        let cfg = NetTrainConfig { epochs: 15, batch_size: 16, ..Default::default() };
        let (mut a, losses) = CnnClassifier::train(&x, &y, 2, &cfg).unwrap();
        assert!(losses.last().unwrap() < &losses[0]);
        let (xt, yt) = toy(32, 1);
        let pa = a.predict(&xt).unwrap();
        assert!(pa.iter().zip(&yt).filter(|(p, t)| p == t).count() >= 30);
        let (mut b, _) = CnnClassifier::train(&x, &y, 2, &cfg).unwrap();
        assert_eq!(pa, b.predict(&xt).unwrap());
        assert_eq!(pa, a.predict(&xt).unwrap());
    }

    #[test]
    fn unet_probabilities_sum_to_one() {
        let (x, y) = toy(32, 2);
        let cfg = NetTrainConfig { epochs: 3, batch_size: 8, ..Default::default() };
        let (mut net, _) = UnetClassifier::train(&x, &y, 2, &cfg).unwrap();
        let p = net.predict_proba(&x).unwrap();
        assert_eq!(p.shape(), &[32, 2]);
        for row in p.data().chunks(2) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let (mut again, _) = UnetClassifier::train(&x, &y, 2, &cfg).unwrap();
        assert_eq!(net.predict(&x).unwrap(), again.predict(&x).unwrap());
    }

    #[test]
    fn rejects_single_class_and_bad_shapes() {
        let (x, _) = toy(8, 0);
        let cfg = NetTrainConfig::default();
        assert!(CnnClassifier::train(&x, &[0; 8], 2, &cfg).is_err());
        assert!(UnetClassifier::train(&x, &[0; 8], 2, &cfg).is_err());
        let (x, y) = toy(8, 0);
        let (mut net, _) = CnnClassifier::train(&x, &y, 2, &NetTrainConfig { epochs: 1, ..cfg }).unwrap();
        assert!(net.predict(&Tensor::zeros(&[1, 3, 32])).is_err());
    }
}
