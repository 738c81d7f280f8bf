//! Conditional Wasserstein GAN with gradient penalty, the adversarial
//! baseline for single-channel reconstruction.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{AdjacencyRow, AdjacencyTable, EpochSet};
use crate::diffusion::{gather_channels, select_items};
use crate::error::{bail, Result};
use crate::nn::{
    adam_step, decode_checkpoint, encode_checkpoint, AdamState, Conv1d, Graph, Linear, ParamStore,
    Tensor, Var,
};
use crate::rng::derive_rng;

const LEAK: f64 = 0.2;
const KERNEL: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanConfig {
    /// Hidden width of both networks.
    pub width: usize,
    /// Number of noise channels stacked with the conditions.
    pub latent_dim: usize,
    pub gp_weight: f64,
    pub n_critic: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for GanConfig {
    fn default() -> Self {
        Self {
            width: 64,
            latent_dim: 1,
            gp_weight: 10.0,
            n_critic: 5,
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            epochs: 200,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl GanConfig {
    pub fn desk() -> Self {
        Self {
            width: 16,
            ..Self::default()
        }
    }
}

/// `[cond; z] -> conv -> conv -> conv -> target`, kernel 5, same length.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    layers: [Conv1d; 3],
}

impl Generator {
    fn new(store: &mut ParamStore, n_cond: usize, cfg: &GanConfig, rng: &mut ChaCha8Rng) -> Self {
        let w = cfg.width;
        let pad = KERNEL / 2;
        Self {
            layers: [
                Conv1d::new(store, "generator.conv1", n_cond + cfg.latent_dim, w, KERNEL, 1, pad, rng),
                Conv1d::new(store, "generator.conv2", w, w, KERNEL, 1, pad, rng),
                Conv1d::new(store, "generator.conv3", w, 1, KERNEL, 1, pad, rng),
            ],
        }
    }

    /// `cond: [B, c, L]`, `z: [B, latent, L]` to `[B, 1, L]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, cond: Var, z: Var) -> Result<Var> {
        let mut h = g.concat_channels(&[cond, z])?;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, store, h)?;
            if i < 2 {
                h = g.leaky_relu(h, LEAK);
            }
        }
        Ok(h)
    }
}

/// `[cond; x] -> 3 strided convs -> flatten -> linear -> score`.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    layers: [Conv1d; 3],
    head: Linear,
    len: usize,
}

impl Critic {
    fn new(store: &mut ParamStore, n_cond: usize, len: usize, cfg: &GanConfig, rng: &mut ChaCha8Rng) -> Self {
        let w = cfg.width;
        let pad = KERNEL / 2;
        let mut l = len;
        for _ in 0..3 {
            l = (l + 2 * pad - KERNEL) / 2 + 1;
        }
        Self {
            layers: [
                Conv1d::new(store, "critic.conv1", n_cond + 1, w, KERNEL, 2, pad, rng),
                Conv1d::new(store, "critic.conv2", w, w, KERNEL, 2, pad, rng),
                Conv1d::new(store, "critic.conv3", w, w, KERNEL, 2, pad, rng),
            ],
            head: Linear::new(store, "critic.head", w * l, 1, rng),
            len,
        }
    }

    /// One score per item, `[B, 1]`.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, cond: Var) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != 3 || shape[2] != self.len {
            bail!(Shape, "critic built for length {}, got {shape:?}", self.len);
        }
        let mut h = g.concat_channels(&[cond, x])?;
        for layer in &self.layers {
            h = layer.forward(g, store, h)?;
            h = g.leaky_relu(h, LEAK);
        }
        let s = g.shape(h);
        let flat = g.reshape(h, &[s[0], s[1] * s[2]])?;
        self.head.forward(g, store, flat)
    }
}

/// Generator, critic and their optimisers for one target channel. Both
/// networks live in one store under the `generator.` and `critic.`
/// prefixes.
#[derive(Debug, Clone)]
pub struct GanPair {
    pub target: String,
    pub inputs: [String; 2],
    pub config: GanConfig,
    pub store: ParamStore,
    pub generator: Generator,
    pub critic: Critic,
    gen_opt: AdamState,
    critic_opt: AdamState,
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// `mean_i (||d critic(x_i) / d x_i||_2 - 1)^2` at `x = u real + (1-u) fake`
/// with one `u ~ U(0,1)` per item. `critic` maps a `[B, ...]` node to
/// `[B, 1]` scores and must treat items independently.
pub fn gradient_penalty<R, F>(g: &mut Graph, mut critic: F, real: &Tensor, fake: &Tensor, rng: &mut R) -> Result<Var>
where
    R: Rng + ?Sized,
    F: FnMut(&mut Graph, Var) -> Result<Var>,
{
    if real.shape() != fake.shape() || real.rank() < 2 {
        bail!(Shape, "real {:?} and fake {:?} batches differ", real.shape(), fake.shape());
    }
    let b = real.dim(0);
    let item = real.numel() / b;
    let u: Vec<f64> = (0..b).map(|_| rng.random::<f64>()).collect();
    let mixed = Tensor::from_fn(real.shape(), |i| {
        let ui = u[i / item];
        ui * real.data()[i] + (1.0 - ui) * fake.data()[i]
    });
    let x = g.input_with_grad(mixed);
    let score = critic(g, x)?;
    let grad = g.grad(score, &[x])?[0];
    if !g.value(grad).is_finite() {
        bail!(NonFinite, "critic gradient at the interpolated batch");
    }
    let sq = g.square(grad);
    let norm2 = g.sum_per_item(sq)?;
    // keeps d sqrt finite when the gradient vanishes
    let norm2 = g.add_scalar(norm2, 1e-20);
    let norm = g.sqrt(norm2);
    let dev = g.add_scalar(norm, -1.0);
    let dev2 = g.square(dev);
    Ok(g.mean(dev2))
}

impl GanPair {
    pub fn new(row: &AdjacencyRow, len: usize, config: GanConfig, seed: u64) -> Result<Self> {
        if config.width == 0 || config.latent_dim == 0 || config.n_critic == 0 {
            bail!(InvalidArgument, "GAN width, latent_dim and n_critic must be positive");
        }
        let mut rng = derive_rng(seed, &[]);
        let mut store = ParamStore::new();
        let generator = Generator::new(&mut store, row.inputs.len(), &config, &mut rng);
        let critic = Critic::new(&mut store, row.inputs.len(), len, &config, &mut rng);
        let (b1, b2) = (config.beta1, config.beta2);
        let gen_opt = AdamState::with_betas(&store, store.trainable_with_prefix("generator."), config.lr, b1, b2);
        let critic_opt = AdamState::with_betas(&store, store.trainable_with_prefix("critic."), config.lr, b1, b2);
        Ok(Self {
            target: row.target.clone(),
            inputs: row.inputs.clone(),
            config,
            store,
            generator,
            critic,
            gen_opt,
            critic_opt,
        })
    }

    /// `wgan_<target>.ednn`
    pub fn checkpoint_name(target: &str) -> String {
        format!("wgan_{target}.ednn")
    }

    pub fn tensors(&self, set: &EpochSet, indices: &[usize]) -> Result<(Tensor, Tensor)> {
        let x0 = gather_channels(set, std::slice::from_ref(&self.target), indices)?;
        let cond = gather_channels(set, &self.inputs, indices)?;
        Ok((x0, cond))
    }

    fn latent<R: Rng + ?Sized>(&self, b: usize, l: usize, rng: &mut R) -> Tensor {
        Tensor::from_fn(&[b, self.config.latent_dim, l], |_| normal(rng))
    }

    /// Generator output for `cond: [B, c, L]`, drawing the latent from `rng`.
    pub fn generate<R: Rng + ?Sized>(&self, cond: &Tensor, rng: &mut R) -> Result<Tensor> {
        let z = self.latent(cond.dim(0), cond.dim(2), rng);
        let mut g = Graph::new();
        let c = g.input(cond.clone());
        let z = g.input(z);
        let out = self.generator.forward(&mut g, &self.store, c, z)?;
        let out = g.value(out).clone();
        if !out.is_finite() {
            bail!(NonFinite, "generator output for target {}", self.target);
        }
        Ok(out)
    }

    /// Mean critic score of `x` under `cond`.
    pub fn mean_score(&self, x: &Tensor, cond: &Tensor) -> Result<f64> {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let cv = g.input(cond.clone());
        let s = self.critic.forward(&mut g, &self.store, xv, cv)?;
        Ok(g.value(s).sum() / x.dim(0) as f64)
    }

    fn critic_step<R: Rng + ?Sized>(&mut self, real: &Tensor, cond: &Tensor, rng: &mut R) -> Result<f64> {
        let fake = self.generate(cond, rng)?;
        let mut g = Graph::new();
        let c = g.input(cond.clone());
        let r = g.input(real.clone());
        let f = g.input(fake.clone());
        let sr = self.critic.forward(&mut g, &self.store, r, c)?;
        let sf = self.critic.forward(&mut g, &self.store, f, c)?;
        let mr = g.mean(sr);
        let mf = g.mean(sf);
        let w = g.sub(mf, mr)?;
        let (critic, store) = (&self.critic, &self.store);
        let gp = gradient_penalty(&mut g, |g, x| critic.forward(g, store, x, c), real, &fake, rng)?;
        let gp = g.scale(gp, self.config.gp_weight);
        let loss = g.add(w, gp)?;
        let value = g.value(loss).item();
        if !value.is_finite() {
            bail!(NonFinite, "critic loss for target {}", self.target);
        }
        self.store.zero_grad();
        g.backward(loss, &mut self.store)?;
        adam_step(&mut self.store, &mut self.critic_opt)?;
        Ok(value)
    }

    fn generator_step<R: Rng + ?Sized>(&mut self, cond: &Tensor, rng: &mut R) -> Result<f64> {
        let z = self.latent(cond.dim(0), cond.dim(2), rng);
        let mut g = Graph::new();
        let c = g.input(cond.clone());
        let z = g.input(z);
        let fake = self.generator.forward(&mut g, &self.store, c, z)?;
        let s = self.critic.forward(&mut g, &self.store, fake, c)?;
        let m = g.mean(s);
        let loss = g.scale(m, -1.0);
        let value = g.value(loss).item();
        if !value.is_finite() {
            bail!(NonFinite, "generator loss for target {}", self.target);
        }
        self.store.zero_grad();
        g.backward(loss, &mut self.store)?;
        adam_step(&mut self.store, &mut self.gen_opt)?;
        Ok(value)
    }

    /// `n_critic` critic updates on the batch, each with fresh latents and
    /// interpolation weights, then one generator update. Returns the last
    /// critic loss and the generator loss.
    pub fn train_step<R: Rng + ?Sized>(&mut self, real: &Tensor, cond: &Tensor, rng: &mut R) -> Result<(f64, f64)> {
        if real.rank() != 3 || real.dim(1) != 1 || cond.dim(0) != real.dim(0) {
            bail!(Shape, "real {:?} and condition {:?} do not line up", real.shape(), cond.shape());
        }
        let mut critic_loss = 0.0;
        for _ in 0..self.config.n_critic {
            critic_loss = self.critic_step(real, cond, rng)?;
        }
        let gen_loss = self.generator_step(cond, rng)?;
        Ok((critic_loss, gen_loss))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode_checkpoint(&self.store, None)
    }

    /// Loads weights saved by [`GanPair::to_bytes`] into a pair built with
    /// the same configuration.
    pub fn load_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        let ck = decode_checkpoint(bytes)?;
        self.store.load_named(&ck.tensors)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| crate::Error::io(path, e))
    }
}

/// Per-step losses from [`train_wgan`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GanHistory {
    pub critic_losses: Vec<f64>,
    pub generator_losses: Vec<f64>,
    /// `mean critic(real) - mean critic(fake)` on the full training set
    /// after each epoch.
    pub wasserstein: Vec<f64>,
}

/// Mini-batch training; epoch `e` shuffles and draws noise from `(seed, e)`.
pub fn train_wgan(pair: &mut GanPair, x0: &Tensor, cond: &Tensor, mut on_epoch: impl FnMut(usize, f64)) -> Result<GanHistory> {
    let n = x0.dim(0);
    let bs = pair.config.batch_size;
    if n == 0 || bs == 0 {
        bail!(InvalidArgument, "training needs data and batch_size >= 1");
    }
    let (c, l) = (cond.dim(1), x0.dim(2));
    let mut hist = GanHistory::default();
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..pair.config.epochs {
        let mut rng = derive_rng(pair.config.seed, &[epoch as u64]);
        order.sort_unstable();
        order.shuffle(&mut rng);
        for chunk in order.chunks(bs) {
            let xb = select_items(x0, chunk, l)?;
            let cb = select_items(cond, chunk, c * l)?;
            let (cl, gl) = pair.train_step(&xb, &cb, &mut rng)?;
            hist.critic_losses.push(cl);
            hist.generator_losses.push(gl);
        }
        let fake = pair.generate(cond, &mut rng)?;
        let w = pair.mean_score(x0, cond)? - pair.mean_score(&fake, cond)?;
        hist.wasserstein.push(w);
        on_epoch(epoch, w);
    }
    Ok(hist)
}

/// GAN counterpart of `reconstruct_channels`: every table target is
/// replaced by a generator sample, epoch `e` of row `r` drawing its latent
/// from `(seed, r, e)`.
pub fn reconstruct_channels_gan(
    set: &EpochSet,
    table: &AdjacencyTable,
    models: &BTreeMap<String, GanPair>,
    seed: u64,
) -> Result<EpochSet> {
    let mut out = set.clone();
    let all: Vec<usize> = (0..set.len()).collect();
    let l = set.epoch_len();
    for (r, row) in table.entries().iter().enumerate() {
        let Some(pair) = models.get(&row.target) else {
            bail!(InvalidArgument, "no trained model for target `{}`", row.target);
        };
        let target_row = set.channel_index(&row.target)?;
        let cond = gather_channels(set, &row.inputs, &all)?;
        for &e in &all {
            let cb = select_items(&cond, &[e], 2 * l)?;
            let mut rng = derive_rng(seed, &[r as u64, e as u64]);
            let x = pair.generate(&cb, &mut rng)?;
            for (d, s) in out.epochs[e].samples.row_mut(target_row).iter_mut().zip(x.data()) {
                *d = *s;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
