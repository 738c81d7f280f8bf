use std::collections::BTreeMap;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::schedule::NoiseSchedule;
use super::unet::{ConditionalUnet, UnetConfig};
use crate::data::{AdjacencyRow, AdjacencyTable, EpochSet};
use crate::error::{bail, Error, Result};
use crate::nn::{adam_step, lr_schedule, AdamState, Graph, Mode, Tensor};
use crate::rng::derive_rng;

/// Reverse-process update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingVariant {
    /// Mean update only, no fresh noise after the initial draw.
    PaperDeterministic,
    /// Ancestral sampling, adds `sqrt(beta_t) z` for `t > 0`.
    #[default]
    Stochastic,
}

impl FromStr for SamplingVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper_deterministic" => Ok(Self::PaperDeterministic),
            "stochastic" => Ok(Self::Stochastic),
            other => bail!(
                InvalidArgument,
                "unknown sampling variant `{other}` (expected paper_deterministic or stochastic)"
            ),
        }
    }
}

/// Anything that predicts the injected noise from `x_t`, the conditioning
/// channels and the timestep.
pub trait NoisePredictor {
    /// `x_t: [batch, 1, len]`, `cond: [batch, n_cond, len]`.
    fn predict_noise(&mut self, x_t: &Tensor, cond: &Tensor, t: usize) -> Result<Tensor>;
}

/// Stacks `[x_t; cond]` along the channel axis.
fn denoiser_input(x_t: &Tensor, cond: &Tensor) -> Result<Tensor> {
    let (b, l) = (x_t.dim(0), x_t.dim(2));
    if cond.rank() != 3 || cond.dim(0) != b || cond.dim(2) != l || x_t.dim(1) != 1 {
        bail!(
            Shape,
            "noisy target {:?} and condition {:?} do not line up",
            x_t.shape(),
            cond.shape()
        );
    }
    let c = cond.dim(1);
    let mut data = Vec::with_capacity(b * (c + 1) * l);
    for i in 0..b {
        data.extend_from_slice(&x_t.data()[i * l..(i + 1) * l]);
        data.extend_from_slice(&cond.data()[i * c * l..(i + 1) * c * l]);
    }
    Tensor::new(vec![b, c + 1, l], data)
}

impl NoisePredictor for ConditionalUnet {
    fn predict_noise(&mut self, x_t: &Tensor, cond: &Tensor, t: usize) -> Result<Tensor> {
        let input = denoiser_input(x_t, cond)?;
        self.predict(&input, &vec![t; x_t.dim(0)])
    }
}

/// One target channel, its two conditioning channels, and the model that
/// reconstructs it.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionJob {
    pub target: String,
    pub inputs: [String; 2],
    pub schedule: NoiseSchedule,
    pub model: ConditionalUnet,
}

impl ReconstructionJob {
    pub fn new(row: &AdjacencyRow, schedule: NoiseSchedule, config: UnetConfig, seed: u64) -> Result<Self> {
        Ok(Self {
            target: row.target.clone(),
            inputs: row.inputs.clone(),
            schedule,
            model: ConditionalUnet::new(config, seed)?,
        })
    }

    /// `ddpm_<target>.ednn`
    pub fn checkpoint_name(target: &str) -> String {
        format!("ddpm_{target}.ednn")
    }

    /// `(x0 [n, 1, len], cond [n, 2, len])` for the epochs at `indices`.
    pub fn tensors(&self, set: &EpochSet, indices: &[usize]) -> Result<(Tensor, Tensor)> {
        let x0 = gather_channels(set, std::slice::from_ref(&self.target), indices)?;
        let cond = gather_channels(set, &self.inputs, indices)?;
        Ok((x0, cond))
    }
}

/// Copies the named channels of the selected epochs into `[n, k, len]`.
pub fn gather_channels(set: &EpochSet, names: &[String], indices: &[usize]) -> Result<Tensor> {
    let rows: Vec<usize> = names
        .iter()
        .map(|n| set.channel_index(n))
        .collect::<Result<_>>()?;
    let l = set.epoch_len();
    let mut data = Vec::with_capacity(indices.len() * rows.len() * l);
    for &i in indices {
        let Some(epoch) = set.epochs.get(i) else {
            bail!(InvalidArgument, "epoch index {i} out of range for {} epochs", set.len());
        };
        for &r in &rows {
            data.extend(epoch.samples.row(r).iter());
        }
    }
    Tensor::new(vec![indices.len(), rows.len(), l], data)
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Draws `t` and `eps` per batch item, corrupts `x0`, and back-propagates
/// the noise-prediction MSE into the model's gradients. Returns the loss.
pub fn ddpm_train_step<R: Rng + ?Sized>(
    job: &mut ReconstructionJob,
    x0: &Tensor,
    cond: &Tensor,
    rng: &mut R,
) -> Result<f64> {
    if x0.rank() != 3 || x0.dim(1) != 1 {
        bail!(Shape, "training target must be [batch, 1, len], got {:?}", x0.shape());
    }
    let (b, l) = (x0.dim(0), x0.dim(2));
    let steps = job.schedule.len();
    let ts: Vec<usize> = (0..b).map(|_| rng.random_range(0..steps)).collect();
    let eps = Tensor::from_fn(&[b, 1, l], |_| normal(rng));
    let ab = job.schedule.alpha_bar();
    let x_t = Tensor::from_fn(&[b, 1, l], |i| {
        let t = ts[i / l];
        ab[t].sqrt() * x0.data()[i] + (1.0 - ab[t]).sqrt() * eps.data()[i]
    });
    let input = denoiser_input(&x_t, cond)?;
    let mut g = Graph::new();
    let x = g.input(input);
    let pred = job.model.forward(&mut g, x, &ts, Mode::Train)?;
    let target = g.input(eps);
    let loss = g.mse_loss(pred, target)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        bail!(NonFinite, "training loss for target {}", job.target);
    }
    g.backward(loss, &mut job.model.store)?;
    Ok(value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdpmTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub halve_every: usize,
    pub seed: u64,
}

impl Default for DdpmTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 32,
            lr: 1e-4,
            halve_every: 20,
            seed: 0,
        }
    }
}

/// Result of [`train_ddpm`].
#[derive(Debug, Clone)]
pub struct TrainHistory {
    /// Mean loss of every optimiser step, in order.
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    pub optimizer: AdamState,
}

/// Mini-batch Adam over `(x0, cond)` pairs with step-decayed learning rate.
/// Epoch `e` shuffles and draws noise from the stream `(seed, e)`.
pub fn train_ddpm(
    job: &mut ReconstructionJob,
    x0: &Tensor,
    cond: &Tensor,
    cfg: &DdpmTrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<TrainHistory> {
    let n = x0.dim(0);
    if n == 0 || cfg.batch_size == 0 || cfg.halve_every == 0 {
        bail!(InvalidArgument, "training needs data, batch_size >= 1 and halve_every >= 1");
    }
    let l = x0.dim(2);
    let c = cond.dim(1);
    let ids = job.model.store.trainable_ids();
    let mut adam = AdamState::new(&job.model.store, ids, cfg.lr);
    let mut step_losses = Vec::new();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.epochs {
        adam.lr = lr_schedule(cfg.lr, epoch, cfg.halve_every);
        let mut rng = derive_rng(cfg.seed, &[epoch as u64]);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let xb = select_items(x0, chunk, l)?;
            let cb = select_items(cond, chunk, c * l)?;
            job.model.store.zero_grad();
            let loss = ddpm_train_step(job, &xb, &cb, &mut rng)?;
            adam_step(&mut job.model.store, &mut adam)?;
            step_losses.push(loss);
            total += loss;
            batches += 1;
        }
        let mean = total / batches as f64;
        epoch_losses.push(mean);
        on_epoch(epoch, mean);
    }
    Ok(TrainHistory {
        step_losses,
        epoch_losses,
        optimizer: adam,
    })
}

/// Rows `idx` of a `[n, ...]` tensor whose items are `item` values long.
pub fn select_items(t: &Tensor, idx: &[usize], item: usize) -> Result<Tensor> {
    let mut shape = t.shape().to_vec();
    shape[0] = idx.len();
    let mut data = Vec::with_capacity(idx.len() * item);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * item..(i + 1) * item]);
    }
    Tensor::new(shape, data)
}

/// Runs the reverse chain from `x_T ~ N(0, I)` for a batch of conditions.
/// Item `i` draws all of its noise from `rngs[i]`, so results do not depend
/// on how epochs are batched.
pub fn ddpm_sample_batch<P: NoisePredictor + ?Sized>(
    model: &mut P,
    schedule: &NoiseSchedule,
    cond: &Tensor,
    rngs: &mut [ChaCha8Rng],
    variant: SamplingVariant,
) -> Result<Tensor> {
    if cond.rank() != 3 {
        bail!(Shape, "condition must be [batch, channels, len], got {:?}", cond.shape());
    }
    let (b, l) = (cond.dim(0), cond.dim(2));
    if rngs.len() != b {
        bail!(InvalidArgument, "{} rng streams for a batch of {b}", rngs.len());
    }
    let mut x = Tensor::zeros(&[b, 1, l]);
    for (row, rng) in x.data_mut().chunks_mut(l).zip(rngs.iter_mut()) {
        row.iter_mut().for_each(|v| *v = normal(rng));
    }
    for t in (0..schedule.len()).rev() {
        let eps = model.predict_noise(&x, cond, t)?;
        if eps.shape() != x.shape() {
            bail!(Shape, "noise prediction {:?} for sample {:?}", eps.shape(), x.shape());
        }
        let beta = schedule.beta()[t];
        let coef = beta / (1.0 - schedule.alpha_bar()[t]).sqrt();
        let inv = 1.0 / schedule.alpha()[t].sqrt();
        let sigma = beta.sqrt();
        for (i, (row, erow)) in x.data_mut().chunks_mut(l).zip(eps.data().chunks(l)).enumerate() {
            for (v, e) in row.iter_mut().zip(erow) {
                *v = inv * (*v - coef * e);
            }
            if variant == SamplingVariant::Stochastic && t > 0 {
                row.iter_mut().for_each(|v| *v += sigma * normal(&mut rngs[i]));
            }
        }
        if !x.is_finite() {
            bail!(NonFinite, "reverse diffusion diverged at timestep {t}");
        }
    }
    Ok(x)
}

/// Single-condition form: `cond: [n_cond, len]` gives `[1, len]`.
pub fn ddpm_sample<P: NoisePredictor + ?Sized>(
    model: &mut P,
    schedule: &NoiseSchedule,
    cond: &Tensor,
    rng: &mut ChaCha8Rng,
    variant: SamplingVariant,
) -> Result<Tensor> {
    if cond.rank() != 2 {
        bail!(Shape, "condition must be [channels, len], got {:?}", cond.shape());
    }
    let batched = cond.clone().reshape(&[1, cond.dim(0), cond.dim(1)])?;
    let mut rngs = [rng.clone()];
    let out = ddpm_sample_batch(model, schedule, &batched, &mut rngs, variant)?;
    *rng = rngs[0].clone();
    out.reshape(&[1, cond.dim(1)])
}

const SAMPLE_BATCH: usize = 32;

/// Replaces every table target in every epoch with a sampled
/// reconstruction conditioned on the real input channels. Epoch `e` of
/// table row `r` samples from the stream `(seed, r, e)`.
pub fn reconstruct_channels(
    set: &EpochSet,
    table: &AdjacencyTable,
    models: &mut BTreeMap<String, ReconstructionJob>,
    seed: u64,
    variant: SamplingVariant,
) -> Result<EpochSet> {
    let mut out = set.clone();
    let all: Vec<usize> = (0..set.len()).collect();
    for (r, row) in table.entries().iter().enumerate() {
        let Some(job) = models.get_mut(&row.target) else {
            bail!(InvalidArgument, "no trained model for target `{}`", row.target);
        };
        if job.inputs != row.inputs {
            bail!(
                InvalidArgument,
                "model for `{}` was trained on {:?}, table says {:?}",
                row.target,
                job.inputs,
                row.inputs
            );
        }
        let target_row = set.channel_index(&row.target)?;
        let cond = gather_channels(set, &row.inputs, &all)?;
        let l = set.epoch_len();
        for chunk in all.chunks(SAMPLE_BATCH) {
            let cb = select_items(&cond, chunk, 2 * l)?;
            let mut rngs: Vec<ChaCha8Rng> = chunk
                .iter()
                .map(|&e| derive_rng(seed, &[r as u64, e as u64]))
                .collect();
            let schedule = job.schedule.clone();
            let x = ddpm_sample_batch(&mut job.model, &schedule, &cb, &mut rngs, variant)?;
            for (k, &e) in chunk.iter().enumerate() {
                let mut dst = out.epochs[e].samples.row_mut(target_row);
                for (d, s) in dst.iter_mut().zip(&x.data()[k * l..(k + 1) * l]) {
                    *d = *s;
                }
            }
        }
    }
    Ok(out)
}
