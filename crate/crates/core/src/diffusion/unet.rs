//! Conditional 1D U-Net noise predictor.
//!
//! ```text
//! [x_t; c1; c2] (3 x L)
//!   stem   conv k3        -> w0 @ L     (+ time embedding, per channel)
//!   down1  conv k3 s2     -> w1 @ L/2
//!   down2  conv k3 s2     -> w2 @ L/4
//!   down3  conv k3 s2     -> w2 @ L/8   (bottleneck)
//!   up3    convT k4 s2    -> w2 @ L/4,  cat down2, conv k3 -> w2
//!   up2    convT k4 s2    -> w1 @ L/2,  cat down1, conv k3 -> w1
//!   up1    convT k4 s2    -> w0 @ L,    cat stem,  conv k3 -> w0
//!   head   conv k3        -> 1 @ L
//! ```
//! Every conv except the head is followed by batch norm and ReLU.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::nn::{
    sinusoidal_embeddings, BatchNorm1d, Conv1d, ConvTranspose1d, Graph, Linear, Mode, ParamStore,
    Tensor, Var,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnetConfig {
    pub in_channels: usize,
    /// Channel widths of the three encoder levels.
    pub widths: [usize; 3],
    pub time_embed_dim: usize,
}

impl Default for UnetConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            widths: [32, 64, 128],
            time_embed_dim: 64,
        }
    }
}

impl UnetConfig {
    /// Narrow variant for quick runs.
    pub fn desk() -> Self {
        Self {
            widths: [16, 32, 64],
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct ConvBn {
    conv: Conv1d,
    bn: BatchNorm1d,
}

impl ConvBn {
    #[allow(clippy::too_many_arguments)]
    fn new(store: &mut ParamStore, name: &str, ci: usize, co: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv: Conv1d::new(store, &format!("{name}.conv"), ci, co, 3, stride, 1, rng),
            bn: BatchNorm1d::new(store, &format!("{name}.bn"), co),
        }
    }

    fn forward(&self, g: &mut Graph, store: &mut ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let h = self.conv.forward(g, store, x)?;
        let h = self.bn.forward(g, store, h, mode)?;
        Ok(g.relu(h))
    }
}

#[derive(Debug, Clone, PartialEq)]
struct UpBlock {
    up: ConvTranspose1d,
    up_bn: BatchNorm1d,
    merge: ConvBn,
}

impl UpBlock {
    fn new(store: &mut ParamStore, name: &str, ci: usize, co: usize, skip: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            up: ConvTranspose1d::new(store, &format!("{name}.up"), ci, co, 4, 2, 1, rng),
            up_bn: BatchNorm1d::new(store, &format!("{name}.up_bn"), co),
            merge: ConvBn::new(store, &format!("{name}.merge"), co + skip, co, 1, rng),
        }
    }

    fn forward(&self, g: &mut Graph, store: &mut ParamStore, x: Var, skip: Var, mode: Mode) -> Result<Var> {
        let h = self.up.forward(g, store, x)?;
        let h = self.up_bn.forward(g, store, h, mode)?;
        let h = g.relu(h);
        let h = g.concat_channels(&[h, skip])?;
        self.merge.forward(g, store, h, mode)
    }
}

/// The noise predictor `eps_theta(x_t, t | c)` and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionalUnet {
    pub config: UnetConfig,
    pub store: ParamStore,
    stem: ConvBn,
    time_proj: Linear,
    down: [ConvBn; 3],
    up: [UpBlock; 3],
    head: Conv1d,
}

impl ConditionalUnet {
    pub fn new(config: UnetConfig, seed: u64) -> Result<Self> {
        if config.in_channels == 0 || config.widths.contains(&0) {
            bail!(InvalidArgument, "U-Net channel counts must be positive: {config:?}");
        }
        if config.time_embed_dim == 0 || config.time_embed_dim % 2 != 0 {
            bail!(InvalidArgument, "time_embed_dim must be even, got {}", config.time_embed_dim);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let [w0, w1, w2] = config.widths;
        let r = &mut rng;
        let stem = ConvBn::new(&mut store, "stem", config.in_channels, w0, 1, r);
        let time_proj = Linear::new(&mut store, "time_proj", config.time_embed_dim, w0, r);
        let down = [
            ConvBn::new(&mut store, "down1", w0, w1, 2, r),
            ConvBn::new(&mut store, "down2", w1, w2, 2, r),
            ConvBn::new(&mut store, "down3", w2, w2, 2, r),
        ];
        let up = [
            UpBlock::new(&mut store, "up3", w2, w2, w2, r),
            UpBlock::new(&mut store, "up2", w2, w1, w1, r),
            UpBlock::new(&mut store, "up1", w1, w0, w0, r),
        ];
        let head = Conv1d::new(&mut store, "head", w0, 1, 3, 1, 1, r);
        Ok(Self {
            config,
            store,
            stem,
            time_proj,
            down,
            up,
            head,
        })
    }

    /// Input lengths must be divisible by 8.
    pub fn forward(&mut self, g: &mut Graph, x: Var, ts: &[usize], mode: Mode) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != 3 || shape[1] != self.config.in_channels {
            bail!(
                Shape,
                "U-Net expects [batch, {}, len], got {shape:?}",
                self.config.in_channels
            );
        }
        if shape[2] % 8 != 0 || shape[2] == 0 {
            bail!(Shape, "U-Net input length {} is not a positive multiple of 8", shape[2]);
        }
        if ts.len() != shape[0] {
            bail!(Shape, "{} timesteps for a batch of {}", ts.len(), shape[0]);
        }
        let store = &mut self.store;
        let emb = g.input(sinusoidal_embeddings(ts, self.config.time_embed_dim, 10_000.0)?);
        let temb = self.time_proj.forward(g, store, emb)?;

        let s0 = self.stem.forward(g, store, x, mode)?;
        let s0 = g.add_channel(s0, temb)?;
        let e1 = self.down[0].forward(g, store, s0, mode)?;
        let e2 = self.down[1].forward(g, store, e1, mode)?;
        let b = self.down[2].forward(g, store, e2, mode)?;
        let d = self.up[0].forward(g, store, b, e2, mode)?;
        let d = self.up[1].forward(g, store, d, e1, mode)?;
        let d = self.up[2].forward(g, store, d, s0, mode)?;
        self.head.forward(g, store, d)
    }

    /// Inference-mode prediction on plain tensors.
    pub fn predict(&mut self, input: &Tensor, ts: &[usize]) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.input(input.clone());
        let y = self.forward(&mut g, x, ts, Mode::Eval)?;
        Ok(g.value(y).clone())
    }
}
