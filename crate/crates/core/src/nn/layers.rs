use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{LayerParams, ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::Result;

/// Batch-norm behaviour.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn fan_in_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    Tensor::uniform(shape, (1.0 / fan_in as f64).sqrt(), rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
    name: String,
}

impl Conv1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            fan_in_uniform(&[c_out, c_in, kernel], c_in * kernel, rng),
        );
        let bias = store.add(
            format!("{name}.bias"),
            fan_in_uniform(&[c_out], c_in * kernel, rng),
        );
        Self {
            weight,
            bias,
            stride,
            padding,
            name: name.to_string(),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv1d(x, w, Some(b), self.stride, self.padding)
    }

    pub fn params(&self) -> LayerParams {
        LayerParams {
            identifier: self.name.clone(),
            params: vec![self.weight, self.bias],
        }
    }
}

/// Weight layout `[c_in, c_out, kernel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose1d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub padding: usize,
    name: String,
}

impl ConvTranspose1d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            fan_in_uniform(&[c_in, c_out, kernel], c_in * kernel, rng),
        );
        let bias = store.add(
            format!("{name}.bias"),
            fan_in_uniform(&[c_out], c_in * kernel, rng),
        );
        Self {
            weight,
            bias,
            stride,
            padding,
            name: name.to_string(),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv_transpose1d(x, w, Some(b), self.stride, self.padding)
    }

    pub fn params(&self) -> LayerParams {
        LayerParams {
            identifier: self.name.clone(),
            params: vec![self.weight, self.bias],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    name: String,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), fan_in_uniform(&[d_out, d_in], d_in, rng));
        let bias = store.add(format!("{name}.bias"), fan_in_uniform(&[d_out], d_in, rng));
        Self {
            weight,
            bias,
            name: name.to_string(),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Result<Var> {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, Some(b))
    }

    pub fn params(&self) -> LayerParams {
        LayerParams {
            identifier: self.name.clone(),
            params: vec![self.weight, self.bias],
        }
    }
}

/// Running statistics start at mean 0, variance 1, so eval mode before any
/// training step is a plain affine map.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm1d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub momentum: f64,
    pub eps: f64,
    name: String,
}

impl BatchNorm1d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(&[channels])),
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[channels])),
            running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(&[channels])),
            running_var: store.add_buffer(format!("{name}.running_var"), Tensor::ones(&[channels])),
            momentum: 0.1,
            eps: 1e-5,
            name: name.to_string(),
        }
    }

    /// Train mode normalises with batch statistics and folds them into the
    /// running estimates (unbiased variance); eval mode uses the estimates.
    pub fn forward(&self, g: &mut Graph, store: &mut ParamStore, x: Var, mode: Mode) -> Result<Var> {
        let gamma = g.param(store, self.gamma);
        let beta = g.param(store, self.beta);
        match mode {
            Mode::Train => {
                let (y, stats) = g.batchnorm_train(x, gamma, beta, self.eps)?;
                let m = self.momentum;
                let correction = stats.count as f64 / (stats.count as f64 - 1.0);
                for (r, b) in store.value_mut(self.running_mean).data_mut().iter_mut().zip(&stats.mean) {
                    *r = (1.0 - m) * *r + m * b;
                }
                for (r, b) in store.value_mut(self.running_var).data_mut().iter_mut().zip(&stats.var) {
                    *r = (1.0 - m) * *r + m * b * correction;
                }
                Ok(y)
            }
            Mode::Eval => {
                let mean = store.value(self.running_mean).data().to_vec();
                let var = store.value(self.running_var).data().to_vec();
                g.batchnorm_eval(x, gamma, beta, &mean, &var, self.eps)
            }
        }
    }

    pub fn params(&self) -> LayerParams {
        LayerParams {
            identifier: self.name.clone(),
            params: vec![self.gamma, self.beta, self.running_mean, self.running_var],
        }
    }
}
