use super::tensor::Tensor;
use crate::error::{bail, Result};

/// Transformer-style timestep encoding: sines in the first half, cosines in
/// the second, frequencies `max_period^(-2i/dim)`.
pub fn sinusoidal_embedding(t: usize, dim: usize, max_period: f64) -> Result<Tensor> {
    if dim == 0 || dim % 2 != 0 {
        bail!(InvalidArgument, "embedding dim must be a positive even number, got {dim}");
    }
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let arg = t as f64 / max_period.powf(2.0 * i as f64 / dim as f64);
        out[i] = arg.sin();
        out[half + i] = arg.cos();
    }
    Tensor::new(vec![dim], out)
}

/// Row-stacked embeddings, `[ts.len(), dim]`.
pub fn sinusoidal_embeddings(ts: &[usize], dim: usize, max_period: f64) -> Result<Tensor> {
    let mut data = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        data.extend(sinusoidal_embedding(t, dim, max_period)?.into_data());
    }
    Tensor::new(vec![ts.len(), dim], data)
}
