use crate::error::{bail, Result};
use crate::nn::Tensor;

/// Linear variance schedule and its cumulative products, indexed `0..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// `beta = linspace(beta_start, beta_end, T)`, `alpha = 1 - beta`,
/// `alpha_bar[t] = prod(alpha[0..=t])`.
pub fn build_schedule(t: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if t < 2 {
        bail!(InvalidArgument, "schedule needs T >= 2, got {t}");
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        bail!(
            InvalidArgument,
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        );
    }
    let step = (beta_end - beta_start) / (t - 1) as f64;
    let mut beta: Vec<f64> = (0..t).map(|i| beta_start + step * i as f64).collect();
    beta[t - 1] = beta_end;
    let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bar = Vec::with_capacity(t);
    let mut acc = 1.0;
    for a in &alpha {
        acc *= a;
        alpha_bar.push(acc);
    }
    Ok(NoiseSchedule {
        beta,
        alpha,
        alpha_bar,
    })
}

impl NoiseSchedule {
    /// 1000 steps from 1e-4 to 0.02.
    pub fn standard() -> Self {
        build_schedule(1000, 1e-4, 0.02).expect("valid constants")
    }

    /// A shorter chain whose betas are the standard ones scaled by `1000/T`,
    /// so the total injected variance (and final `alpha_bar`) stays close to
    /// the 1000-step chain.
    pub fn compressed(t: usize) -> Result<Self> {
        let k = 1000.0 / t as f64;
        build_schedule(t, 1e-4 * k, (0.02 * k).min(0.999))
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t >= self.len() {
            bail!(InvalidArgument, "timestep {t} out of range for T = {}", self.len());
        }
        Ok(())
    }
}

fn check_noise(x: &Tensor, noise: &Tensor) -> Result<()> {
    if x.shape() != noise.shape() {
        bail!(Shape, "noise {:?} does not match signal {:?}", noise.shape(), x.shape());
    }
    Ok(())
}

/// One Markov step: `sqrt(alpha_t) x_prev + sqrt(1 - alpha_t) noise`.
pub fn forward_diffuse_step(x_prev: &Tensor, t: usize, s: &NoiseSchedule, noise: &Tensor) -> Result<Tensor> {
    s.check_t(t)?;
    check_noise(x_prev, noise)?;
    let (a, b) = (s.alpha[t].sqrt(), (1.0 - s.alpha[t]).sqrt());
    x_prev.zip_map(noise, |x, e| a * x + b * e)
}

/// Closed-form marginal: `sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) noise`.
pub fn forward_diffuse_closed(x0: &Tensor, t: usize, s: &NoiseSchedule, noise: &Tensor) -> Result<Tensor> {
    s.check_t(t)?;
    check_noise(x0, noise)?;
    let (a, b) = (s.alpha_bar[t].sqrt(), (1.0 - s.alpha_bar[t]).sqrt());
    x0.zip_map(noise, |x, e| a * x + b * e)
}
