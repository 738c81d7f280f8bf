use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{bail, Result};

/// Adam moments for a fixed parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub params: Vec<ParamId>,
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
}

impl AdamState {
    /// Moments start at zero; betas (0.9, 0.999), eps 1e-8.
    pub fn new(store: &ParamStore, params: Vec<ParamId>, lr: f64) -> Self {
        Self::with_betas(store, params, lr, 0.9, 0.999)
    }

    pub fn with_betas(store: &ParamStore, params: Vec<ParamId>, lr: f64, beta1: f64, beta2: f64) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(|&id| Tensor::zeros(store.value(id).shape())).collect();
        Self {
            step_count: 0,
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            params,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }
}

/// One bias-corrected Adam update. Gradients are read, not cleared.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    for &id in &state.params {
        if store.grad(id).is_none() {
            bail!(InvalidArgument, "parameter `{}` has no gradient", store.name(id));
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    let (b1, b2, lr, eps) = (state.beta1, state.beta2, state.lr, state.eps);
    for (k, &id) in state.params.iter().enumerate() {
        let grad = store.grad(id).expect("checked above").data().to_vec();
        let m = state.first_moment[k].data_mut();
        let v = state.second_moment[k].data_mut();
        let w = store.value_mut(id).data_mut();
        for i in 0..w.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            w[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

/// Step decay: `initial_lr * 0.5^floor(epoch / halve_every)`.
pub fn lr_schedule(initial_lr: f64, epoch: usize, halve_every: usize) -> f64 {
    let halvings = epoch / halve_every.max(1);
    initial_lr * 0.5f64.powi(halvings as i32)
}
