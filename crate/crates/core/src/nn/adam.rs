use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam moments and hyperparameters for one [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamSet, lr: f64, weight_decay: f64) -> Self {
        Self::with_moments(params, lr, weight_decay, 0, None)
    }

    pub(crate) fn with_moments(
        params: &ParamSet,
        lr: f64,
        weight_decay: f64,
        step: u64,
        moments: Option<(Vec<Tensor>, Vec<Tensor>)>,
    ) -> Self {
        let (first, second) = moments.unwrap_or_else(|| {
            let zeros: Vec<Tensor> = params.values().iter().map(|t| Tensor::zeros(t.dims())).collect();
            (zeros.clone(), zeros)
        });
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step, first, second }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.second
    }
}

/// Bias-corrected Adam with decoupled weight decay (`p *= 1 - lr * wd` before the
/// adaptive step). Gradients are zeroed afterwards.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState) -> Result<()> {
    if state.first.len() != params.len() {
        return Err(Error::InvalidState(format!(
            "optimizer tracks {} tensors, parameter set has {}",
            state.first.len(),
            params.len()
        )));
    }
    for (i, g) in params.grads().iter().enumerate() {
        if g.dims() != state.first[i].dims() {
            return Err(Error::InvalidState(format!(
                "gradient for {:?} has shape {:?}, expected {:?}",
                params.names().nth(i).unwrap_or("?"),
                g.dims(),
                state.first[i].dims()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    let decay = 1.0 - state.lr * state.weight_decay;
    for (i, g) in params.grads().iter().enumerate() {
        let m = state.first[i].values_mut();
        let v = state.second[i].values_mut();
        for ((mk, vk), gk) in m.iter_mut().zip(v.iter_mut()).zip(g.values()) {
            *mk = state.beta1 * *mk + (1.0 - state.beta1) * gk;
            *vk = state.beta2 * *vk + (1.0 - state.beta2) * gk * gk;
        }
    }
    for i in 0..params.len() {
        let id = super::params::ParamId(i);
        let p = params.value_mut(id).values_mut();
        let m = state.first[i].values();
        let v = state.second[i].values();
        for ((pk, mk), vk) in p.iter_mut().zip(m).zip(v) {
            *pk *= decay;
            *pk -= state.lr * (mk / bc1) / ((vk / bc2).sqrt() + state.eps);
        }
    }
    params.zero_grads();
    Ok(())
}
