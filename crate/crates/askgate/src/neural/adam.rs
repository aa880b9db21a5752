//! Adam optimizer over [`ParamSet`] tensors.

use super::{ParamSet, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> AdamParams {
        AdamParams {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators mirroring a parameter set, plus the
/// step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub hp: AdamParams,
    pub step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &ParamSet, hp: AdamParams) -> AdamState {
        let zeros: Vec<Tensor> = params
            .tensors
            .iter()
            .map(|t| Tensor::zeros(t.rows, t.cols))
            .collect();
        AdamState {
            hp,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update. Updated parameters are rounded through
/// `f32` to match the storage format.
pub fn adam_step(params: &mut ParamSet, grads: &ParamSet, state: &mut AdamState) {
    assert_eq!(params.tensors.len(), grads.tensors.len());
    state.step += 1;
    let hp = state.hp;
    let bc1 = 1.0 - hp.beta1.powi(state.step as i32);
    let bc2 = 1.0 - hp.beta2.powi(state.step as i32);
    for ((p, g), (m, v)) in params
        .tensors
        .iter_mut()
        .zip(grads.tensors.iter())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        debug_assert_eq!(p.data.len(), g.data.len());
        for i in 0..p.data.len() {
            let gi = g.data[i];
            m.data[i] = hp.beta1 * m.data[i] + (1.0 - hp.beta1) * gi;
            v.data[i] = hp.beta2 * v.data[i] + (1.0 - hp.beta2) * gi * gi;
            let m_hat = m.data[i] / bc1;
            let v_hat = v.data[i] / bc2;
            let next = p.data[i] - hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
            p.data[i] = (next as f32) as f64;
        }
    }
}
