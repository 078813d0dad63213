//! Adam with bias-corrected first/second moments.

use super::{Result, TrainError};
use crate::nn::ParamSet;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState<S> {
    m: Vec<Tensor<S>>,
    v: Vec<Tensor<S>>,
    step: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn for_params(params: &ParamSet<S>) -> Self {
        Self {
            m: params.tensors().map(|t| Tensor::zeros(t.shape())).collect(),
            v: params.tensors().map(|t| Tensor::zeros(t.shape())).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One optimizer step. `grads` must align with the parameter order.
/// Rejects non-finite gradients without touching any parameter.
pub fn adam_step<S: Scalar>(
    params: &mut ParamSet<S>,
    grads: &[Tensor<S>],
    state: &mut AdamState<S>,
    lr: f64,
    hp: &AdamHyper,
) -> Result<()> {
    for ((name, p), grad) in params.iter().zip(grads.iter()) {
        if p.shape() != grad.shape() {
            return Err(crate::tensor::TensorError::ShapeMismatch {
                op: "adam_step",
                detail: format!("param `{}` {:?} vs grad {:?}", name, p.shape(), grad.shape()),
            }
            .into());
        }
        if !grad.all_finite() {
            return Err(TrainError::BadGradient(name.to_string()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    for (idx, (_, p)) in params.iter_mut().enumerate() {
        let g = grads[idx].data();
        let m = state.m[idx].data_mut();
        let v = state.v[idx].data_mut();
        let pd = p.data_mut();
        for i in 0..pd.len() {
            let gi = g[i].to_f64();
            let mi = hp.beta1 * m[i].to_f64() + (1.0 - hp.beta1) * gi;
            let vi = hp.beta2 * v[i].to_f64() + (1.0 - hp.beta2) * gi * gi;
            m[i] = S::from_f64(mi);
            v[i] = S::from_f64(vi);
            let mhat = mi / bc1;
            let vhat = vi / bc2;
            pd[i] = S::from_f64(pd[i].to_f64() - lr * mhat / (vhat.sqrt() + hp.eps));
        }
    }
    Ok(())
}
