use crate::error::{shape_err, Result};
use crate::model::ModelParams;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 2e-4, beta1: 0.5, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates, one per parameter tensor.
#[derive(Clone, Debug)]
pub struct OptimizerState<T: Scalar> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let zeros: Vec<Vec<T>> = params.tensors().iter().map(|t| vec![T::zero(); t.numel()]).collect();
        OptimizerState { m: zeros.clone(), v: zeros, step: 0 }
    }
}

/// One bias-corrected Adam update,
/// `p ← p − lr · m̂ / (√v̂ + eps)` with `m̂ = m/(1−β₁ᵗ)`, `v̂ = v/(1−β₂ᵗ)`.
pub fn adam_step<T: Scalar>(
    params: &ModelParams<T>,
    grads: &[Tensor<T>],
    state: &mut OptimizerState<T>,
    cfg: &AdamConfig,
) -> Result<ModelParams<T>> {
    let tensors = params.tensors();
    if grads.len() != tensors.len() || state.m.len() != tensors.len() {
        return Err(shape_err!("{} gradients and {} moment slots for {} parameters", grads.len(), state.m.len(), tensors.len()));
    }
    state.step += 1;
    let t = state.step as f64;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (c1, c2) = (T::of(1.0 - cfg.beta1.powf(t)), T::of(1.0 - cfg.beta2.powf(t)));
    let (lr, eps) = (T::of(cfg.learning_rate), T::of(cfg.eps));
    let mut updated = Vec::with_capacity(tensors.len());
    for (k, p) in tensors.iter().enumerate() {
        let g = grads[k].data();
        if g.len() != p.numel() || state.m[k].len() != p.numel() {
            return Err(shape_err!("gradient {:?} for parameter {:?}", grads[k].shape(), p.shape()));
        }
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        let data = p
            .data()
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                w - lr * m_hat / (v_hat.sqrt() + eps)
            })
            .collect();
        updated.push(Tensor::new(p.shape(), data)?);
    }
    params.with_tensors(updated)
}
