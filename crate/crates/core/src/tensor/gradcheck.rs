//! Central finite-difference gradient checking.

use super::{backward, Tensor};
use crate::error::Result;
use crate::scalar::Scalar;

/// Outcome of comparing analytic and numeric gradients.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Largest `|analytic − numeric| / max(1, |numeric|)` per input.
    pub max_rel_err: Vec<f64>,
}

impl GradCheck {
    pub fn worst(&self) -> f64 {
        self.max_rel_err.iter().cloned().fold(0.0, f64::max)
    }
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` against
/// central differences with step `eps`, for every element of every input.
pub fn gradcheck<T, F>(f: F, inputs: &[Tensor<T>], eps: f64) -> Result<GradCheck>
where
    T: Scalar,
    F: Fn(&[Tensor<T>]) -> Result<Tensor<T>>,
{
    let leaves: Vec<Tensor<T>> = inputs.iter().map(|t| t.requires_grad_leaf()).collect();
    let loss = f(&leaves)?;
    let grads = backward(&loss)?;
    // Probes run with gradient recording on: `f` may itself differentiate
    // (gradient penalties), which needs a live graph.
    let eval = |args: &[Tensor<T>]| -> Result<f64> { Ok(f(args)?.item()?.to_f64_lossless()) };

    let mut max_rel_err = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(&leaves[i]);
        let mut worst = 0.0f64;
        for k in 0..input.numel() {
            let probe = |delta: f64| -> Result<f64> {
                let mut values = input.to_vec();
                values[k] = T::of(values[k].to_f64_lossless() + delta);
                let mut args = inputs.to_vec();
                args[i] = Tensor::new(input.shape(), values)?;
                eval(&args)
            };
            let numeric = (probe(eps)? - probe(-eps)?) / (2.0 * eps);
            let a = analytic.data()[k].to_f64_lossless();
            worst = worst.max((a - numeric).abs() / numeric.abs().max(1.0));
        }
        max_rel_err.push(worst);
    }
    Ok(GradCheck { max_rel_err })
}
