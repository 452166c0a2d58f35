//! Adversarial and perceptual objectives: the cross-entropy GAN loss (kept
//! as a reference), the Wasserstein critic loss with gradient penalty, the
//! feature-space L2 loss and the combined generator objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, shape_err, Result};
use crate::scalar::Scalar;
use crate::tensor::{grad, Tensor};

/// Anything mapping an image batch `[N, ...]` to scores `[N, ...]`.
pub trait Critic<T: Scalar> {
    fn score(&self, x: &Tensor<T>) -> Result<Tensor<T>>;
}

impl<T: Scalar, F: Fn(&Tensor<T>) -> Result<Tensor<T>>> Critic<T> for F {
    fn score(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self(x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda_gp: f64,
    /// `(i, j)`: `j`-th convolution of the stage before the `i`-th pooling.
    pub perceptual_layer: (usize, usize),
    pub perceptual_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig { lambda_gp: 10.0, perceptual_layer: (1, 1), perceptual_weight: 100.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_gp >= 0.0) || !(self.perceptual_weight >= 0.0) {
            return Err(invalid!("lambda_gp and perceptual_weight must be >= 0"));
        }
        FeatureExtractor::<f64>::check_tap(self.perceptual_layer)
    }
}

/// Mean score per sample, `[N]`-shaped as `[N, 1, ...]`.
fn per_sample<T: Scalar>(critic: &impl Critic<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    critic.score(x)?.mean_per_sample()
}

/// `−½·mean(log d_real) − ½·mean(log(1 − d_fake))` for probabilities in `(0, 1)`.
pub fn bce_gan_loss<T: Scalar>(d_real: &Tensor<T>, d_fake: &Tensor<T>) -> Result<Tensor<T>> {
    for t in [d_real, d_fake] {
        if t.data().iter().any(|&p| !(p > T::zero() && p < T::one())) {
            return Err(invalid!("discriminator probabilities must lie strictly inside (0, 1)"));
        }
    }
    let half = T::of(0.5);
    let real = d_real.ln().mean().scale(-half);
    let fake = d_fake.neg().add_scalar(T::one()).ln().mean().scale(-half);
    real.add(&fake)
}

/// `λ·mean((‖∇D(x̂)‖₂ − 1)²)` over interpolates `x̂ = ε·real + (1 − ε)·fake`
/// with one `ε ~ U(0, 1)` per sample. Differentiable with respect to the
/// critic's parameters. Per-sample gradients come from differentiating the
/// summed scores, so the critic must treat samples independently.
pub fn gradient_penalty<T: Scalar>(
    critic: &impl Critic<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    lambda_gp: f64,
    seed: u64,
) -> Result<Tensor<T>> {
    if real.shape() != fake.shape() {
        return Err(shape_err!("real {:?} and fake {:?} batches differ", real.shape(), fake.shape()));
    }
    let n = *real.shape().first().ok_or_else(|| shape_err!("gradient penalty needs a batch axis"))?;
    let per = real.numel() / n.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps: Vec<T> = (0..n).map(|_| T::of(rng.random::<f64>())).collect();
    let weights: Vec<T> = eps.iter().flat_map(|&e| std::iter::repeat_n(e, per)).collect();

    let mut x_hat = fake.add(&real.sub(fake)?.mul_const(&weights)?)?;
    if !x_hat.requires_grad() {
        x_hat = x_hat.requires_grad_leaf();
    }
    let scores = per_sample(critic, &x_hat)?.sum();
    let g = grad(&scores, &[&x_hat], true)?.remove(0);
    let norms = g.reshape(&[n, per])?.square().sum_to(&[n, 1])?.sqrt();
    Ok(norms.add_scalar(-T::one()).square().mean().scale(T::of(lambda_gp)))
}

/// Critic objective and its parts.
#[derive(Clone)]
pub struct CriticLoss<T: Scalar> {
    pub total: Tensor<T>,
    /// `mean D(fake) − mean D(real)`
    pub wasserstein: Tensor<T>,
    pub penalty: Tensor<T>,
}

/// `mean D(fake) − mean D(real) + gradient_penalty`, minimized by the critic.
pub fn critic_loss<T: Scalar>(
    critic: &impl Critic<T>,
    real: &Tensor<T>,
    fake: &Tensor<T>,
    lambda_gp: f64,
    seed: u64,
) -> Result<CriticLoss<T>> {
    let wasserstein = per_sample(critic, fake)?.mean().sub(&per_sample(critic, real)?.mean())?;
    let penalty = gradient_penalty(critic, real, fake, lambda_gp, seed)?;
    Ok(CriticLoss { total: wasserstein.add(&penalty)?, wasserstein, penalty })
}

/// Frozen random convolutional feature network: three stages of two 3×3
/// convolutions with ReLU (64, 32, 64 channels), separated by 2×2 average
/// pooling. Weights are He-initialized from the seed and never trained.
#[derive(Clone, Debug)]
pub struct FeatureExtractor<T: Scalar> {
    weights: Vec<Tensor<T>>,
}

const STAGE_WIDTHS: [usize; 3] = [64, 32, 64];

impl<T: Scalar> FeatureExtractor<T> {
    pub fn new(seed: u64) -> Self {
        let mut weights = Vec::with_capacity(6);
        let mut in_c = 3;
        for (s, &w) in STAGE_WIDTHS.iter().enumerate() {
            for j in 0..2 {
                let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::derive_indexed(seed, "features", (2 * s + j) as u64));
                let normal = Normal::new(0.0, (2.0 / (in_c * 9) as f64).sqrt()).expect("positive std");
                weights.push(Tensor::from_fn(&[w, in_c, 3, 3], |_| T::of(normal.sample(&mut rng))));
                in_c = w;
            }
        }
        FeatureExtractor { weights }
    }

    fn check_tap((i, j): (usize, usize)) -> Result<()> {
        if !(1..=3).contains(&i) || !(1..=2).contains(&j) {
            return Err(invalid!("feature tap ({i}, {j}) outside (1..=3, 1..=2)"));
        }
        Ok(())
    }

    /// Activation of tap `(i, j)` for `[N, 3, H, W]` input.
    pub fn features(&self, x: &Tensor<T>, tap: (usize, usize)) -> Result<Tensor<T>> {
        Self::check_tap(tap)?;
        let last = 2 * (tap.0 - 1) + tap.1 - 1;
        let mut h = x.clone();
        for (k, w) in self.weights.iter().enumerate().take(last + 1) {
            if k > 0 && k % 2 == 0 {
                h = h.avg_pool2d(2)?;
            }
            h = h.conv2d(w, 1, 1)?.leaky_relu(T::zero());
        }
        Ok(h)
    }
}

/// `(1/(w·h))·Σ_{c,x,y} (φ(sharp) − φ(generated))²`, averaged over the batch.
pub fn perceptual_loss<T: Scalar>(
    extractor: &FeatureExtractor<T>,
    sharp: &Tensor<T>,
    generated: &Tensor<T>,
    tap: (usize, usize),
) -> Result<Tensor<T>> {
    if sharp.shape() != generated.shape() {
        return Err(shape_err!("sharp {:?} and generated {:?} differ", sharp.shape(), generated.shape()));
    }
    let diff = extractor.features(sharp, tap)?.sub(&extractor.features(generated, tap)?)?;
    let [n, _, h, w] = diff.dims4()?;
    let area = T::from_usize(h * w).expect("area fits");
    Ok(diff.square().sum_to(&[n, 1, 1, 1])?.mean().scale(T::one() / area))
}

/// Generator objective and its parts.
#[derive(Clone)]
pub struct GeneratorLoss<T: Scalar> {
    pub total: Tensor<T>,
    /// `−mean D(generated)`
    pub adversarial: Tensor<T>,
    /// Unweighted perceptual term.
    pub perceptual: Tensor<T>,
}

/// `−mean D(generated) + perceptual_weight · perceptual_loss(sharp, generated)`.
pub fn generator_loss<T: Scalar>(
    critic: &impl Critic<T>,
    extractor: &FeatureExtractor<T>,
    sharp: &Tensor<T>,
    generated: &Tensor<T>,
    cfg: &LossConfig,
) -> Result<GeneratorLoss<T>> {
    let adversarial = per_sample(critic, generated)?.mean().neg();
    let perceptual = perceptual_loss(extractor, sharp, generated, cfg.perceptual_layer)?;
    let total = adversarial.add(&perceptual.scale(T::of(cfg.perceptual_weight)))?;
    Ok(GeneratorLoss { total, adversarial, perceptual })
}
