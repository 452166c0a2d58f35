use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Op, Tensor};
use crate::error::{invalid, shape_err, Result};
use crate::scalar::Scalar;

/// Visits `(input_flat, output_flat)` pairs of the pixel-shuffle permutation
/// `out[n, c, h·r + i, w·r + j] = in[n, c·r² + i·r + j, h, w]`.
fn shuffle_pairs(n: usize, c_out: usize, h: usize, w: usize, r: usize, mut f: impl FnMut(usize, usize)) {
    let (oh, ow) = (h * r, w * r);
    for b in 0..n {
        for c in 0..c_out {
            for i in 0..r {
                for j in 0..r {
                    let ci = c * r * r + i * r + j;
                    for y in 0..h {
                        for x in 0..w {
                            let src = ((b * c_out * r * r + ci) * h + y) * w + x;
                            let dst = ((b * c_out + c) * oh + y * r + i) * ow + x * r + j;
                            f(src, dst);
                        }
                    }
                }
            }
        }
    }
}

/// Source index along one axis of a circularly padded extent.
fn wrap(i: usize, pad: usize, len: usize) -> usize {
    (i + len - pad % len) % len
}

impl<T: Scalar> Tensor<T> {
    /// Average pooling with a square window equal to the stride.
    pub fn avg_pool2d(&self, window: usize) -> Result<Tensor<T>> {
        let [n, c, h, w] = self.dims4()?;
        if window == 0 || h % window != 0 || w % window != 0 {
            return Err(shape_err!("avg_pool2d: {}x{} is not divisible by window {}", h, w, window));
        }
        let (oh, ow) = (h / window, w / window);
        let inv = T::one() / T::from_usize(window * window).expect("window fits");
        let src = self.data();
        let mut data = vec![T::zero(); n * c * oh * ow];
        for p in 0..n * c {
            for y in 0..h {
                for x in 0..w {
                    let o = (p * oh + y / window) * ow + x / window;
                    data[o] = data[o] + src[(p * h + y) * w + x];
                }
            }
        }
        data.iter_mut().for_each(|v| *v = *v * inv);
        Ok(Tensor::from_op(vec![n, c, oh, ow], data, Op::AvgPool(self.clone(), window)))
    }

    /// Adjoint of [`Tensor::avg_pool2d`]: spreads each value evenly over its
    /// window.
    pub(crate) fn avg_unpool2d(&self, window: usize) -> Result<Tensor<T>> {
        let [n, c, oh, ow] = self.dims4()?;
        let (h, w) = (oh * window, ow * window);
        let inv = T::one() / T::from_usize(window * window).expect("window fits");
        let src = self.data();
        let mut data = Vec::with_capacity(n * c * h * w);
        for p in 0..n * c {
            for y in 0..h {
                for x in 0..w {
                    data.push(src[(p * oh + y / window) * ow + x / window] * inv);
                }
            }
        }
        Ok(Tensor::from_op(vec![n, c, h, w], data, Op::AvgUnpool(self.clone(), window)))
    }

    /// Rearranges `[N, C·r², H, W]` into `[N, C, H·r, W·r]`.
    pub fn pixel_shuffle(&self, r: usize) -> Result<Tensor<T>> {
        let [n, c, h, w] = self.dims4()?;
        if r == 0 || c % (r * r) != 0 {
            return Err(shape_err!("pixel_shuffle: {} channels not divisible by r² = {}", c, r * r));
        }
        let c_out = c / (r * r);
        let src = self.data();
        let mut data = vec![T::zero(); self.numel()];
        shuffle_pairs(n, c_out, h, w, r, |s, d| data[d] = src[s]);
        Ok(Tensor::from_op(vec![n, c_out, h * r, w * r], data, Op::PixelShuffle(self.clone(), r)))
    }

    /// Inverse of [`Tensor::pixel_shuffle`].
    pub fn pixel_unshuffle(&self, r: usize) -> Result<Tensor<T>> {
        let [n, c, oh, ow] = self.dims4()?;
        if r == 0 || oh % r != 0 || ow % r != 0 {
            return Err(shape_err!("pixel_unshuffle: {}x{} not divisible by {}", oh, ow, r));
        }
        let (h, w) = (oh / r, ow / r);
        let src = self.data();
        let mut data = vec![T::zero(); self.numel()];
        shuffle_pairs(n, c, h, w, r, |s, d| data[s] = src[d]);
        Ok(Tensor::from_op(vec![n, c * r * r, h, w], data, Op::PixelUnshuffle(self.clone(), r)))
    }

    /// Pads both spatial axes by `pad` with wrap-around values.
    pub fn pad_circular(&self, pad: usize) -> Result<Tensor<T>> {
        let [n, c, h, w] = self.dims4()?;
        if pad > h || pad > w {
            return Err(shape_err!("pad_circular: padding {} exceeds {}x{}", pad, h, w));
        }
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let src = self.data();
        let mut data = Vec::with_capacity(n * c * ph * pw);
        for p in 0..n * c {
            for y in 0..ph {
                let sy = wrap(y, pad, h);
                for x in 0..pw {
                    data.push(src[(p * h + sy) * w + wrap(x, pad, w)]);
                }
            }
        }
        Ok(Tensor::from_op(vec![n, c, ph, pw], data, Op::PadCircular(self.clone(), pad)))
    }

    /// Adjoint of [`Tensor::pad_circular`]: folds the border back, summing.
    pub(crate) fn fold_circular(&self, pad: usize) -> Result<Tensor<T>> {
        let [n, c, ph, pw] = self.dims4()?;
        let (h, w) = (ph - 2 * pad, pw - 2 * pad);
        let src = self.data();
        let mut data = vec![T::zero(); n * c * h * w];
        for p in 0..n * c {
            for y in 0..ph {
                let sy = wrap(y, pad, h);
                for x in 0..pw {
                    let d = (p * h + sy) * w + wrap(x, pad, w);
                    data[d] = data[d] + src[(p * ph + y) * pw + x];
                }
            }
        }
        Ok(Tensor::from_op(vec![n, c, h, w], data, Op::FoldCircular(self.clone(), pad)))
    }

    /// `x` for `x ≥ 0`, `alpha·x` otherwise.
    pub fn leaky_relu(&self, alpha: T) -> Tensor<T> {
        let mask = self
            .data()
            .iter()
            .map(|&x| if x >= T::zero() { T::one() } else { alpha })
            .collect();
        self.mask_mul(Arc::new(mask))
    }

    /// Inverted dropout: in training each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1−p)`. Identity
    /// otherwise. The mask is a pure function of `seed`.
    pub fn dropout(&self, p: f64, training: bool, seed: u64) -> Result<Tensor<T>> {
        if !(0.0..=1.0).contains(&p) {
            return Err(invalid!("dropout probability {} outside [0, 1]", p));
        }
        if !training || p == 0.0 {
            return Ok(self.clone());
        }
        let keep = if p >= 1.0 { T::zero() } else { T::of(1.0 / (1.0 - p)) };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = (0..self.numel())
            .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
            .collect();
        Ok(self.mask_mul(Arc::new(mask)))
    }

    /// Per-sample, per-channel normalization of `[N, C, H, W]` to zero mean
    /// and unit (biased) variance, followed by an optional per-channel
    /// affine map. Constant planes map to zero.
    pub fn instance_norm(&self, eps: T, scale: Option<&Tensor<T>>, shift: Option<&Tensor<T>>) -> Result<Tensor<T>> {
        let [n, c, h, w] = self.dims4()?;
        let stats = [n, c, 1, 1];
        let inv_area = T::one() / T::from_usize(h * w).expect("area fits");
        let mean = self.sum_to(&stats)?.scale(inv_area);
        let centered = self.sub(&mean.broadcast_to(self.shape())?)?;
        let var = centered.square().sum_to(&stats)?.scale(inv_area);
        let inv_std = var.add_scalar(eps).powf(T::of(-0.5));
        let mut out = centered.mul(&inv_std.broadcast_to(self.shape())?)?;
        if let Some(s) = scale {
            out = out.mul(&channel_broadcast(s, c, self.shape())?)?;
        }
        if let Some(b) = shift {
            out = out.add(&channel_broadcast(b, c, self.shape())?)?;
        }
        Ok(out)
    }

    /// Adds a per-channel bias `[C]` to `[N, C, H, W]`.
    pub fn add_channel_bias(&self, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let [_, c, _, _] = self.dims4()?;
        self.add(&channel_broadcast(bias, c, self.shape())?)
    }
}

fn channel_broadcast<T: Scalar>(v: &Tensor<T>, channels: usize, shape: &[usize]) -> Result<Tensor<T>> {
    if v.numel() != channels {
        return Err(shape_err!("per-channel parameter {:?} for {} channels", v.shape(), channels));
    }
    v.reshape(&[1, channels, 1, 1])?.broadcast_to(shape)
}
