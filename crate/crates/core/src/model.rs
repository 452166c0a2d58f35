//! Generator (U-Net style residual chain with a global skip) and
//! Markovian patch critic, with their learnable parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, shape_err, Result};
use crate::scalar::Scalar;
use crate::seed;
use crate::tensor::Tensor;

/// Standard deviation of the initial convolution weights.
pub const INIT_STD: f64 = 0.02;
/// Instance-norm variance floor.
pub const NORM_EPS: f64 = 1e-5;

/// Named parameter tensors in construction order.
#[derive(Clone, Debug, Default)]
pub struct ModelParams<T: Scalar> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn new() -> Self {
        ModelParams { entries: Vec::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(invalid!("duplicate parameter `{name}`"));
        }
        self.entries.push((name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| invalid!("missing parameter `{name}`"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        self.entries.iter().map(|(_, t)| t).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|(_, t)| t.is_finite())
    }

    /// Same names with fresh gradient-tracking leaves holding the same values.
    pub fn trainable(&self) -> Self {
        self.map(|t| t.detach().requires_grad_leaf())
    }

    pub fn detached(&self) -> Self {
        self.map(Tensor::detach)
    }

    pub fn map(&self, f: impl Fn(&Tensor<T>) -> Tensor<T>) -> Self {
        ModelParams { entries: self.entries.iter().map(|(n, t)| (n.clone(), f(t))).collect() }
    }

    /// Replaces every tensor, keeping names and order; shapes must match.
    pub fn with_tensors(&self, tensors: Vec<Tensor<T>>) -> Result<Self> {
        if tensors.len() != self.entries.len() {
            return Err(shape_err!("{} tensors for {} parameters", tensors.len(), self.entries.len()));
        }
        let entries = self
            .entries
            .iter()
            .zip(tensors)
            .map(|((n, old), new)| {
                if old.shape() != new.shape() {
                    return Err(shape_err!("parameter `{n}`: {:?} replaced by {:?}", old.shape(), new.shape()));
                }
                Ok((n.clone(), new))
            })
            .collect::<Result<_>>()?;
        Ok(ModelParams { entries })
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams { entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect() }
    }
}

struct Init<'a, T: Scalar> {
    params: &'a mut ModelParams<T>,
    seed: u64,
}

impl<T: Scalar> Init<'_, T> {
    /// `N(0, INIT_STD²)` truncated at ±5σ, keyed by the parameter name.
    fn conv(&mut self, name: String, out_c: usize, in_c: usize, k: usize) -> Result<()> {
        self.weight(name, [out_c, in_c, k, k])
    }

    fn weight(&mut self, name: String, shape: [usize; 4]) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(self.seed, &name));
        let normal = Normal::new(0.0, INIT_STD).expect("positive std");
        let w = Tensor::from_fn(&shape, |_| loop {
            let v: f64 = normal.sample(&mut rng);
            if v.abs() <= 5.0 * INIT_STD {
                break T::of(v);
            }
        });
        self.params.insert(name, w)
    }

    fn constant(&mut self, name: String, shape: &[usize], value: f64) -> Result<()> {
        self.params.insert(name, Tensor::full(shape, T::of(value)))
    }

    fn norm(&mut self, prefix: &str, channels: usize) -> Result<()> {
        self.constant(format!("{prefix}.scale"), &[channels], 1.0)?;
        self.constant(format!("{prefix}.shift"), &[channels], 0.0)
    }
}

fn norm_act<T: Scalar>(x: &Tensor<T>, p: &ModelParams<T>, prefix: &str, alpha: T) -> Result<Tensor<T>> {
    let y = x.instance_norm(T::of(NORM_EPS), Some(p.get(&format!("{prefix}.scale"))?), Some(p.get(&format!("{prefix}.shift"))?))?;
    Ok(y.leaky_relu(alpha))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    pub head_channels: usize,
    pub head_kernel: usize,
    pub res_blocks: usize,
    pub res_channels: usize,
    pub res_kernel: usize,
    pub dropout_p: f64,
    pub leaky_alpha: f64,
    /// Overall down/up-sampling factor, a power of two.
    pub scale_factor: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            head_channels: 256,
            head_kernel: 7,
            res_blocks: 7,
            res_channels: 128,
            res_kernel: 5,
            dropout_p: 0.5,
            leaky_alpha: 0.1,
            scale_factor: 2,
        }
    }
}

impl GeneratorConfig {
    /// 32 head channels, 16 residual channels, 3 blocks.
    pub fn desk() -> Self {
        GeneratorConfig { head_channels: 32, res_channels: 16, res_blocks: 3, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.res_blocks == 0 || self.head_channels == 0 || self.res_channels == 0 {
            return Err(invalid!("generator needs res_blocks >= 1 and positive channel counts"));
        }
        if self.head_kernel % 2 == 0 || self.res_kernel % 2 == 0 {
            return Err(invalid!("generator kernel sizes must be odd"));
        }
        if !self.scale_factor.is_power_of_two() {
            return Err(invalid!("scale_factor must be a power of two, got {}", self.scale_factor));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(invalid!("dropout_p must lie in [0, 1), got {}", self.dropout_p));
        }
        Ok(())
    }

    fn stages(&self) -> usize {
        self.scale_factor.trailing_zeros() as usize
    }
}

/// Seeded generator parameters. The final convolution and its bias start
/// at zero so the untrained generator is the identity.
pub fn build_generator<T: Scalar>(cfg: &GeneratorConfig, seed: u64) -> Result<ModelParams<T>> {
    cfg.validate()?;
    let (h, r, k) = (cfg.head_channels, cfg.res_channels, cfg.res_kernel);
    let mut params = ModelParams::new();
    let mut init = Init { params: &mut params, seed };
    init.conv("head.conv".into(), h, 3, cfg.head_kernel)?;
    init.norm("head.norm", h)?;
    for s in 0..cfg.stages() {
        init.conv(format!("down{s}.conv"), h, h, cfg.head_kernel)?;
        init.norm(&format!("down{s}.norm"), h)?;
    }
    for b in 0..cfg.res_blocks {
        for c in 0..4 {
            let input = if b == 0 && c == 0 { h } else { r };
            init.conv(format!("block{b}.conv{c}"), r, input, k)?;
            init.norm(&format!("block{b}.norm{c}"), r)?;
        }
    }
    for s in 0..cfg.stages() {
        let input = if s == 0 { r } else { h };
        init.conv(format!("up{s}.shuffle_conv"), 4 * h, input, 3)?;
        init.weight(format!("up{s}.transpose"), [input, h, 4, 4])?;
        init.norm(&format!("up{s}.norm"), h)?;
    }
    init.conv("rear1.conv".into(), h, h, 3)?;
    init.norm("rear1.norm", h)?;
    init.constant("rear2.conv".into(), &[3, h, 3, 3], 0.0)?;
    init.constant("rear2.bias".into(), &[3], 0.0)?;
    Ok(params)
}

/// Number of scalars [`build_generator`] allocates for `cfg`.
pub fn generator_param_count(cfg: &GeneratorConfig) -> usize {
    let (h, r, k) = (cfg.head_channels, cfg.res_channels, cfg.res_kernel);
    let hk = cfg.head_kernel * cfg.head_kernel;
    let s = cfg.stages();
    let head = 3 * h * hk + 2 * h;
    let down = s * (h * h * hk + 2 * h);
    let blocks = cfg.res_blocks * (4 * r * r * k * k + 8 * r) + (h - r) * r * k * k;
    let up = if s == 0 { 0 } else { (4 * h * r * 9 + r * h * 16 + 2 * h) + (s - 1) * (4 * h * h * 9 + h * h * 16 + 2 * h) };
    let rear = (h * h * 9 + 2 * h) + (3 * h * 9 + 3);
    head + down + blocks + up + rear
}

/// Restores a batch `[N, 3, H, W]`; `H` and `W` must be divisible by the
/// scale factor. Dropout is active only when `training`.
pub fn generator_forward<T: Scalar>(
    cfg: &GeneratorConfig,
    p: &ModelParams<T>,
    blurred: &Tensor<T>,
    training: bool,
    seed: u64,
) -> Result<Tensor<T>> {
    let [_, c, height, width] = blurred.dims4()?;
    if c != 3 {
        return Err(shape_err!("generator expects 3 channels, got {c}"));
    }
    if height % cfg.scale_factor != 0 || width % cfg.scale_factor != 0 {
        return Err(shape_err!("{height}x{width} input is not divisible by the scale factor {}", cfg.scale_factor));
    }
    let alpha = T::of(cfg.leaky_alpha);
    let hp = cfg.head_kernel / 2;
    let rp = cfg.res_kernel / 2;

    let mut x = norm_act(&blurred.conv2d(p.get("head.conv")?, 1, hp)?, p, "head.norm", alpha)?;
    let mut skips = Vec::with_capacity(cfg.stages());
    for s in 0..cfg.stages() {
        skips.push(x.clone());
        // odd kernels with stride 2 and half padding halve even extents
        let conv = x.conv2d(p.get(&format!("down{s}.conv"))?, 2, hp)?;
        let conv = norm_act(&conv, p, &format!("down{s}.norm"), alpha)?;
        x = x.avg_pool2d(2)?.add(&conv)?;
    }

    let mut carry: Option<Tensor<T>> = None;
    for b in 0..cfg.res_blocks {
        let mut acts = Vec::with_capacity(4);
        for c in 0..4 {
            let mut a = norm_act(&x.conv2d(p.get(&format!("block{b}.conv{c}"))?, 1, rp)?, p, &format!("block{b}.norm{c}"), alpha)?;
            if c == 0 {
                if let Some(prev) = &carry {
                    a = a.add(prev)?;
                }
            }
            if c == 1 {
                a = a.dropout(cfg.dropout_p, training, seed::derive_indexed(seed, "dropout", b as u64))?;
            }
            acts.push(a.clone());
            x = a;
        }
        carry = Some(acts[2].clone());
    }

    for s in 0..cfg.stages() {
        let shuffled = x.conv2d(p.get(&format!("up{s}.shuffle_conv"))?, 1, 1)?.pixel_shuffle(2)?;
        let transposed = x.conv2d_transpose(p.get(&format!("up{s}.transpose"))?, 2, 1)?;
        x = norm_act(&shuffled.add(&transposed)?, p, &format!("up{s}.norm"), alpha)?;
        // encoder features at the matching resolution
        x = x.add(&skips[cfg.stages() - 1 - s])?;
    }
    x = norm_act(&x.conv2d(p.get("rear1.conv")?, 1, 1)?, p, "rear1.norm", alpha)?;
    let residual = x.conv2d(p.get("rear2.conv")?, 1, 1)?.add_channel_bias(p.get("rear2.bias")?)?;
    Ok(blurred.add(&residual)?.clamp(T::zero(), T::one()))
}

/// Padding applied by the critic's convolutions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Padding {
    #[default]
    Zeros,
    Circular,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    pub layers: usize,
    pub base_channels: usize,
    pub max_channels: usize,
    /// Number of stride-2 layers.
    pub downsamples: usize,
    pub leaky_alpha: f64,
    /// Emit the score map; otherwise its spatial mean as a 1×1 map.
    pub patch_output: bool,
    pub padding: Padding,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            layers: 10,
            base_channels: 64,
            max_channels: 512,
            downsamples: 3,
            leaky_alpha: 0.1,
            patch_output: true,
            padding: Padding::Zeros,
        }
    }
}

/// Geometry of one critic layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CriticLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub bias: bool,
    pub norm: bool,
}

impl DiscriminatorConfig {
    pub fn desk() -> Self {
        DiscriminatorConfig { base_channels: 16, max_channels: 128, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers < 2 {
            return Err(invalid!("the critic needs at least 2 layers"));
        }
        if self.base_channels == 0 || self.max_channels < self.base_channels {
            return Err(invalid!("critic channels must satisfy 0 < base_channels <= max_channels"));
        }
        if 2 * self.downsamples > self.layers - 1 {
            return Err(invalid!("{} layers cannot hold {} stride-2 layers", self.layers, self.downsamples));
        }
        Ok(())
    }

    /// Layer `l` has stride 2 when `l` is odd and fewer than `downsamples`
    /// strided layers precede it; strided layers use 4×4 kernels and double
    /// the channel count up to the cap, the others are 3×3. The first layer
    /// has a bias and no norm, the last maps to one channel with a bias.
    pub fn plan(&self) -> Vec<CriticLayer> {
        let mut out = Vec::with_capacity(self.layers);
        let mut ch = 3;
        let mut strided = 0;
        for l in 0..self.layers {
            let last = l + 1 == self.layers;
            let down = l % 2 == 1 && strided < self.downsamples && !last;
            let next = if last {
                1
            } else if l == 0 {
                self.base_channels
            } else if down {
                (ch * 2).min(self.max_channels)
            } else {
                ch
            };
            strided += usize::from(down);
            out.push(CriticLayer {
                in_channels: ch,
                out_channels: next,
                kernel: if down { 4 } else { 3 },
                stride: if down { 2 } else { 1 },
                bias: l == 0 || last,
                norm: l != 0 && !last,
            });
            ch = next;
        }
        out
    }
}

pub fn build_discriminator<T: Scalar>(cfg: &DiscriminatorConfig, seed: u64) -> Result<ModelParams<T>> {
    cfg.validate()?;
    let mut params = ModelParams::new();
    let mut init = Init { params: &mut params, seed };
    for (l, layer) in cfg.plan().iter().enumerate() {
        init.conv(format!("layer{l}.conv"), layer.out_channels, layer.in_channels, layer.kernel)?;
        if layer.bias {
            init.constant(format!("layer{l}.bias"), &[layer.out_channels], 0.0)?;
        }
        if layer.norm {
            init.norm(&format!("layer{l}.norm"), layer.out_channels)?;
        }
    }
    Ok(params)
}

pub fn discriminator_param_count(cfg: &DiscriminatorConfig) -> usize {
    cfg.plan()
        .iter()
        .map(|l| {
            l.out_channels * l.in_channels * l.kernel * l.kernel
                + if l.bias { l.out_channels } else { 0 }
                + if l.norm { 2 * l.out_channels } else { 0 }
        })
        .sum()
}

/// Unbounded critic scores `[N, 1, h, w]`, one per receptive-field patch.
pub fn discriminator_forward<T: Scalar>(cfg: &DiscriminatorConfig, p: &ModelParams<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
    let alpha = T::of(cfg.leaky_alpha);
    let plan = cfg.plan();
    let mut h = x.clone();
    for (l, layer) in plan.iter().enumerate() {
        let w = p.get(&format!("layer{l}.conv"))?;
        h = match cfg.padding {
            Padding::Zeros => h.conv2d(w, layer.stride, 1)?,
            Padding::Circular => h.pad_circular(1)?.conv2d(w, layer.stride, 0)?,
        };
        if layer.bias {
            h = h.add_channel_bias(p.get(&format!("layer{l}.bias"))?)?;
        }
        if layer.norm {
            h = norm_act(&h, p, &format!("layer{l}.norm"), alpha)?;
        } else if l + 1 < plan.len() {
            h = h.leaky_relu(alpha);
        }
    }
    if cfg.patch_output {
        Ok(h)
    } else {
        let n = h.shape()[0];
        h.sum_to(&[n, 1, 1, 1]).map(|s| s.scale(T::one() / T::from_usize(h.numel() / n).expect("fits")))
    }
}
