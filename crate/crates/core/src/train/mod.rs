//! Alternating critic/generator optimization with Adam, checkpointing and
//! per-iteration loss logging.

mod adam;
pub mod checkpoint;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_step, AdamConfig, OptimizerState};

use crate::degrade::ImagePair;
use crate::error::{invalid, Error, Result};
use crate::loss::{critic_loss, generator_loss, FeatureExtractor, LossConfig};
use crate::model::{
    build_discriminator, build_generator, discriminator_forward, generator_forward, DiscriminatorConfig,
    GeneratorConfig, ModelParams, Padding,
};
use crate::raster::Image;
use crate::scalar::Scalar;
use crate::seed;
use crate::tensor::{grad, no_grad, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Critic updates per generator update.
    pub critic_iters: usize,
    pub seed: u64,
    /// Write a checkpoint every this many iterations (0 disables).
    pub checkpoint_every: usize,
    /// Stop after this many iterations even if epochs remain.
    pub max_iterations: Option<usize>,
    /// Side of the random square crops taken from each pair, if any.
    pub crop: Option<usize>,
    /// Record elapsed seconds in the log; zeros keep logs byte-comparable.
    pub log_wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 4,
            epochs: 240,
            critic_iters: 5,
            seed: 0,
            checkpoint_every: 100,
            max_iterations: None,
            crop: None,
            log_wall_clock: true,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, beta1: self.beta1, beta2: self.beta2, eps: self.adam_eps }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(invalid!("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid!("beta1 and beta2 must lie in [0, 1)"));
        }
        if !(self.adam_eps > 0.0) {
            return Err(invalid!("adam_eps must be positive"));
        }
        if self.batch_size == 0 || self.critic_iters == 0 {
            return Err(invalid!("batch_size and critic_iters must be at least 1"));
        }
        if self.crop == Some(0) {
            return Err(invalid!("crop must be positive"));
        }
        Ok(())
    }
}

/// Everything that defines a training run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainSetup {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

fn split_u64(v: u64) -> [f64; 2] {
    [(v >> 32) as f64, (v & 0xffff_ffff) as f64]
}

fn join_u64(hi: f64, lo: f64) -> u64 {
    ((hi as u64) << 32) | lo as u64
}

fn opt_usize(v: Option<usize>) -> f64 {
    v.map_or(-1.0, |x| x as f64)
}

impl TrainSetup {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        if let Some(c) = self.train.crop {
            if c % self.generator.scale_factor != 0 {
                return Err(invalid!("crop {c} is not divisible by the scale factor {}", self.generator.scale_factor));
            }
        }
        Ok(())
    }

    fn to_values(&self) -> Vec<(&'static str, Vec<f64>)> {
        let (g, d, l, t) = (&self.generator, &self.discriminator, &self.loss, &self.train);
        vec![
            ("gen.head_channels", vec![g.head_channels as f64]),
            ("gen.head_kernel", vec![g.head_kernel as f64]),
            ("gen.res_blocks", vec![g.res_blocks as f64]),
            ("gen.res_channels", vec![g.res_channels as f64]),
            ("gen.res_kernel", vec![g.res_kernel as f64]),
            ("gen.dropout_p", vec![g.dropout_p]),
            ("gen.leaky_alpha", vec![g.leaky_alpha]),
            ("gen.scale_factor", vec![g.scale_factor as f64]),
            ("disc.layers", vec![d.layers as f64]),
            ("disc.base_channels", vec![d.base_channels as f64]),
            ("disc.max_channels", vec![d.max_channels as f64]),
            ("disc.downsamples", vec![d.downsamples as f64]),
            ("disc.leaky_alpha", vec![d.leaky_alpha]),
            ("disc.patch_output", vec![f64::from(u8::from(d.patch_output))]),
            ("disc.circular", vec![f64::from(u8::from(d.padding == Padding::Circular))]),
            ("loss.lambda_gp", vec![l.lambda_gp]),
            ("loss.perceptual_layer", vec![l.perceptual_layer.0 as f64, l.perceptual_layer.1 as f64]),
            ("loss.perceptual_weight", vec![l.perceptual_weight]),
            ("train.learning_rate", vec![t.learning_rate]),
            ("train.beta1", vec![t.beta1]),
            ("train.beta2", vec![t.beta2]),
            ("train.adam_eps", vec![t.adam_eps]),
            ("train.batch_size", vec![t.batch_size as f64]),
            ("train.epochs", vec![t.epochs as f64]),
            ("train.critic_iters", vec![t.critic_iters as f64]),
            ("train.seed", split_u64(t.seed).to_vec()),
            ("train.checkpoint_every", vec![t.checkpoint_every as f64]),
            ("train.max_iterations", vec![opt_usize(t.max_iterations)]),
            ("train.crop", vec![opt_usize(t.crop)]),
            ("train.log_wall_clock", vec![f64::from(u8::from(t.log_wall_clock))]),
        ]
    }

    fn from_values(map: &BTreeMap<String, Vec<f64>>) -> Result<Self> {
        let get = |k: &str, n: usize| -> Result<&[f64]> {
            map.get(&format!("config/{k}"))
                .filter(|v| v.len() == n)
                .map(Vec::as_slice)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("missing or malformed config/{k}")))
        };
        let f = |k: &str| get(k, 1).map(|v| v[0]);
        let u = |k: &str| f(k).map(|v| v as usize);
        let b = |k: &str| f(k).map(|v| v != 0.0);
        let o = |k: &str| f(k).map(|v| if v < 0.0 { None } else { Some(v as usize) });
        let tap = get("loss.perceptual_layer", 2)?;
        let seed = get("train.seed", 2)?;
        Ok(TrainSetup {
            generator: GeneratorConfig {
                head_channels: u("gen.head_channels")?,
                head_kernel: u("gen.head_kernel")?,
                res_blocks: u("gen.res_blocks")?,
                res_channels: u("gen.res_channels")?,
                res_kernel: u("gen.res_kernel")?,
                dropout_p: f("gen.dropout_p")?,
                leaky_alpha: f("gen.leaky_alpha")?,
                scale_factor: u("gen.scale_factor")?,
            },
            discriminator: DiscriminatorConfig {
                layers: u("disc.layers")?,
                base_channels: u("disc.base_channels")?,
                max_channels: u("disc.max_channels")?,
                downsamples: u("disc.downsamples")?,
                leaky_alpha: f("disc.leaky_alpha")?,
                patch_output: b("disc.patch_output")?,
                padding: if b("disc.circular")? { Padding::Circular } else { Padding::Zeros },
            },
            loss: LossConfig {
                lambda_gp: f("loss.lambda_gp")?,
                perceptual_layer: (tap[0] as usize, tap[1] as usize),
                perceptual_weight: f("loss.perceptual_weight")?,
            },
            train: TrainConfig {
                learning_rate: f("train.learning_rate")?,
                beta1: f("train.beta1")?,
                beta2: f("train.beta2")?,
                adam_eps: f("train.adam_eps")?,
                batch_size: u("train.batch_size")?,
                epochs: u("train.epochs")?,
                critic_iters: u("train.critic_iters")?,
                seed: join_u64(seed[0], seed[1]),
                checkpoint_every: u("train.checkpoint_every")?,
                max_iterations: o("train.max_iterations")?,
                crop: o("train.crop")?,
                log_wall_clock: b("train.log_wall_clock")?,
            },
        })
    }
}

/// Complete training state.
#[derive(Clone, Debug)]
pub struct Checkpoint<T: Scalar> {
    pub setup: TrainSetup,
    pub generator: ModelParams<T>,
    pub discriminator: ModelParams<T>,
    pub gen_opt: OptimizerState<T>,
    pub disc_opt: OptimizerState<T>,
    /// Completed iterations.
    pub iteration: usize,
}

fn scalar_record<T: Scalar>(name: String, values: &[f64]) -> (String, Tensor<T>) {
    let t = if values.len() == 1 {
        Tensor::scalar(T::of(values[0]))
    } else {
        Tensor::new(&[values.len()], values.iter().map(|&v| T::of(v)).collect()).expect("rank-1 shape")
    };
    (name, t)
}

impl<T: Scalar> Checkpoint<T> {
    /// Fresh networks and optimizers for `setup`.
    pub fn initial(setup: &TrainSetup) -> Result<Self> {
        setup.validate()?;
        let s = setup.train.seed;
        let generator = build_generator(&setup.generator, seed::derive(s, "generator"))?;
        let discriminator = build_discriminator(&setup.discriminator, seed::derive(s, "discriminator"))?;
        Ok(Checkpoint {
            gen_opt: OptimizerState::new(&generator),
            disc_opt: OptimizerState::new(&discriminator),
            generator,
            discriminator,
            setup: setup.clone(),
            iteration: 0,
        })
    }

    fn records(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        for (prefix, params, opt) in [("gen", &self.generator, &self.gen_opt), ("disc", &self.discriminator, &self.disc_opt)] {
            for (name, t) in params.iter() {
                out.push((format!("{prefix}/{name}"), t.clone()));
            }
            for (k, (name, t)) in params.iter().enumerate() {
                out.push((format!("opt/{prefix}/m/{name}"), Tensor::new(t.shape(), opt.m[k].clone()).expect("moment shape")));
                out.push((format!("opt/{prefix}/v/{name}"), Tensor::new(t.shape(), opt.v[k].clone()).expect("moment shape")));
            }
            out.push(scalar_record(format!("opt/{prefix}/step"), &[opt.step as f64]));
        }
        out.push(scalar_record("train/iteration".into(), &[self.iteration as f64]));
        for (k, v) in self.setup.to_values() {
            out.push(scalar_record(format!("config/{k}"), &v));
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        checkpoint::encode(&self.records())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::write(path, &self.records())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let records = checkpoint::decode(bytes)?;
        let mut tensors = BTreeMap::new();
        let mut order = Vec::new();
        for (name, shape, values) in records {
            let t = Tensor::new(&shape, values.iter().map(|&v| T::of(v)).collect())
                .map_err(|e| Error::CorruptCheckpoint(format!("`{name}`: {e}")))?;
            order.push(name.clone());
            if tensors.insert(name.clone(), t).is_some() {
                return Err(Error::CorruptCheckpoint(format!("duplicate record `{name}`")));
            }
        }
        let config: BTreeMap<String, Vec<f64>> = tensors
            .iter()
            .filter(|(k, _)| k.starts_with("config/"))
            .map(|(k, t)| (k.clone(), t.data().iter().map(|v| v.to_f64_lossless()).collect()))
            .collect();
        let setup = TrainSetup::from_values(&config)?;
        let missing = |k: &str| Error::CorruptCheckpoint(format!("missing record `{k}`"));
        let scalar = |k: &str| -> Result<f64> {
            tensors.get(k).and_then(|t| t.item().ok()).map(|v| v.to_f64_lossless()).ok_or_else(|| missing(k))
        };
        let net = |prefix: &str| -> Result<(ModelParams<T>, OptimizerState<T>)> {
            let mut params = ModelParams::new();
            let head = format!("{prefix}/");
            for name in order.iter().filter(|n| n.starts_with(&head)) {
                params.insert(&name[head.len()..], tensors[name].clone())?;
            }
            let mut opt = OptimizerState::new(&params);
            for (k, name) in params.names().enumerate() {
                for (slot, dst) in [("m", &mut opt.m[k]), ("v", &mut opt.v[k])] {
                    let key = format!("opt/{prefix}/{slot}/{name}");
                    let t = tensors.get(&key).ok_or_else(|| missing(&key))?;
                    if t.numel() != dst.len() {
                        return Err(Error::CorruptCheckpoint(format!("`{key}` does not match its parameter")));
                    }
                    dst.copy_from_slice(t.data());
                }
            }
            opt.step = scalar(&format!("opt/{prefix}/step"))? as u64;
            Ok((params, opt))
        };
        let (generator, gen_opt) = net("gen")?;
        let (discriminator, disc_opt) = net("disc")?;
        let expected = build_generator::<T>(&setup.generator, 0)?;
        if expected.names().ne(generator.names()) || expected.tensors().iter().zip(generator.tensors()).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::CorruptCheckpoint("generator parameters do not match the stored configuration".into()));
        }
        let expected = build_discriminator::<T>(&setup.discriminator, 0)?;
        if expected.names().ne(discriminator.names()) || expected.tensors().iter().zip(discriminator.tensors()).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::CorruptCheckpoint("critic parameters do not match the stored configuration".into()));
        }
        Ok(Checkpoint { setup, generator, discriminator, gen_opt, disc_opt, iteration: scalar("train/iteration")? as usize })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// One logged iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRecord {
    pub iteration: usize,
    /// Total critic loss of the last critic update.
    pub critic_loss: f64,
    pub gen_loss: f64,
    /// Gradient penalty of the last critic update.
    pub gp: f64,
    /// Unweighted perceptual term of the generator update.
    pub perceptual: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

pub const LOG_HEADER: &str = "iter,critic_loss,gen_loss,gp,perceptual,seconds";

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{LOG_HEADER}\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}",
                r.iteration, r.critic_loss, r.gen_loss, r.gp, r.perceptual, r.seconds
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(LOG_HEADER) {
            return Err(invalid!("training log lacks the `{LOG_HEADER}` header"));
        }
        let records = lines
            .filter(|l| !l.is_empty())
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                let num = |i: usize| -> Result<f64> {
                    f.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| invalid!("bad log row `{l}`"))
                };
                Ok(LogRecord {
                    iteration: f[0].parse().map_err(|_| invalid!("bad log row `{l}`"))?,
                    critic_loss: num(1)?,
                    gen_loss: num(2)?,
                    gp: num(3)?,
                    perceptual: num(4)?,
                    seconds: num(5)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(TrainLog { records })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

pub const LOG_FILE: &str = "train_log.csv";
pub const FINAL_CHECKPOINT: &str = "final.dfck";

pub fn checkpoint_name(iteration: usize) -> String {
    format!("checkpoint_{iteration:06}.dfck")
}

/// Outcome of [`train`].
pub struct TrainOutcome<T: Scalar> {
    pub checkpoint: Checkpoint<T>,
    pub log: TrainLog,
}

/// Deterministic batch schedule: batch `b` belongs to epoch
/// `b / batches_per_epoch`, each epoch visits a seeded permutation of the
/// pairs, and the partial final batch is dropped.
struct Batches<'a, T: Scalar> {
    pairs: &'a [ImagePair<T>],
    batch_size: usize,
    per_epoch: usize,
    crop: Option<usize>,
    seed: u64,
    order: Option<(usize, Vec<usize>)>,
}

impl<T: Scalar> Batches<'_, T> {
    fn indices(&mut self, b: usize) -> Vec<usize> {
        let epoch = b / self.per_epoch;
        if self.order.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut order: Vec<usize> = (0..self.pairs.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed::derive_indexed(self.seed, "epoch", epoch as u64)));
            self.order = Some((epoch, order));
        }
        let start = (b % self.per_epoch) * self.batch_size;
        self.order.as_ref().expect("set above").1[start..start + self.batch_size].to_vec()
    }

    /// `(sharp, blurred)` batch number `b`.
    fn get(&mut self, b: usize) -> Result<(Tensor<T>, Tensor<T>)> {
        let mut sharp = Vec::with_capacity(self.batch_size);
        let mut blurred = Vec::with_capacity(self.batch_size);
        for (s, idx) in self.indices(b).into_iter().enumerate() {
            let pair = &self.pairs[idx];
            match self.crop {
                Some(c) => {
                    let (h, w) = (pair.sharp.height(), pair.sharp.width());
                    if c > h || c > w {
                        return Err(invalid!("crop {c} exceeds the {h}x{w} pair {}", pair.index));
                    }
                    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_indexed(
                        seed::derive_indexed(self.seed, "crop", b as u64),
                        "sample",
                        s as u64,
                    ));
                    let (y, x) = (rng.random_range(0..=h - c), rng.random_range(0..=w - c));
                    sharp.push(pair.sharp.crop(y, x, c, c)?);
                    blurred.push(pair.blurred.crop(y, x, c, c)?);
                }
                None => {
                    sharp.push(pair.sharp.clone());
                    blurred.push(pair.blurred.clone());
                }
            }
        }
        Ok((Image::batch(&sharp.iter().collect::<Vec<_>>())?, Image::batch(&blurred.iter().collect::<Vec<_>>())?))
    }
}

fn finite<T: Scalar>(t: &Tensor<T>, term: &str, iteration: usize) -> Result<f64> {
    let v = t.item()?.to_f64_lossless();
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { term: term.into(), iteration })
    }
}

/// Number of iterations a run of `setup` over `pairs` pairs performs.
pub fn planned_iterations(setup: &TrainSetup, pairs: usize) -> usize {
    let t = &setup.train;
    let per_epoch = pairs / t.batch_size;
    let by_epochs = t.epochs * per_epoch / (t.critic_iters + 1);
    t.max_iterations.map_or(by_epochs, |m| m.min(by_epochs))
}

/// Runs (or resumes) training. Each iteration performs `critic_iters`
/// critic updates followed by one generator update, each on its own batch.
/// With `out_dir`, periodic and final checkpoints and the CSV log are
/// written there; a resumed run keeps the log rows up to its iteration.
pub fn train<T: Scalar>(
    pairs: &[ImagePair<T>],
    setup: &TrainSetup,
    out_dir: Option<&Path>,
    resume: Option<Checkpoint<T>>,
) -> Result<TrainOutcome<T>> {
    setup.validate()?;
    if pairs.is_empty() {
        return Err(Error::EmptyDataset("no training pairs".into()));
    }
    let t = &setup.train;
    if pairs.len() < t.batch_size {
        return Err(invalid!("{} pairs cannot fill a batch of {}", pairs.len(), t.batch_size));
    }
    let mut state = match resume {
        Some(c) => {
            if c.setup.generator != setup.generator || c.setup.discriminator != setup.discriminator || c.setup.train.seed != t.seed {
                return Err(invalid!("checkpoint was written for different networks or seed"));
            }
            Checkpoint { setup: setup.clone(), ..c }
        }
        None => Checkpoint::initial(setup)?,
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let log_path: Option<PathBuf> = out_dir.map(|d| d.join(LOG_FILE));
    let mut log = match (&log_path, state.iteration) {
        (Some(p), it) if it > 0 && p.exists() => {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            let mut log = TrainLog::from_csv(&text).map_err(|e| Error::Parse { path: p.clone(), message: e.to_string() })?;
            log.records.retain(|r| r.iteration <= it);
            log
        }
        _ => TrainLog::default(),
    };

    let mut batches = Batches {
        pairs,
        batch_size: t.batch_size,
        per_epoch: pairs.len() / t.batch_size,
        crop: t.crop,
        seed: t.seed,
        order: None,
    };
    let extractor = FeatureExtractor::<T>::new(seed::derive(t.seed, "extractor"));
    let (gcfg, dcfg, lcfg, adam) = (&setup.generator, &setup.discriminator, &setup.loss, t.adam());
    let total = planned_iterations(setup, pairs.len());
    let k = t.critic_iters;
    let started = Instant::now();

    for it in state.iteration..total {
        let label = it + 1;
        let mut critic_value = 0.0;
        let mut gp_value = 0.0;
        for j in 0..k {
            let b = it * (k + 1) + j;
            let (sharp, blurred) = batches.get(b)?;
            let fake = no_grad(|| generator_forward(gcfg, &state.generator, &blurred, true, seed::derive_indexed(t.seed, "dropout", b as u64)))?;
            let leaves = state.discriminator.trainable();
            let critic = |x: &Tensor<T>| discriminator_forward(dcfg, &leaves, x);
            let loss = critic_loss(&critic, &sharp, &fake, lcfg.lambda_gp, seed::derive_indexed(t.seed, "gp", b as u64))?;
            gp_value = finite(&loss.penalty, "gradient_penalty", label)?;
            critic_value = finite(&loss.total, "critic_loss", label)?;
            let grads = grad(&loss.total, &leaves.tensors(), false)?;
            state.discriminator = adam_step(&state.discriminator, &grads, &mut state.disc_opt, &adam)?;
            if !state.discriminator.is_finite() {
                return Err(Error::NonFinite { term: "critic parameters".into(), iteration: label });
            }
        }

        let b = it * (k + 1) + k;
        let (sharp, blurred) = batches.get(b)?;
        let leaves = state.generator.trainable();
        let fake = generator_forward(gcfg, &leaves, &blurred, true, seed::derive_indexed(t.seed, "dropout", b as u64))?;
        let critic = |x: &Tensor<T>| discriminator_forward(dcfg, &state.discriminator, x);
        let loss = generator_loss(&critic, &extractor, &sharp, &fake, lcfg)?;
        let perceptual = finite(&loss.perceptual, "perceptual", label)?;
        let gen_value = finite(&loss.total, "generator_loss", label)?;
        let grads = grad(&loss.total, &leaves.tensors(), false)?;
        state.generator = adam_step(&state.generator, &grads, &mut state.gen_opt, &adam)?;
        if !state.generator.is_finite() {
            return Err(Error::NonFinite { term: "generator parameters".into(), iteration: label });
        }
        state.iteration = label;

        log.records.push(LogRecord {
            iteration: label,
            critic_loss: critic_value,
            gen_loss: gen_value,
            gp: gp_value,
            perceptual,
            seconds: if t.log_wall_clock { started.elapsed().as_secs_f64() } else { 0.0 },
        });
        if let (Some(dir), true) = (out_dir, t.checkpoint_every > 0 && label % t.checkpoint_every == 0) {
            state.save(&dir.join(checkpoint_name(label)))?;
            log.write(log_path.as_deref().expect("set with out_dir"))?;
        }
    }
    if let Some(dir) = out_dir {
        state.save(&dir.join(FINAL_CHECKPOINT))?;
        log.write(log_path.as_deref().expect("set with out_dir"))?;
    }
    Ok(TrainOutcome { checkpoint: state, log })
}
