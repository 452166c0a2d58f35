//! Flat `key = value` run configuration.
//!
//! One file covers every module. Blank lines and `#` comments are ignored,
//! unknown or repeated keys are errors, and `--set key=value` overrides are
//! applied after the file. Optional values take `none`, pairs are written
//! `a, b`.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use deblur_core::degrade::{Boundary, DatasetOptions};
use deblur_core::eval::EvalConfig;
use deblur_core::loss::LossConfig;
use deblur_core::model::{DiscriminatorConfig, GeneratorConfig, Padding};
use deblur_core::train::{TrainConfig, TrainSetup};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub data: DatasetOptions,
    pub eval: EvalConfig,
}

fn parse<T: FromStr>(value: &str) -> Result<T, String>
where
    T::Err: Display,
{
    value.parse().map_err(|e| format!("`{value}`: {e}"))
}

fn parse_opt<T: FromStr>(value: &str) -> Result<Option<T>, String>
where
    T::Err: Display,
{
    if value == "none" { Ok(None) } else { parse(value).map(Some) }
}

fn parse_pair<T: FromStr>(value: &str) -> Result<(T, T), String>
where
    T::Err: Display,
{
    let (a, b) = value.split_once(',').ok_or_else(|| format!("`{value}`: expected two comma-separated values"))?;
    Ok((parse(a.trim())?, parse(b.trim())?))
}

fn show_opt<T: Display>(v: &Option<T>) -> String {
    v.as_ref().map_or("none".into(), |v| v.to_string())
}

fn show_pair<T: Display>((a, b): &(T, T)) -> String {
    format!("{a}, {b}")
}

fn parse_boundary(value: &str) -> Result<Boundary, String> {
    match value {
        "replicate" => Ok(Boundary::Replicate),
        "reflect" => Ok(Boundary::Reflect),
        "circular" => Ok(Boundary::Circular),
        _ => Err(format!("`{value}`: expected replicate, reflect or circular")),
    }
}

fn parse_padding(value: &str) -> Result<Padding, String> {
    match value {
        "zeros" => Ok(Padding::Zeros),
        "circular" => Ok(Padding::Circular),
        _ => Err(format!("`{value}`: expected zeros or circular")),
    }
}

fn show_padding(p: Padding) -> String {
    match p {
        Padding::Zeros => "zeros".into(),
        Padding::Circular => "circular".into(),
    }
}

impl RunConfig {
    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let (g, d, l, t, r, e) = (&self.generator, &self.discriminator, &self.loss, &self.train, &self.data.ranges, &self.eval);
        vec![
            ("seed", self.seed.to_string()),
            ("gen.head_channels", g.head_channels.to_string()),
            ("gen.head_kernel", g.head_kernel.to_string()),
            ("gen.res_blocks", g.res_blocks.to_string()),
            ("gen.res_channels", g.res_channels.to_string()),
            ("gen.res_kernel", g.res_kernel.to_string()),
            ("gen.dropout_p", g.dropout_p.to_string()),
            ("gen.leaky_alpha", g.leaky_alpha.to_string()),
            ("gen.scale_factor", g.scale_factor.to_string()),
            ("disc.layers", d.layers.to_string()),
            ("disc.base_channels", d.base_channels.to_string()),
            ("disc.max_channels", d.max_channels.to_string()),
            ("disc.downsamples", d.downsamples.to_string()),
            ("disc.leaky_alpha", d.leaky_alpha.to_string()),
            ("disc.patch_output", d.patch_output.to_string()),
            ("disc.padding", show_padding(d.padding)),
            ("loss.lambda_gp", l.lambda_gp.to_string()),
            ("loss.perceptual_layer", show_pair(&l.perceptual_layer)),
            ("loss.perceptual_weight", l.perceptual_weight.to_string()),
            ("train.learning_rate", t.learning_rate.to_string()),
            ("train.beta1", t.beta1.to_string()),
            ("train.beta2", t.beta2.to_string()),
            ("train.adam_eps", t.adam_eps.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.epochs", t.epochs.to_string()),
            ("train.critic_iters", t.critic_iters.to_string()),
            ("train.checkpoint_every", t.checkpoint_every.to_string()),
            ("train.max_iterations", show_opt(&t.max_iterations)),
            ("train.crop", show_opt(&t.crop)),
            ("train.log_wall_clock", t.log_wall_clock.to_string()),
            ("data.resolution", show_opt(&self.data.resolution)),
            ("data.max_kernels", r.max_kernels.to_string()),
            ("data.motion_length", show_pair(&r.motion_length)),
            ("data.shake_length", show_pair(&r.shake_length)),
            ("data.shake_points", show_pair(&r.shake_points)),
            ("data.defocus_radius", show_pair(&r.defocus_radius)),
            ("data.gaussian_sigma", show_pair(&r.gaussian_sigma)),
            ("data.poisson_peak", show_pair(&r.poisson_peak)),
            ("data.impulse_density", show_pair(&r.impulse_density)),
            ("data.boundary", r.boundary.to_string()),
            ("eval.wiener_nsr", e.wiener_nsr.to_string()),
            ("eval.ssim_window", e.ssim.window.to_string()),
            ("eval.ssim_k1", e.ssim.k1.to_string()),
            ("eval.ssim_k2", e.ssim.k2.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let value = value.trim();
        let (g, d, l, t) = (&mut self.generator, &mut self.discriminator, &mut self.loss, &mut self.train);
        let r = &mut self.data.ranges;
        let e = &mut self.eval;
        match key {
            "seed" => self.seed = parse(value)?,
            "gen.head_channels" => g.head_channels = parse(value)?,
            "gen.head_kernel" => g.head_kernel = parse(value)?,
            "gen.res_blocks" => g.res_blocks = parse(value)?,
            "gen.res_channels" => g.res_channels = parse(value)?,
            "gen.res_kernel" => g.res_kernel = parse(value)?,
            "gen.dropout_p" => g.dropout_p = parse(value)?,
            "gen.leaky_alpha" => g.leaky_alpha = parse(value)?,
            "gen.scale_factor" => g.scale_factor = parse(value)?,
            "disc.layers" => d.layers = parse(value)?,
            "disc.base_channels" => d.base_channels = parse(value)?,
            "disc.max_channels" => d.max_channels = parse(value)?,
            "disc.downsamples" => d.downsamples = parse(value)?,
            "disc.leaky_alpha" => d.leaky_alpha = parse(value)?,
            "disc.patch_output" => d.patch_output = parse(value)?,
            "disc.padding" => d.padding = parse_padding(value)?,
            "loss.lambda_gp" => l.lambda_gp = parse(value)?,
            "loss.perceptual_layer" => l.perceptual_layer = parse_pair(value)?,
            "loss.perceptual_weight" => l.perceptual_weight = parse(value)?,
            "train.learning_rate" => t.learning_rate = parse(value)?,
            "train.beta1" => t.beta1 = parse(value)?,
            "train.beta2" => t.beta2 = parse(value)?,
            "train.adam_eps" => t.adam_eps = parse(value)?,
            "train.batch_size" => t.batch_size = parse(value)?,
            "train.epochs" => t.epochs = parse(value)?,
            "train.critic_iters" => t.critic_iters = parse(value)?,
            "train.checkpoint_every" => t.checkpoint_every = parse(value)?,
            "train.max_iterations" => t.max_iterations = parse_opt(value)?,
            "train.crop" => t.crop = parse_opt(value)?,
            "train.log_wall_clock" => t.log_wall_clock = parse(value)?,
            "data.resolution" => self.data.resolution = parse_opt(value)?,
            "data.max_kernels" => r.max_kernels = parse(value)?,
            "data.motion_length" => r.motion_length = parse_pair(value)?,
            "data.shake_length" => r.shake_length = parse_pair(value)?,
            "data.shake_points" => r.shake_points = parse_pair(value)?,
            "data.defocus_radius" => r.defocus_radius = parse_pair(value)?,
            "data.gaussian_sigma" => r.gaussian_sigma = parse_pair(value)?,
            "data.poisson_peak" => r.poisson_peak = parse_pair(value)?,
            "data.impulse_density" => r.impulse_density = parse_pair(value)?,
            "data.boundary" => r.boundary = parse_boundary(value)?,
            "eval.wiener_nsr" => e.wiener_nsr = parse(value)?,
            "eval.ssim_window" => e.ssim.window = parse(value)?,
            "eval.ssim_k1" => e.ssim.k1 = parse(value)?,
            "eval.ssim_k2" => e.ssim.k2 = parse(value)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Applies the assignments in `text`; `origin` names the source in errors.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), String> {
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |m: String| format!("{origin}:{}: {m}", n + 1);
            let (key, value) = line.split_once('=').ok_or_else(|| at(format!("expected `key = value`, got `{line}`")))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(at(format!("key `{key}` is set twice")));
            }
            self.set(key, value).map_err(|m| at(format!("{key}: {m}")))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut cfg = RunConfig::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    /// Applies one `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), String> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| format!("--set expects key=value, got `{assignment}`"))?;
        let key = key.trim();
        self.set(key, value).map_err(|m| format!("--set {key}: {m}"))
    }

    /// Renders the selected keys (all when `prefixes` is empty) in the same
    /// syntax the parser accepts.
    pub fn render(&self, prefixes: &[&str]) -> String {
        self.entries()
            .into_iter()
            .filter(|(k, _)| prefixes.is_empty() || prefixes.iter().any(|p| k.starts_with(p)))
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn setup(&self) -> TrainSetup {
        TrainSetup {
            generator: self.generator.clone(),
            discriminator: self.discriminator.clone(),
            loss: self.loss.clone(),
            train: TrainConfig { seed: self.seed, ..self.train.clone() },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rendered_config_parses_back() {
        let mut cfg = RunConfig::default();
        cfg.set("train.crop", "16").unwrap();
        cfg.set("data.motion_length", "2.5, 9").unwrap();
        cfg.set("disc.padding", "circular").unwrap();
        let mut back = RunConfig::default();
        back.apply_text(&cfg.render(&[]), "rendered").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn every_key_accepts_its_own_value() {
        let cfg = RunConfig::default();
        for (k, v) in cfg.entries() {
            let mut c = RunConfig::default();
            c.set(k, &v).unwrap_or_else(|e| panic!("{k}: {e}"));
            assert_eq!(c, cfg, "{k}");
        }
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# desk run\n\ngen.head_channels = 32  # narrow\n", "t").unwrap();
        assert_eq!(cfg.generator.head_channels, 32);
    }

    #[test]
    fn unknown_and_repeated_keys_are_rejected() {
        let mut cfg = RunConfig::default();
        let err = cfg.apply_text("gen.heads = 3\n", "f.cfg").unwrap_err();
        assert!(err.contains("f.cfg:1") && err.contains("gen.heads"), "{err}");
        let err = cfg.apply_text("seed = 1\nseed = 2\n", "f.cfg").unwrap_err();
        assert!(err.contains("f.cfg:2"), "{err}");
        assert!(cfg.apply_text("seed\n", "f.cfg").is_err());
    }

    #[test]
    fn overrides_win_over_file_values() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("train.batch_size = 8\n", "f").unwrap();
        cfg.apply_override("train.batch_size=2").unwrap();
        assert_eq!(cfg.train.batch_size, 2);
        assert!(cfg.apply_override("train.batch_size").is_err());
        assert!(cfg.apply_override("train.batch_size=two").is_err());
    }

    #[test]
    fn optional_values() {
        let mut cfg = RunConfig::default();
        cfg.set("train.max_iterations", "200").unwrap();
        assert_eq!(cfg.train.max_iterations, Some(200));
        cfg.set("train.max_iterations", "none").unwrap();
        assert_eq!(cfg.train.max_iterations, None);
    }

    #[test]
    fn setup_carries_the_seed() {
        let cfg = RunConfig { seed: 77, ..RunConfig::default() };
        assert_eq!(cfg.setup().train.seed, 77);
    }
}
