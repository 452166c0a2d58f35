//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use deblur_core::degrade::{
    convolve_image, degrade, load_dataset, make_dataset, random_spec, BlurSpec, Boundary, DatasetOptions,
    DegradationSpec, NoiseSpec, SpecRanges,
};
use deblur_core::eval::{evaluate, psnr, wiener_deconvolve, EvalConfig, Psnr};
use deblur_core::loss::{bce_gan_loss, critic_loss, generator_loss, gradient_penalty, perceptual_loss, FeatureExtractor, LossConfig};
use deblur_core::model::{DiscriminatorConfig, GeneratorConfig};
use deblur_core::psf::{defocus_kernel, motion_kernel, DefocusSpec, Kernel, MotionBlurSpec};
use deblur_core::seed;
use deblur_core::tensor::gradcheck::gradcheck;
use deblur_core::tensor::Tensor;
use deblur_core::train::{checkpoint_name, train, Checkpoint, TrainConfig, TrainSetup, FINAL_CHECKPOINT, LOG_FILE};
use deblur_core::Result;
use rand::Rng;

const SEED: u64 = 2024;

type Outcome = std::result::Result<String, String>;

fn ensure(ok: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if ok { Ok(()) } else { Err(msg.into()) }
}

fn within(elapsed: Duration, limit: f64, what: &str) -> std::result::Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit, format!("{what} took {:.1} s (limit {limit} s)", elapsed.as_secs_f64()))
}

fn fmt_err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn nonzero(k: &Kernel<f64>) -> Vec<f64> {
    k.values().iter().copied().filter(|&v| v != 0.0).collect()
}

/// Kernel examples plus 1000 seeded random compositions; every kernel is
/// written to `dir/kernels.txt`.
fn kernels(dir: &Path) -> Outcome {
    let start = Instant::now();
    let mut text = String::new();
    let delta = motion_kernel::<f64>(&MotionBlurSpec { length: 1.0, angle: 0.7 }, 3).map_err(fmt_err)?;
    ensure(delta == Kernel::delta(3).map_err(fmt_err)?, "motion L=1 is not a delta")?;
    let line = motion_kernel::<f64>(&MotionBlurSpec { length: 5.0, angle: 0.0 }, 7).map_err(fmt_err)?;
    ensure(nonzero(&line) == vec![0.2; 5] && (-2..=2).all(|j| line.at(0, j) == 0.2), "motion L=5 is not five 0.2 taps")?;
    let disk = defocus_kernel::<f64>(&DefocusSpec { radius: 1.0 }, 5).map_err(fmt_err)?;
    let plus = [(0, 0), (1, 0), (-1, 0), (0, 1), (0, -1)];
    ensure(
        nonzero(&disk).len() == 5 && plus.iter().all(|&(i, j)| (disk.at(i, j) - 0.2).abs() < 1e-15),
        "defocus R=1 is not five 0.2 taps",
    )?;
    for k in [&delta, &line, &disk] {
        text.push_str(&k.to_text());
    }
    let mut worst = 0.0f64;
    for draw in 0..1000u64 {
        let spec = random_spec(&SpecRanges::default(), seed::derive_indexed(SEED, "kernel-draw", draw)).map_err(fmt_err)?;
        let mut all: Vec<Kernel<f64>> = spec.blurs.iter().map(BlurSpec::kernel).collect::<Result<_>>().map_err(fmt_err)?;
        all.push(spec.kernel().map_err(fmt_err)?);
        for k in &all {
            worst = worst.max((k.values().iter().sum::<f64>() - 1.0).abs());
            ensure(k.values().iter().all(|v| v.is_finite() && *v >= 0.0), format!("draw {draw}: invalid entry"))?;
        }
        text.push_str(&all.last().expect("composite").to_text());
    }
    ensure(worst <= 1e-6, format!("kernel mass deviates by {worst:e}"))?;
    fs::write(dir.join("kernels.txt"), text).map_err(fmt_err)?;
    within(start.elapsed(), 5.0, "kernel checks")?;
    Ok(format!("worst |sum - 1| = {worst:.1e} over 1000 draws, {:.2} s", start.elapsed().as_secs_f64()))
}

fn degradation(dir: &Path) -> Outcome {
    let x = common::scene(64, SEED);
    let spec = DegradationSpec::blur_only(Kernel::delta(1).map_err(fmt_err)?, Boundary::Replicate);
    let y = degrade(&x, &spec).map_err(fmt_err)?;
    ensure(y.data() == x.data(), "delta kernel changed the image")?;
    let mut worst = 0.0f64;
    for k in 0..20u64 {
        let mut spec = random_spec(&SpecRanges::default(), seed::derive_indexed(SEED, "identity", k)).map_err(fmt_err)?;
        spec.noise = NoiseSpec::none();
        spec.boundary = Boundary::Replicate;
        let img = common::scene(64, SEED + k);
        if spec.kernel().map_err(fmt_err)?.size() > 64 {
            continue;
        }
        let out = degrade(&img, &spec).map_err(fmt_err)?;
        worst = worst.max((out.mean() - img.mean()).abs());
        if k == 0 {
            out.save_png(&dir.join("degraded.png")).map_err(fmt_err)?;
        }
    }
    ensure(worst < 0.01, format!("mean drift {worst}"))?;
    Ok(format!("bit-exact identity; worst mean drift {worst:.2e}"))
}

/// Central-difference check of `sum(op(inputs) * r)` for a fixed random `r`.
fn check_op(name: &str, inputs: &[Tensor<f64>], op: impl Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>) -> std::result::Result<f64, String> {
    let shape = op(inputs).map_err(fmt_err)?.shape().to_vec();
    let mut r = common::rng(seed::derive(SEED, name));
    let proj = Tensor::from_fn(&shape, |_| r.random_range(-1.0..1.0));
    let report = gradcheck(|a| Ok(op(a)?.mul(&proj)?.sum()), inputs, 1e-5).map_err(fmt_err)?;
    ensure(report.worst() < 1e-4, format!("{name}: relative error {:e}", report.worst()))?;
    Ok(report.worst())
}

fn autodiff() -> Outcome {
    let start = Instant::now();
    let mut r = common::rng(SEED);
    let mut rand = |shape: &[usize]| common::randn(shape, &mut r);
    let mut worst = 0.0f64;
    let x = rand(&[2, 3, 6, 6]);
    let away = {
        let mut q = common::rng(SEED + 1);
        common::rand_away_from_zero(&[2, 3, 6, 6], &mut q)
    };
    let w3 = rand(&[4, 3, 3, 3]);
    let w4 = rand(&[4, 3, 4, 4]);
    let wt = rand(&[3, 2, 4, 4]);
    let (a, b) = (rand(&[3, 4]), rand(&[4, 2]));
    let positive = rand(&[2, 3]).map_abs_plus(0.5);
    let bias = rand(&[4]);
    let (scale, shift) = (rand(&[3]), rand(&[3]));

    let mut run = |name: &str, inputs: &[Tensor<f64>], op: &dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>| -> std::result::Result<(), String> {
        worst = worst.max(check_op(name, inputs, op)?);
        Ok(())
    };
    run("add", &[a.clone(), a.scale(0.3)], &|t| t[0].add(&t[1]))?;
    run("sub", &[a.clone(), a.scale(-0.7)], &|t| t[0].sub(&t[1]))?;
    run("mul", &[a.clone(), a.scale(2.0).add_scalar(0.1)], &|t| t[0].mul(&t[1]))?;
    run("pow", &[positive.clone()], &|t| Ok(t[0].powf(1.7)))?;
    run("sqrt", &[positive.clone()], &|t| Ok(t[0].sqrt()))?;
    run("ln", &[positive.clone()], &|t| Ok(t[0].ln()))?;
    run("matmul", &[a.clone(), b.clone()], &|t| t[0].matmul(&t[1]))?;
    run("transpose", &[a.clone()], &|t| t[0].transpose())?;
    run("mean_per_sample", &[x.clone()], &|t| t[0].mean_per_sample())?;
    run("broadcast", &[rand(&[2, 1, 6, 1])], &|t| t[0].broadcast_to(&[2, 3, 6, 6]))?;
    run("clamp", &[away.scale(0.4)], &|t| Ok(t[0].clamp(-0.3, 0.3)))?;
    run("conv2d", &[x.clone(), w3.clone()], &|t| t[0].conv2d(&t[1], 1, 1))?;
    run("conv2d_strided", &[x.clone(), w4.clone()], &|t| t[0].conv2d(&t[1], 2, 1))?;
    run("conv2d_transpose", &[x.clone(), wt.clone()], &|t| t[0].conv2d_transpose(&t[1], 2, 1))?;
    run("avg_pool2d", &[x.clone()], &|t| t[0].avg_pool2d(2))?;
    run("pixel_shuffle", &[rand(&[2, 8, 3, 3])], &|t| t[0].pixel_shuffle(2))?;
    run("pixel_unshuffle", &[x.clone()], &|t| t[0].pixel_unshuffle(2))?;
    run("pad_circular", &[x.clone()], &|t| t[0].pad_circular(2))?;
    run("leaky_relu", &[away.clone()], &|t| Ok(t[0].leaky_relu(0.1)))?;
    run("dropout", &[x.clone()], &|t| t[0].dropout(0.5, true, 7))?;
    run("instance_norm", &[x.clone(), scale.clone(), shift.clone()], &|t| t[0].instance_norm(1e-5, Some(&t[1]), Some(&t[2])))?;
    run("channel_bias", &[rand(&[2, 4, 3, 3]), bias.clone()], &|t| t[0].add_channel_bias(&t[1]))?;

    let ext = FeatureExtractor::<f64>::new(seed::derive(SEED, "extractor"));
    let sharp = rand(&[2, 3, 8, 8]).scale(0.5).add_scalar(0.5);
    let fake = rand(&[2, 3, 8, 8]).scale(0.5).add_scalar(0.5);
    let c1 = rand(&[3, 3, 3, 3]);
    let c2 = rand(&[1, 3, 4, 4]);
    let critic = |p: &[Tensor<f64>]| {
        let (p0, p1) = (p[0].clone(), p[1].clone());
        move |x: &Tensor<f64>| Ok(x.conv2d(&p0, 1, 1)?.leaky_relu(0.1).conv2d(&p1, 2, 1)?)
    };
    run("bce_gan_loss", &[Tensor::new(&[3], vec![0.2, 0.5, 0.9]).unwrap(), Tensor::new(&[2], vec![0.3, 0.6]).unwrap()], &|t| {
        bce_gan_loss(&t[0], &t[1])
    })?;
    for tap in [(1, 2), (2, 2), (3, 2)] {
        run(&format!("perceptual_{}_{}", tap.0, tap.1), &[fake.clone()], &|t| perceptual_loss(&ext, &sharp, &t[0], tap))?;
    }
    let cfg = LossConfig::default();
    run("generator_loss", &[fake.clone(), c1.clone(), c2.clone()], &|t| {
        Ok(generator_loss(&critic(&t[1..]), &ext, &sharp, &t[0], &cfg)?.total)
    })?;
    run("critic_wasserstein", &[c1.clone(), c2.clone()], &|t| Ok(critic_loss(&critic(t), &sharp, &fake, 10.0, 3)?.wasserstein))?;

    // Double backpropagation through the penalty: looser bound.
    let report = gradcheck(|t| gradient_penalty(&critic(t), &sharp, &fake, 10.0, 5), &[c1.clone(), c2.clone()], 1e-5).map_err(fmt_err)?;
    ensure(report.worst() < 1e-3, format!("gradient penalty: relative error {:e}", report.worst()))?;
    let report_total = gradcheck(|t| Ok(critic_loss(&critic(t), &sharp, &fake, 10.0, 5)?.total), &[c1, c2], 1e-5).map_err(fmt_err)?;
    ensure(report_total.worst() < 1e-3, format!("critic loss: relative error {:e}", report_total.worst()))?;
    within(start.elapsed(), 60.0, "gradient checks")?;
    Ok(format!(
        "worst op/loss error {worst:.1e}, penalty {:.1e}, {:.1} s",
        report.worst().max(report_total.worst()),
        start.elapsed().as_secs_f64()
    ))
}

trait AbsPlus {
    fn map_abs_plus(&self, c: f64) -> Tensor<f64>;
}

impl AbsPlus for Tensor<f64> {
    fn map_abs_plus(&self, c: f64) -> Tensor<f64> {
        Tensor::new(self.shape(), self.data().iter().map(|v| v.abs() + c).collect()).unwrap()
    }
}

fn penalty_analytics() -> Outcome {
    let mut r = common::rng(SEED + 2);
    let real = common::randn(&[6, 2], &mut r);
    let fake = common::randn(&[6, 2], &mut r);
    let linear = |w: [f64; 2]| {
        let w = Tensor::new(&[2, 1], w.to_vec()).unwrap();
        move |x: &Tensor<f64>| x.matmul(&w)
    };
    let unit = gradient_penalty(&linear([0.6, 0.8]), &real, &fake, 10.0, 1).map_err(fmt_err)?.item().map_err(fmt_err)?;
    ensure(unit.abs() < 1e-10, format!("unit-norm critic penalty {unit:e}"))?;
    let steep = gradient_penalty(&linear([3.0, 4.0]), &real, &fake, 10.0, 1).map_err(fmt_err)?.item().map_err(fmt_err)?;
    ensure((steep - 160.0).abs() < 1e-8, format!("(3,4) critic penalty {steep}"))?;
    let constant = |x: &Tensor<f64>| -> Result<Tensor<f64>> { Ok(Tensor::full(&[x.shape()[0], 1], 0.25)) };
    let loss = critic_loss(&constant, &real, &fake, 10.0, 1).map_err(fmt_err)?.total.item().map_err(fmt_err)?;
    ensure((loss - 10.0).abs() < 1e-10, format!("constant critic loss {loss}"))?;
    Ok(format!("penalties {unit:.1e} / {steep}, constant-critic loss {loss}"))
}

fn wiener(dir: &Path) -> Outcome {
    let start = Instant::now();
    let sharp = common::scene(64, SEED + 3);
    let h = motion_kernel::<f64>(&MotionBlurSpec { length: 9.0, angle: 0.0 }, 11).map_err(fmt_err)?;
    let blurred = convolve_image(&sharp, &h, Boundary::Circular).map_err(fmt_err)?;
    let rec = wiener_deconvolve(&blurred, &h, 1e-10).map_err(fmt_err)?;
    rec.save_png(&dir.join("wiener.png")).map_err(fmt_err)?;
    let db = psnr(&rec, &sharp, 1.0).map_err(fmt_err)?;
    ensure(db.db().is_none_or(|v| v >= 40.0), format!("PSNR {db} dB"))?;
    within(start.elapsed(), 5.0, "Wiener round trip")?;
    Ok(format!("PSNR {db} dB, {:.2} s", start.elapsed().as_secs_f64()))
}

fn smoke_setup() -> TrainSetup {
    TrainSetup {
        generator: GeneratorConfig::desk(),
        discriminator: DiscriminatorConfig { downsamples: 2, ..DiscriminatorConfig::desk() },
        loss: LossConfig::default(),
        train: TrainConfig {
            seed: SEED,
            crop: Some(16),
            max_iterations: Some(200),
            checkpoint_every: 20,
            log_wall_clock: false,
            ..TrainConfig::default()
        },
    }
}

/// Dataset generation, 200 training iterations and evaluation.
fn smoke(dir: &Path) -> Outcome {
    let start = Instant::now();
    let scenes = dir.join("scenes");
    common::write_scenes(&scenes, 10, 96, SEED);
    let data = dir.join("dataset");
    make_dataset(&scenes, 50, SEED, &data, &DatasetOptions::default()).map_err(fmt_err)?;
    let pairs = load_dataset::<f64>(&data).map_err(fmt_err)?;
    ensure(pairs.len() == 50, format!("{} pairs", pairs.len()))?;
    let setup = smoke_setup();
    let run = dir.join("run");
    let out = train(&pairs, &setup, Some(&run), None).map_err(|e| format!("training failed: {e}"))?;
    let log = &out.log.records;
    ensure(log.len() == 200, format!("{} logged iterations", log.len()))?;
    let (first, last) = (log[0].perceptual, log[199].perceptual);
    ensure(last < first, format!("perceptual term rose from {first:.4e} to {last:.4e}"))?;
    let report = evaluate(&setup.generator, &out.checkpoint.generator, &pairs, &EvalConfig::default(), Some(&dir.join("eval")))
        .map_err(fmt_err)?;
    let mean = |p: Option<Psnr>| p.and_then(Psnr::db).unwrap_or(f64::NAN);
    let (blur, restored) = (mean(report.mean_psnr_blur()), mean(report.mean_psnr_restored()));
    let gain = restored - blur;
    let elapsed = start.elapsed().as_secs_f64();
    let detail = format!(
        "perceptual {first:.4e} -> {last:.4e}; PSNR blurred {blur:.3} dB, restored {restored:.3} dB (gain {gain:+.3} dB); {elapsed:.0} s"
    );
    ensure(gain >= 1.0, format!("PSNR gain below 1 dB: {detail}"))?;
    within(start.elapsed(), 600.0, "smoke training")?;
    Ok(detail)
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn determinism(first: &Path, second: &Path) -> Outcome {
    kernels(second)?;
    degradation(second)?;
    wiener(second)?;
    // a failing smoke run still leaves its artifacts to compare
    let _ = smoke(second);
    let (a, b) = (files(first), files(second));
    ensure(a == b, "re-run produced a different file set")?;
    for f in &a {
        ensure(fs::read(first.join(f)).unwrap() == fs::read(second.join(f)).unwrap(), format!("{} differs", f.display()))?;
    }
    Ok(format!("{} artifacts byte-identical", a.len()))
}

fn checkpoints(first: &Path) -> Outcome {
    let run = first.join("run");
    let bytes = fs::read(run.join(FINAL_CHECKPOINT)).map_err(fmt_err)?;
    let loaded = Checkpoint::<f64>::load(&run.join(FINAL_CHECKPOINT)).map_err(fmt_err)?;
    ensure(loaded.to_bytes() == bytes, "save(load(x)) differs from x")?;
    let pairs = load_dataset::<f64>(&first.join("dataset")).map_err(fmt_err)?;
    let resumed_dir = first.join("resumed");
    fs::create_dir_all(&resumed_dir).map_err(fmt_err)?;
    fs::copy(run.join(LOG_FILE), resumed_dir.join(LOG_FILE)).map_err(fmt_err)?;
    let ck = Checkpoint::<f64>::load(&run.join(checkpoint_name(180))).map_err(fmt_err)?;
    ensure(ck.iteration == 180, "checkpoint 180 has the wrong iteration")?;
    let out = train(&pairs, &smoke_setup(), Some(&resumed_dir), Some(ck)).map_err(fmt_err)?;
    ensure(out.checkpoint.iteration == 200, "resume did not reach iteration 200")?;
    for name in [FINAL_CHECKPOINT, LOG_FILE] {
        let same = fs::read(run.join(name)).map_err(fmt_err)? == fs::read(resumed_dir.join(name)).map_err(fmt_err)?;
        ensure(same, format!("resumed {name} differs from the uninterrupted run"))?;
    }
    for it in [200usize] {
        let same = fs::read(run.join(checkpoint_name(it))).map_err(fmt_err)? == fs::read(resumed_dir.join(checkpoint_name(it))).map_err(fmt_err)?;
        ensure(same, format!("resumed checkpoint {it} differs"))?;
    }
    Ok(format!("{} bytes round-trip; 20 resumed iterations match", bytes.len()))
}

fn main() -> ExitCode {
    let root = tempfile::tempdir().expect("temporary directory");
    let (first, second) = (root.path().join("a"), root.path().join("b"));
    fs::create_dir_all(&first).unwrap();
    fs::create_dir_all(&second).unwrap();
    let mut results: Vec<(usize, &str, Outcome)> = Vec::new();
    results.push((1, "kernel correctness", kernels(&first)));
    results.push((2, "degradation identity", degradation(&first)));
    results.push((3, "autodiff suite", autodiff()));
    results.push((4, "gradient-penalty analytics", penalty_analytics()));
    results.push((5, "Wiener round trip", wiener(&first)));
    results.push((6, "smoke training", smoke(&first)));
    results.push((7, "determinism", determinism(&first, &second)));
    results.push((8, "checkpoint round trip", checkpoints(&first)));
    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("criterion {n} ({name}): PASS - {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL - {detail}");
            }
        }
    }
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
