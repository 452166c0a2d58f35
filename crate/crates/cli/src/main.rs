//! `deblur`: kernels, synthetic datasets, training, inference and
//! evaluation from the command line.
//!
//! Exit status is 0 on success, 1 for runtime or data errors and 2 for
//! usage errors.

mod config;
mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use deblur_core::degrade::{list_images, load_dataset, make_dataset};
use deblur_core::eval::{evaluate, restore, REPORT_FILE};
use deblur_core::psf::{
    defocus_kernel, defocus_size, motion_kernel, motion_size, shake_kernel, shake_size, DefocusSpec, Kernel,
    MotionBlurSpec, ShakeSpec,
};
use deblur_core::raster::Image;
use deblur_core::train::{planned_iterations, train, Checkpoint, FINAL_CHECKPOINT, LOG_FILE};
use deblur_core::{seed, Real};

use config::RunConfig;

const LOSS_CURVE: &str = "loss_curve.png";

#[derive(Parser)]
#[command(name = "deblur", version, about = "Synthetic blur generation and adversarial deblurring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a blur kernel as a text grid plus a PNG preview.
    Kernel(KernelArgs),
    /// Degrade a directory of sharp images into a paired dataset.
    Dataset(DatasetArgs),
    /// Train the generator and critic on a dataset.
    Train(TrainArgs),
    /// Restore one image or every image in a directory.
    Infer(InferArgs),
    /// Score a checkpoint on a dataset and write triptychs.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KernelKind {
    Motion,
    Shake,
    Defocus,
}

#[derive(Args)]
struct KernelArgs {
    #[arg(long = "type", value_enum, value_name = "TYPE")]
    kind: KernelKind,
    /// Motion length or shake trajectory length in pixels.
    #[arg(long, required_if_eq_any([("kind", "motion"), ("kind", "shake")]))]
    length: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    angle_deg: f64,
    /// Defocus disk radius in pixels.
    #[arg(long, required_if_eq("kind", "defocus"))]
    radius: Option<f64>,
    /// Shake trajectory control points.
    #[arg(long, default_value_t = 4)]
    points: usize,
    /// Odd grid side; defaults to the smallest grid holding the kernel.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Text grid path; the PNG goes next to it with a `.png` extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConfigArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, applied after the file (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct DatasetArgs {
    #[arg(long)]
    sharp_dir: PathBuf,
    #[arg(long)]
    n_pairs: usize,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Continue from a checkpoint written by an identical run.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// An image, or a directory of images.
    #[arg(long)]
    input: PathBuf,
    /// Output image, or output directory when the input is a directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<deblur_core::Error> for Failure {
    fn from(e: deblur_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Kernel(a) => cmd_kernel(a),
        Command::Dataset(a) => cmd_dataset(a),
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

/// Defaults, then the file, then `--set`, then `--seed`.
fn resolve(args: &ConfigArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path).map_err(Failure::Runtime)?,
        None => RunConfig::default(),
    };
    for s in &args.set {
        cfg.apply_override(s).map_err(Failure::Usage)?;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn print_config(command: &str, body: &str) {
    print!("# deblur {command}: resolved configuration\n{body}");
}

fn require_exists(path: &Path) -> CmdResult {
    if path.exists() {
        Ok(())
    } else {
        Err(Failure::Runtime(format!("{}: no such file or directory", path.display())))
    }
}

fn cmd_kernel(a: KernelArgs) -> CmdResult {
    let angle = a.angle_deg.to_radians();
    let (spec_text, kernel): (String, deblur_core::Result<Kernel<f64>>) = match a.kind {
        KernelKind::Motion => {
            let length = a.length.unwrap_or_default();
            let size = a.size.unwrap_or_else(|| motion_size(length));
            let text = format!("type = motion\nlength = {length}\nangle_deg = {}\nsize = {size}\n", a.angle_deg);
            (text, motion_kernel(&MotionBlurSpec { length, angle }, size))
        }
        KernelKind::Shake => {
            let length = a.length.unwrap_or_default();
            let size = a.size.unwrap_or_else(|| shake_size(length));
            let text = format!("type = shake\nlength = {length}\npoints = {}\nsize = {size}\nseed = {}\n", a.points, a.seed);
            let spec = ShakeSpec { control_points: a.points, trajectory_length: length, seed: seed::derive(a.seed, "shake") };
            (text, shake_kernel(&spec, size))
        }
        KernelKind::Defocus => {
            let radius = a.radius.unwrap_or_default();
            let size = a.size.unwrap_or_else(|| defocus_size(radius));
            let text = format!("type = defocus\nradius = {radius}\nsize = {size}\n");
            (text, defocus_kernel(&DefocusSpec { radius }, size))
        }
    };
    let png = a.out.with_extension("png");
    if png == a.out {
        return Err(Failure::Usage("--out names the text grid and must not end in .png".into()));
    }
    print_config("kernel", &format!("{spec_text}out = {}\n", a.out.display()));
    let kernel = kernel?;
    kernel.save_text(&a.out)?;
    kernel.save_png(&png)?;
    println!("wrote {} and {}", a.out.display(), png.display());
    Ok(())
}

fn cmd_dataset(a: DatasetArgs) -> CmdResult {
    let cfg = resolve(&a.config)?;
    print_config(
        "dataset",
        &format!(
            "sharp_dir = {}\nn_pairs = {}\nout_dir = {}\n{}",
            a.sharp_dir.display(),
            a.n_pairs,
            a.out_dir.display(),
            cfg.render(&["seed", "data."])
        ),
    );
    require_exists(&a.sharp_dir)?;
    let manifest = make_dataset(&a.sharp_dir, a.n_pairs, cfg.seed, &a.out_dir, &cfg.data)?;
    println!("{}", manifest.display());
    Ok(())
}

fn cmd_train(a: TrainArgs) -> CmdResult {
    let cfg = resolve(&a.config)?;
    let mut body = format!("dataset = {}\nout_dir = {}\n", a.dataset.display(), a.out_dir.display());
    if let Some(r) = &a.resume {
        body += &format!("resume = {}\n", r.display());
    }
    body += &cfg.render(&["seed", "gen.", "disc.", "loss.", "train."]);
    print_config("train", &body);

    require_exists(&a.dataset)?;
    let pairs = load_dataset::<Real>(&a.dataset)?;
    let resume = match &a.resume {
        Some(path) => Some(Checkpoint::<Real>::load(path)?),
        None => None,
    };
    let setup = cfg.setup();
    println!("training {} iterations on {} pairs", planned_iterations(&setup, pairs.len()), pairs.len());
    let outcome = train(&pairs, &setup, Some(&a.out_dir), resume)?;
    let curve = a.out_dir.join(LOSS_CURVE);
    plot::loss_curve(&outcome.log)
        .save(&curve)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", curve.display())))?;
    if let Some(last) = outcome.log.records.last() {
        println!(
            "iteration {}: critic {:.6e}, generator {:.6e}, penalty {:.6e}, perceptual {:.6e}",
            last.iteration, last.critic_loss, last.gen_loss, last.gp, last.perceptual
        );
    }
    println!(
        "wrote {}, {} and {}",
        a.out_dir.join(FINAL_CHECKPOINT).display(),
        a.out_dir.join(LOG_FILE).display(),
        curve.display()
    );
    Ok(())
}

fn generator_config_text(ck: &Checkpoint<Real>) -> String {
    let cfg = RunConfig { generator: ck.setup.generator.clone(), ..RunConfig::default() };
    cfg.render(&["gen."])
}

fn cmd_infer(a: InferArgs) -> CmdResult {
    require_exists(&a.checkpoint)?;
    let ck = Checkpoint::<Real>::load(&a.checkpoint)?;
    print_config(
        "infer",
        &format!(
            "checkpoint = {}\ninput = {}\nout = {}\n{}",
            a.checkpoint.display(),
            a.input.display(),
            a.out.display(),
            generator_config_text(&ck)
        ),
    );
    require_exists(&a.input)?;
    let run = |src: &Path, dst: &Path| -> CmdResult {
        let img = Image::<Real>::load_png(src)?;
        restore(&ck.setup.generator, &ck.generator, &img)?.save_png(dst)?;
        println!("{} -> {}", src.display(), dst.display());
        Ok(())
    };
    if a.input.is_dir() {
        std::fs::create_dir_all(&a.out).map_err(|e| Failure::Runtime(format!("{}: {e}", a.out.display())))?;
        for src in list_images(&a.input)? {
            let stem = src.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
            run(&src, &a.out.join(format!("{stem}.png")))?;
        }
        Ok(())
    } else {
        run(&a.input, &a.out)
    }
}

fn cmd_eval(a: EvalArgs) -> CmdResult {
    let cfg = resolve(&a.config)?;
    require_exists(&a.checkpoint)?;
    let ck = Checkpoint::<Real>::load(&a.checkpoint)?;
    print_config(
        "eval",
        &format!(
            "checkpoint = {}\ndataset = {}\nout_dir = {}\n{}{}",
            a.checkpoint.display(),
            a.dataset.display(),
            a.out_dir.display(),
            cfg.render(&["eval."]),
            generator_config_text(&ck)
        ),
    );
    require_exists(&a.dataset)?;
    let pairs = load_dataset::<Real>(&a.dataset)?;
    let report = evaluate(&ck.setup.generator, &ck.generator, &pairs, &cfg.eval, Some(&a.out_dir))?;
    let show = |p: Option<deblur_core::eval::Psnr>| p.map_or("n/a".to_string(), |p| p.to_string());
    println!(
        "mean PSNR blurred {} dB, restored {} dB, Wiener {} dB; mean SSIM restored {}",
        show(report.mean_psnr_blur()),
        show(report.mean_psnr_restored()),
        show(report.mean_psnr_wiener()),
        report.mean_ssim_restored().map_or("n/a".to_string(), |s| format!("{s:.6}"))
    );
    println!("wrote {}", a.out_dir.join(REPORT_FILE).display());
    Ok(())
}
