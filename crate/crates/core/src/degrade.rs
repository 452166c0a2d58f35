//! The degradation model `y = x * h + n`: blurring with composed kernels,
//! sensor noise, and generation of paired datasets on disk.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::psf::{
    compose_kernels, defocus_kernel, defocus_size, motion_kernel, motion_size, shake_kernel, shake_size,
    DefocusSpec, Kernel, MotionBlurSpec, ShakeSpec,
};
use crate::raster::{square_resize, Image};
use crate::scalar::Scalar;
use crate::seed;

/// How pixels outside the image are synthesized during blurring.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Boundary {
    /// Nearest edge pixel.
    #[default]
    Replicate,
    /// Mirror without repeating the edge pixel (`d c b | a b c d | c b a`).
    Reflect,
    /// Periodic wrap-around.
    Circular,
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Boundary::Replicate => "replicate",
            Boundary::Reflect => "reflect",
            Boundary::Circular => "circular",
        })
    }
}

impl FromStr for Boundary {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "replicate" => Ok(Boundary::Replicate),
            "reflect" => Ok(Boundary::Reflect),
            "circular" => Ok(Boundary::Circular),
            _ => Err(invalid!("unknown boundary mode `{s}` (expected replicate, reflect or circular)")),
        }
    }
}

impl Boundary {
    fn index(self, p: isize, n: usize) -> usize {
        let n = n as isize;
        match self {
            Boundary::Replicate => p.clamp(0, n - 1) as usize,
            Boundary::Circular => p.rem_euclid(n) as usize,
            Boundary::Reflect => {
                if n == 1 {
                    return 0;
                }
                let period = 2 * n - 2;
                let q = p.rem_euclid(period);
                (if q < n { q } else { period - q }) as usize
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseKind {
    /// Additive `N(0, σ²)` in intensity units.
    Gaussian { sigma: f64 },
    /// `Poisson(peak · y) / peak`.
    Poisson { peak: f64 },
    /// A `density` fraction of samples set to 0 or 1 with equal odds.
    Impulse { density: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        NoiseSpec { kind: NoiseKind::Gaussian { sigma: 0.0 }, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            NoiseKind::Gaussian { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                Err(invalid!("gaussian sigma must be >= 0, got {sigma}"))
            }
            NoiseKind::Poisson { peak } if !(peak > 0.0 && peak.is_finite()) => {
                Err(invalid!("poisson peak must be > 0, got {peak}"))
            }
            NoiseKind::Impulse { density } if !(0.0..=1.0).contains(&density) => {
                Err(invalid!("impulse density must lie in [0, 1], got {density}"))
            }
            _ => Ok(()),
        }
    }
}

/// One blur stage of a degradation.
#[derive(Clone, Debug, PartialEq)]
pub enum BlurSpec {
    Motion(MotionBlurSpec),
    Shake(ShakeSpec),
    Defocus(DefocusSpec),
    Custom(Kernel<f64>),
}

impl BlurSpec {
    /// Materializes the kernel on its default grid.
    pub fn kernel(&self) -> Result<Kernel<f64>> {
        match self {
            BlurSpec::Motion(m) => motion_kernel(m, motion_size(m.length)),
            BlurSpec::Shake(s) => shake_kernel(s, shake_size(s.trajectory_length)),
            BlurSpec::Defocus(d) => defocus_kernel(d, defocus_size(d.radius)),
            BlurSpec::Custom(k) => Ok(k.clone()),
        }
    }

    pub fn family(&self) -> &'static str {
        match self {
            BlurSpec::Motion(_) => "motion",
            BlurSpec::Shake(_) => "shake",
            BlurSpec::Defocus(_) => "defocus",
            BlurSpec::Custom(_) => "custom",
        }
    }
}

/// Blur stages (composed in order), a noise model, and the boundary rule.
#[derive(Clone, Debug, PartialEq)]
pub struct DegradationSpec {
    pub blurs: Vec<BlurSpec>,
    pub noise: NoiseSpec,
    pub boundary: Boundary,
    /// Seed the random parts of this spec were drawn from.
    pub seed: u64,
}

impl DegradationSpec {
    /// Single kernel, no noise.
    pub fn blur_only(kernel: Kernel<f64>, boundary: Boundary) -> Self {
        DegradationSpec { blurs: vec![BlurSpec::Custom(kernel)], noise: NoiseSpec::none(), boundary, seed: 0 }
    }

    /// The effective kernel `h = h₁ * h₂ * …`, trimmed to its support.
    pub fn kernel(&self) -> Result<Kernel<f64>> {
        if self.blurs.is_empty() {
            return Err(invalid!("a degradation needs at least one kernel"));
        }
        let kernels = self.blurs.iter().map(BlurSpec::kernel).collect::<Result<Vec<_>>>()?;
        Ok(compose_kernels(&kernels)?.trimmed())
    }

    /// `key=value` fields joined by commas.
    pub fn to_fields(&self) -> String {
        let mut f: Vec<String> = vec![format!("seed={}", self.seed), format!("boundary={}", self.boundary)];
        for (k, b) in self.blurs.iter().enumerate() {
            f.push(format!("k{k}={}", b.family()));
            match b {
                BlurSpec::Motion(m) => {
                    f.push(format!("k{k}.length={}", m.length));
                    f.push(format!("k{k}.angle={}", m.angle));
                }
                BlurSpec::Shake(s) => {
                    f.push(format!("k{k}.points={}", s.control_points));
                    f.push(format!("k{k}.length={}", s.trajectory_length));
                    f.push(format!("k{k}.seed={}", s.seed));
                }
                BlurSpec::Defocus(d) => f.push(format!("k{k}.radius={}", d.radius)),
                BlurSpec::Custom(c) => {
                    f.push(format!("k{k}.size={}", c.size()));
                    let vals: Vec<String> = c.values().iter().map(|v| v.to_string()).collect();
                    f.push(format!("k{k}.values={}", vals.join(";")));
                }
            }
        }
        match self.noise.kind {
            NoiseKind::Gaussian { sigma } => f.extend(["noise=gaussian".into(), format!("noise.sigma={sigma}")]),
            NoiseKind::Poisson { peak } => f.extend(["noise=poisson".into(), format!("noise.peak={peak}")]),
            NoiseKind::Impulse { density } => {
                f.extend(["noise=impulse".into(), format!("noise.density={density}")])
            }
        }
        f.push(format!("noise.seed={}", self.noise.seed));
        f.join(",")
    }

    /// Inverse of [`DegradationSpec::to_fields`].
    pub fn from_fields(fields: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for item in fields.split(',').filter(|s| !s.is_empty()) {
            let (k, v) = item.split_once('=').ok_or_else(|| invalid!("field `{item}` is not key=value"))?;
            if map.insert(k, v).is_some() {
                return Err(invalid!("duplicate field `{k}`"));
            }
        }
        let get = |k: &str| map.get(k).copied().ok_or_else(|| invalid!("missing field `{k}`"));
        fn num<N: FromStr>(key: &str, v: &str) -> Result<N> {
            v.parse().map_err(|_| invalid!("bad value `{v}` for `{key}`"))
        }
        let f64_of = |k: &str| get(k).and_then(|v| num::<f64>(k, v));
        let u64_of = |k: &str| get(k).and_then(|v| num::<u64>(k, v));

        let mut blurs = Vec::new();
        while let Some(&family) = map.get(format!("k{}", blurs.len()).as_str()) {
            let p = format!("k{}.", blurs.len());
            blurs.push(match family {
                "motion" => BlurSpec::Motion(MotionBlurSpec {
                    length: f64_of(&format!("{p}length"))?,
                    angle: f64_of(&format!("{p}angle"))?,
                }),
                "shake" => BlurSpec::Shake(ShakeSpec {
                    control_points: u64_of(&format!("{p}points"))? as usize,
                    trajectory_length: f64_of(&format!("{p}length"))?,
                    seed: u64_of(&format!("{p}seed"))?,
                }),
                "defocus" => BlurSpec::Defocus(DefocusSpec { radius: f64_of(&format!("{p}radius"))? }),
                "custom" => {
                    let size = u64_of(&format!("{p}size"))? as usize;
                    let key = format!("{p}values");
                    let values = get(&key)?.split(';').map(|v| num::<f64>(&key, v)).collect::<Result<Vec<_>>>()?;
                    BlurSpec::Custom(Kernel::from_normalized(size, values)?)
                }
                other => return Err(invalid!("unknown kernel family `{other}`")),
            });
        }
        let kind = match get("noise")? {
            "gaussian" => NoiseKind::Gaussian { sigma: f64_of("noise.sigma")? },
            "poisson" => NoiseKind::Poisson { peak: f64_of("noise.peak")? },
            "impulse" => NoiseKind::Impulse { density: f64_of("noise.density")? },
            other => return Err(invalid!("unknown noise kind `{other}`")),
        };
        let spec = DegradationSpec {
            blurs,
            noise: NoiseSpec { kind, seed: u64_of("noise.seed")? },
            boundary: get("boundary")?.parse()?,
            seed: u64_of("seed")?,
        };
        spec.noise.validate()?;
        Ok(spec)
    }
}

/// Per-channel true convolution `y(p) = Σ_q h(q) · x(p − q)`, same size as
/// the input.
pub fn convolve_image<T: Scalar>(x: &Image<T>, h: &Kernel<T>, boundary: Boundary) -> Result<Image<T>> {
    let [c, height, width] = x.shape();
    if h.size() > height || h.size() > width {
        return Err(invalid!("{0}x{0} kernel does not fit a {height}x{width} image", h.size()));
    }
    let taps: Vec<(isize, isize, T)> = h.support().into_iter().map(|(i, j)| (i, j, h.at(i, j))).collect();
    let mut out = vec![T::zero(); c * height * width];
    out.par_chunks_mut(width).enumerate().for_each(|(row, dst)| {
        let (ch, y) = (row / height, row % height);
        let plane = x.plane(ch);
        for (xx, d) in dst.iter_mut().enumerate() {
            let mut acc = T::zero();
            for &(i, j, w) in &taps {
                let sy = boundary.index(y as isize - i, height);
                let sx = boundary.index(xx as isize - j, width);
                acc = acc + w * plane[sy * width + sx];
            }
            *d = acc;
        }
    });
    Image::new(c, height, width, out)
}

/// Seeded noise without the final clamp.
pub fn apply_noise_unclamped<T: Scalar>(y: &Image<T>, spec: &NoiseSpec) -> Result<Image<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut data = y.data().to_vec();
    match spec.kind {
        NoiseKind::Gaussian { sigma } => {
            if sigma > 0.0 {
                let normal = Normal::new(0.0, sigma).expect("validated sigma");
                for v in &mut data {
                    *v = *v + T::of(normal.sample(&mut rng));
                }
            }
        }
        NoiseKind::Poisson { peak } => {
            for v in &mut data {
                let lambda = peak * v.to_f64_lossless();
                *v = if lambda > 0.0 {
                    let count: f64 = Poisson::new(lambda).map_err(|e| invalid!("poisson rate {lambda}: {e}"))?.sample(&mut rng);
                    T::of(count / peak)
                } else {
                    T::zero()
                };
            }
        }
        NoiseKind::Impulse { density } => {
            let count = (density * data.len() as f64).round() as usize;
            for idx in sample(&mut rng, data.len(), count).into_vec() {
                data[idx] = if rng.random_bool(0.5) { T::one() } else { T::zero() };
            }
        }
    }
    Image::new(y.channels(), y.height(), y.width(), data)
}

/// Seeded noise, clamped to `[0, 1]`.
pub fn apply_noise<T: Scalar>(y: &Image<T>, spec: &NoiseSpec) -> Result<Image<T>> {
    Ok(apply_noise_unclamped(y, spec)?.clamped())
}

/// `y = clamp(x * h + n)` with `h` the composition of the spec's kernels.
pub fn degrade<T: Scalar>(x: &Image<T>, spec: &DegradationSpec) -> Result<Image<T>> {
    let h = spec.kernel()?.cast::<T>();
    apply_noise(&convolve_image(x, &h, spec.boundary)?, &spec.noise)
}

/// Sampling ranges for [`random_spec`]; all intervals are half-open.
#[derive(Clone, Debug, PartialEq)]
pub struct SpecRanges {
    pub max_kernels: usize,
    pub motion_length: (f64, f64),
    pub shake_length: (f64, f64),
    pub shake_points: (usize, usize),
    pub defocus_radius: (f64, f64),
    pub gaussian_sigma: (f64, f64),
    pub poisson_peak: (f64, f64),
    pub impulse_density: (f64, f64),
    pub boundary: Boundary,
}

impl Default for SpecRanges {
    fn default() -> Self {
        SpecRanges {
            max_kernels: 3,
            motion_length: (3.0, 21.0),
            shake_length: (3.0, 21.0),
            shake_points: (2, 8),
            defocus_radius: (1.0, 5.0),
            gaussian_sigma: (0.0, 0.05),
            poisson_peak: (50.0, 500.0),
            impulse_density: (0.0, 0.05),
            boundary: Boundary::Replicate,
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo { rng.random_range(lo..hi) } else { lo }
}

/// Draws 1..=`max_kernels` kernels with families chosen uniformly, then one
/// noise kind chosen uniformly.
pub fn random_spec(ranges: &SpecRanges, seed: u64) -> Result<DegradationSpec> {
    if ranges.max_kernels == 0 {
        return Err(invalid!("max_kernels must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.random_range(1..=ranges.max_kernels);
    let mut blurs = Vec::with_capacity(count);
    for _ in 0..count {
        blurs.push(match rng.random_range(0..3) {
            0 => BlurSpec::Motion(MotionBlurSpec {
                length: draw(&mut rng, ranges.motion_length),
                angle: rng.random_range(0.0..std::f64::consts::PI),
            }),
            1 => {
                let (lo, hi) = ranges.shake_points;
                BlurSpec::Shake(ShakeSpec {
                    control_points: if hi > lo { rng.random_range(lo..hi) } else { lo },
                    trajectory_length: draw(&mut rng, ranges.shake_length),
                    seed: rng.random(),
                })
            }
            _ => BlurSpec::Defocus(DefocusSpec { radius: draw(&mut rng, ranges.defocus_radius) }),
        });
    }
    let kind = match rng.random_range(0..3) {
        0 => NoiseKind::Gaussian { sigma: draw(&mut rng, ranges.gaussian_sigma) },
        1 => NoiseKind::Poisson { peak: draw(&mut rng, ranges.poisson_peak) },
        _ => NoiseKind::Impulse { density: draw(&mut rng, ranges.impulse_density) },
    };
    let spec = DegradationSpec { blurs, noise: NoiseSpec { kind, seed: rng.random() }, boundary: ranges.boundary, seed };
    spec.noise.validate()?;
    Ok(spec)
}

/// A training sample with its provenance.
#[derive(Clone, Debug)]
pub struct ImagePair<T: Scalar> {
    pub index: usize,
    pub sharp: Image<T>,
    pub blurred: Image<T>,
    pub spec: DegradationSpec,
    pub sharp_file: String,
    pub blurred_file: String,
}

/// Options for [`make_dataset`].
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetOptions {
    /// Side of the square training images; `None` keeps source images as is.
    pub resolution: Option<u32>,
    pub ranges: SpecRanges,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions { resolution: Some(64), ranges: SpecRanges::default() }
    }
}

pub const MANIFEST: &str = "manifest.csv";

/// Sorted regular, non-hidden files of `dir`.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let hidden = path.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.'));
        if path.is_file() && !hidden {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Writes `n_pairs` sharp/blurred pairs under `out_dir` (`sharp/`,
/// `blurred/`, `manifest.csv`) and returns the manifest path. Sources are
/// used round-robin in sorted filename order; pair `k` degrades with a spec
/// drawn from `hash(seed, k)`, so repeated sources get distinct blurs.
/// Specs whose composed kernel is wider than the image are redrawn.
pub fn make_dataset(sharp_dir: &Path, n_pairs: usize, seed: u64, out_dir: &Path, opts: &DatasetOptions) -> Result<PathBuf> {
    let files = list_images(sharp_dir)?;
    if files.is_empty() {
        return Err(Error::EmptyDataset(format!("no images in {}", sharp_dir.display())));
    }
    let sharp_out = out_dir.join("sharp");
    let blurred_out = out_dir.join("blurred");
    for d in [&sharp_out, &blurred_out] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }

    let mut stems = std::collections::BTreeSet::new();
    let sources = files
        .par_iter()
        .map(|path| {
            let img = image::open(path).map_err(|e| Error::image(path, e))?.to_rgb8();
            let img = match opts.resolution {
                Some(r) => square_resize(&img, r),
                None => img,
            };
            Ok(Image::<f64>::from_rgb8(&img))
        })
        .collect::<Result<Vec<_>>>()?;
    let used = n_pairs.min(files.len());
    let mut names = Vec::with_capacity(used);
    for (path, img) in files.iter().zip(&sources).take(used) {
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image").to_string();
        if !stems.insert(stem.clone()) {
            return Err(invalid!("two source images share the stem `{stem}`"));
        }
        let name = format!("sharp/{stem}.png");
        img.save_png(&out_dir.join(&name))?;
        names.push(name);
    }

    let lines = (0..n_pairs)
        .into_par_iter()
        .map(|k| {
            let src = k % files.len();
            let sharp = &sources[src];
            let side = sharp.height().min(sharp.width());
            // redraw (deterministically) the rare compositions wider than the image
            let mut pair_seed = seed::derive_indexed(seed, "pair", k as u64);
            let mut spec = random_spec(&opts.ranges, pair_seed)?;
            for attempt in 1.. {
                if spec.kernel()?.size() <= side {
                    break;
                }
                if attempt > 100 {
                    return Err(invalid!("sampled blurs never fit a {side}px image; reduce the kernel ranges"));
                }
                pair_seed = seed::derive_indexed(pair_seed, "redraw", attempt);
                spec = random_spec(&opts.ranges, pair_seed)?;
            }
            let blurred = degrade(sharp, &spec)?;
            let name = format!("blurred/{k:05}.png");
            blurred.save_png(&out_dir.join(&name))?;
            Ok(format!("{k},{},{name},{}\n", names[src], spec.to_fields()))
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = out_dir.join(MANIFEST);
    fs::write(&manifest, lines.concat()).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}

/// Reads the pairs listed in `dir/manifest.csv`.
pub fn load_dataset<T: Scalar>(dir: &Path) -> Result<Vec<ImagePair<T>>> {
    let manifest = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let bad = |m: String| Error::Parse { path: manifest.clone(), message: format!("line {}: {m}", n + 1) };
            let mut parts = line.splitn(4, ',');
            let (Some(index), Some(sharp_file), Some(blurred_file), Some(fields)) =
                (parts.next(), parts.next(), parts.next(), parts.next())
            else {
                return Err(bad("expected index,sharp,blurred,spec".into()));
            };
            let index = index.parse().map_err(|_| bad(format!("bad pair index `{index}`")))?;
            let spec = DegradationSpec::from_fields(fields).map_err(|e| bad(e.to_string()))?;
            let sharp = Image::load_png(&dir.join(sharp_file))?;
            let blurred = Image::load_png(&dir.join(blurred_file))?;
            if sharp.shape() != blurred.shape() {
                return Err(bad(format!("{sharp_file} and {blurred_file} differ in size")));
            }
            Ok(ImagePair { index, sharp, blurred, spec, sharp_file: sharp_file.into(), blurred_file: blurred_file.into() })
        })
        .collect()
}
