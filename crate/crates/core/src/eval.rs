//! Restoration quality metrics, the Wiener deconvolution baseline and the
//! dataset evaluation report.

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::degrade::ImagePair;
use crate::error::{invalid, shape_err, Error, Result};
use crate::model::{generator_forward, GeneratorConfig, ModelParams};
use crate::psf::Kernel;
use crate::raster::Image;
use crate::scalar::Scalar;
use crate::tensor::no_grad;

/// Peak signal-to-noise ratio, or a marker for a zero-error comparison.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Identical,
    Db(f64),
}

impl Psnr {
    pub fn db(self) -> Option<f64> {
        match self {
            Psnr::Identical => None,
            Psnr::Db(v) => Some(v),
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Identical => f.write_str("identical"),
            Psnr::Db(v) => write!(f, "{v:.6}"),
        }
    }
}

fn same_shape<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err!("images of shape {:?} and {:?} differ", a.shape(), b.shape()));
    }
    Ok(())
}

/// `10·log10(peak² / MSE)`.
pub fn psnr<T: Scalar>(a: &Image<T>, b: &Image<T>, peak: f64) -> Result<Psnr> {
    same_shape(a, b)?;
    if a.data().is_empty() {
        return Err(invalid!("psnr of empty images"));
    }
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x.to_f64_lossless() - y.to_f64_lossless()).powi(2))
        .sum();
    if sse == 0.0 {
        return Ok(Psnr::Identical);
    }
    Ok(Psnr::Db(10.0 * (peak * peak / (sse / a.data().len() as f64)).log10()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimConfig {
    pub window: usize,
    pub k1: f64,
    pub k2: f64,
    pub peak: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig { window: 8, k1: 0.01, k2: 0.03, peak: 1.0 }
    }
}

/// Summed-area table with a zero first row and column.
fn integral(plane: impl Fn(usize, usize) -> f64, h: usize, w: usize) -> Vec<f64> {
    let mut s = vec![0.0; (h + 1) * (w + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += plane(y, x);
            s[(y + 1) * (w + 1) + x + 1] = s[y * (w + 1) + x + 1] + row;
        }
    }
    s
}

/// Mean SSIM over every uniform `window × window` patch (stride 1) of every
/// channel, with population statistics. A window larger than the image is
/// shrunk to the image.
pub fn ssim<T: Scalar>(a: &Image<T>, b: &Image<T>, cfg: &SsimConfig) -> Result<f64> {
    same_shape(a, b)?;
    let [c, h, w] = a.shape();
    if c * h * w == 0 || cfg.window == 0 {
        return Err(invalid!("ssim needs non-empty images and window"));
    }
    let (wh, ww) = (cfg.window.min(h), cfg.window.min(w));
    let n = (wh * ww) as f64;
    let c1 = (cfg.k1 * cfg.peak).powi(2);
    let c2 = (cfg.k2 * cfg.peak).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let (pa, pb) = (a.plane(ch), b.plane(ch));
        let va = |y: usize, x: usize| pa[y * w + x].to_f64_lossless();
        let vb = |y: usize, x: usize| pb[y * w + x].to_f64_lossless();
        let sa = integral(va, h, w);
        let sb = integral(vb, h, w);
        let saa = integral(|y, x| va(y, x) * va(y, x), h, w);
        let sbb = integral(|y, x| vb(y, x) * vb(y, x), h, w);
        let sab = integral(|y, x| va(y, x) * vb(y, x), h, w);
        let rect = |s: &[f64], y: usize, x: usize| {
            let at = |r: usize, c: usize| s[r * (w + 1) + c];
            at(y + wh, x + ww) - at(y, x + ww) - at(y + wh, x) + at(y, x)
        };
        for y in 0..=h - wh {
            for x in 0..=w - ww {
                let ma = rect(&sa, y, x) / n;
                let mb = rect(&sb, y, x) / n;
                let vaa = (rect(&saa, y, x) / n - ma * ma).max(0.0);
                let vbb = (rect(&sbb, y, x) / n - mb * mb).max(0.0);
                let cov = rect(&sab, y, x) / n - ma * mb;
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (vaa + vbb + c2));
                count += 1;
            }
        }
    }
    Ok((total / count as f64).clamp(-1.0, 1.0))
}

/// 2-D DFT of a row-major `h × w` grid, in place.
fn fft2(data: &mut [Complex<f64>], h: usize, w: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row, col) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    row.process(data);
    let mut column = vec![Complex::default(); h];
    for x in 0..w {
        for y in 0..h {
            column[y] = data[y * w + x];
        }
        col.process(&mut column);
        for y in 0..h {
            data[y * w + x] = column[y];
        }
    }
}

/// Wiener deconvolution without the final clamp:
/// `X̂ = conj(H)·Y / (|H|² + nsr)` per channel, assuming the blur wrapped
/// circularly. Frequencies where the denominator vanishes are zeroed.
pub fn wiener_filter<T: Scalar>(y: &Image<T>, h: &Kernel<T>, nsr: f64) -> Result<Image<T>> {
    if !(nsr >= 0.0) || !nsr.is_finite() {
        return Err(invalid!("noise-to-signal ratio must be finite and non-negative, got {nsr}"));
    }
    let [c, height, width] = y.shape();
    if h.size() > height || h.size() > width {
        return Err(invalid!("{0}x{0} kernel does not fit a {height}x{width} image", h.size()));
    }
    let n = height * width;
    let mut tf = vec![Complex::default(); n];
    for (i, j) in h.support() {
        let r = i.rem_euclid(height as isize) as usize;
        let s = j.rem_euclid(width as isize) as usize;
        tf[r * width + s].re += h.at(i, j).to_f64_lossless();
    }
    fft2(&mut tf, height, width, false);
    let gain: Vec<Complex<f64>> = tf
        .iter()
        .map(|&hf| {
            let d = hf.norm_sqr() + nsr;
            if d > 0.0 { hf.conj() / d } else { Complex::default() }
        })
        .collect();
    let mut out = Vec::with_capacity(c * n);
    for ch in 0..c {
        let mut buf: Vec<Complex<f64>> = y.plane(ch).iter().map(|v| Complex::new(v.to_f64_lossless(), 0.0)).collect();
        fft2(&mut buf, height, width, false);
        for (v, g) in buf.iter_mut().zip(&gain) {
            *v *= g;
        }
        fft2(&mut buf, height, width, true);
        out.extend(buf.iter().map(|v| T::of(v.re / n as f64)));
    }
    Image::new(c, height, width, out)
}

/// [`wiener_filter`] clamped to `[0, 1]`.
pub fn wiener_deconvolve<T: Scalar>(y: &Image<T>, h: &Kernel<T>, nsr: f64) -> Result<Image<T>> {
    Ok(wiener_filter(y, h, nsr)?.clamped())
}

/// Runs the generator in inference mode on one image. Extents that the
/// network cannot take are padded by edge replication and cropped back.
pub fn restore<T: Scalar>(cfg: &GeneratorConfig, params: &ModelParams<T>, blurred: &Image<T>) -> Result<Image<T>> {
    let [c, h, w] = blurred.shape();
    let f = cfg.scale_factor;
    let (ph, pw) = (h.div_ceil(f) * f, w.div_ceil(f) * f);
    let input = if (ph, pw) == (h, w) {
        blurred.clone()
    } else {
        Image::from_fn(c, ph, pw, |ch, y, x| blurred.get(ch, y.min(h - 1), x.min(w - 1)))
    };
    let out = no_grad(|| generator_forward(cfg, params, &input.to_tensor(), false, 0))?;
    Image::from_tensor(&out, 0)?.crop(0, 0, h, w)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalConfig {
    /// Noise-to-signal ratio of the Wiener baseline.
    pub wiener_nsr: f64,
    pub ssim: SsimConfig,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { wiener_nsr: 1e-2, ssim: SsimConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub pair: usize,
    pub psnr_blur: Psnr,
    pub psnr_restored: Psnr,
    pub ssim_restored: f64,
    pub psnr_wiener: Psnr,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

pub const REPORT_HEADER: &str = "pair,psnr_blur,psnr_restored,ssim_restored,psnr_wiener";
pub const REPORT_FILE: &str = "report.csv";

/// Mean over the finite entries; `Identical` when every entry is.
fn mean_psnr(values: impl Iterator<Item = Psnr>) -> Option<Psnr> {
    let mut any = false;
    let finite: Vec<f64> = values.inspect(|_| any = true).filter_map(Psnr::db).collect();
    match (any, finite.is_empty()) {
        (false, _) => None,
        (true, true) => Some(Psnr::Identical),
        (true, false) => Some(Psnr::Db(finite.iter().sum::<f64>() / finite.len() as f64)),
    }
}

impl EvalReport {
    pub fn mean_psnr_blur(&self) -> Option<Psnr> {
        mean_psnr(self.rows.iter().map(|r| r.psnr_blur))
    }

    pub fn mean_psnr_restored(&self) -> Option<Psnr> {
        mean_psnr(self.rows.iter().map(|r| r.psnr_restored))
    }

    pub fn mean_psnr_wiener(&self) -> Option<Psnr> {
        mean_psnr(self.rows.iter().map(|r| r.psnr_wiener))
    }

    pub fn mean_ssim_restored(&self) -> Option<f64> {
        (!self.rows.is_empty()).then(|| self.rows.iter().map(|r| r.ssim_restored).sum::<f64>() / self.rows.len() as f64)
    }

    /// Per-pair rows followed by a `mean` row (omitted when empty).
    /// PSNR means skip `identical` entries.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{:.6},{}", r.pair, r.psnr_blur, r.psnr_restored, r.ssim_restored, r.psnr_wiener);
        }
        if let (Some(b), Some(p), Some(s), Some(w)) =
            (self.mean_psnr_blur(), self.mean_psnr_restored(), self.mean_ssim_restored(), self.mean_psnr_wiener())
        {
            let _ = writeln!(out, "mean,{b},{p},{s:.6},{w}");
        }
        out
    }
}

pub fn triptych_name(pair: usize) -> String {
    format!("pair_{pair:05}.png")
}

/// Restores every pair, scores restored, blurred and Wiener images against
/// the sharp target, and with `out_dir` writes the CSV report plus one
/// blurred | restored | sharp PNG per pair. Rows are ordered by pair id.
pub fn evaluate<T: Scalar>(
    gen_cfg: &GeneratorConfig,
    params: &ModelParams<T>,
    pairs: &[ImagePair<T>],
    cfg: &EvalConfig,
    out_dir: Option<&Path>,
) -> Result<EvalReport> {
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut rows = pairs
        .par_iter()
        .map(|pair| {
            let restored = restore(gen_cfg, params, &pair.blurred)?;
            let wiener = wiener_deconvolve(&pair.blurred, &pair.spec.kernel()?.cast::<T>(), cfg.wiener_nsr)?;
            if let Some(dir) = out_dir {
                let path = dir.join(triptych_name(pair.index));
                Image::hstack(&[&pair.blurred, &restored, &pair.sharp], 2)?.save_png(&path)?;
            }
            Ok(EvalRow {
                pair: pair.index,
                psnr_blur: psnr(&pair.blurred, &pair.sharp, 1.0)?,
                psnr_restored: psnr(&restored, &pair.sharp, 1.0)?,
                ssim_restored: ssim(&restored, &pair.sharp, &cfg.ssim)?,
                psnr_wiener: psnr(&wiener, &pair.sharp, 1.0)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by_key(|r| r.pair);
    let report = EvalReport { rows };
    if let Some(dir) = out_dir {
        let path = dir.join(REPORT_FILE);
        fs::write(&path, report.to_csv()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(report)
}
