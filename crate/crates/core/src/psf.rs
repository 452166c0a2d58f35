//! Parametric point-spread functions: linear motion, camera shake and
//! defocus, plus composition of several kernels into one.
//!
//! Kernels live on odd square grids addressed by centered coordinates
//! `(i, j)`: `i` grows downwards, `j` to the right, `(0, 0)` is the center.
//! Angles follow the usual counter-clockwise convention with `x = j` and
//! `y = −i`, so a line at angle θ satisfies `i / j = −tan θ`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Sub-positions per cell used when rasterizing line segments.
const SUPERSAMPLE: usize = 16;

/// Normalized, non-negative blur kernel on an odd square grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel<T: Scalar> {
    size: usize,
    values: Vec<T>,
}

impl<T: Scalar> Kernel<T> {
    /// Builds a kernel from raw weights, rescaling them to unit sum.
    pub fn normalized(size: usize, mut values: Vec<T>) -> Result<Self> {
        check_grid(size, values.len())?;
        if values.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(invalid!("kernel weights must be finite and non-negative"));
        }
        let total: T = values.iter().copied().sum();
        if total <= T::zero() {
            return Err(invalid!("kernel has no mass"));
        }
        values.iter_mut().for_each(|v| *v = *v / total);
        Ok(Kernel { size, values })
    }

    /// Accepts already-normalized weights verbatim (sum within 1e-6).
    pub fn from_normalized(size: usize, values: Vec<T>) -> Result<Self> {
        check_grid(size, values.len())?;
        if values.iter().any(|v| !v.is_finite() || *v < T::zero()) {
            return Err(invalid!("kernel weights must be finite and non-negative"));
        }
        let total: f64 = values.iter().map(|v| v.to_f64_lossless()).sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(invalid!("kernel weights sum to {total}, expected 1"));
        }
        Ok(Kernel { size, values })
    }

    /// Identity kernel.
    pub fn delta(size: usize) -> Result<Self> {
        check_grid(size, size * size)?;
        let mut values = vec![T::zero(); size * size];
        values[size * size / 2] = T::one();
        Ok(Kernel { size, values })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    /// Row-major weights.
    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Weight at centered coordinates, zero outside the grid.
    pub fn at(&self, i: isize, j: isize) -> T {
        let r = self.radius() as isize;
        if i.abs() > r || j.abs() > r {
            return T::zero();
        }
        self.values[((i + r) as usize) * self.size + (j + r) as usize]
    }

    pub fn sum(&self) -> T {
        self.values.iter().copied().sum()
    }

    /// Centered coordinates of the non-zero cells, row-major.
    pub fn support(&self) -> Vec<(isize, isize)> {
        let r = self.radius() as isize;
        (0..self.values.len())
            .filter(|&k| self.values[k] > T::zero())
            .map(|k| ((k / self.size) as isize - r, (k % self.size) as isize - r))
            .collect()
    }

    /// Zero-pads to a larger odd grid, keeping the center.
    pub fn padded(&self, size: usize) -> Result<Self> {
        check_grid(size, size * size)?;
        if size < self.size {
            return Err(invalid!("cannot pad a {0}x{0} kernel down to {1}x{1}", self.size, size));
        }
        let off = (size - self.size) / 2;
        let mut values = vec![T::zero(); size * size];
        for r in 0..self.size {
            let dst = (r + off) * size + off;
            values[dst..dst + self.size].copy_from_slice(&self.values[r * self.size..(r + 1) * self.size]);
        }
        Ok(Kernel { size, values })
    }

    /// Crops zero borders down to the smallest centered odd grid holding
    /// the support.
    pub fn trimmed(&self) -> Self {
        let reach = self.support().iter().map(|&(i, j)| i.unsigned_abs().max(j.unsigned_abs())).max().unwrap_or(0);
        let size = 2 * reach + 1;
        let off = self.radius() - reach;
        let mut values = Vec::with_capacity(size * size);
        for r in 0..size {
            let start = (r + off) * self.size + off;
            values.extend_from_slice(&self.values[start..start + size]);
        }
        Kernel { size, values }
    }

    /// Text grid: the size on the first line, then one row per line with
    /// values at 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = format!("{}\n", self.size);
        for row in self.values.chunks(self.size) {
            let cells: Vec<String> = row.iter().map(|v| format!("{:.16e}", v.to_f64_lossless())).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        let size: usize = lines
            .next()
            .ok_or_else(|| invalid!("empty kernel file"))?
            .parse()
            .map_err(|e| invalid!("bad kernel size: {e}"))?;
        let mut values = Vec::with_capacity(size * size);
        for (r, line) in lines.enumerate() {
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|t| t.parse::<f64>().map_err(|e| invalid!("row {}: {e}", r + 1)))
                .collect::<Result<_>>()?;
            if row.len() != size {
                return Err(invalid!("row {} has {} values, expected {}", r + 1, row.len(), size));
            }
            values.extend(row.into_iter().map(T::of));
        }
        if values.len() != size * size {
            return Err(invalid!("expected {} rows", size));
        }
        Self::from_normalized(size, values)
    }

    pub fn save_text(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load_text(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text).map_err(|e| Error::Parse { path: path.into(), message: e.to_string() })
    }

    /// Grayscale visualization scaled so the largest weight is white.
    pub fn to_image(&self) -> image::GrayImage {
        let peak = self.values.iter().copied().fold(T::zero(), T::max).to_f64_lossless();
        let px = |k: usize| {
            let v = self.values[k].to_f64_lossless();
            if peak > 0.0 { (v / peak * 255.0).round() as u8 } else { 0 }
        };
        image::GrayImage::from_fn(self.size as u32, self.size as u32, |x, y| {
            image::Luma([px(y as usize * self.size + x as usize)])
        })
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_image().save(path).map_err(|e| Error::image(path, e))
    }

    pub fn cast<U: Scalar>(&self) -> Kernel<U> {
        Kernel {
            size: self.size,
            values: self.values.iter().map(|v| U::of(v.to_f64_lossless())).collect(),
        }
    }
}

fn check_grid(size: usize, len: usize) -> Result<()> {
    if size == 0 || size % 2 == 0 {
        return Err(invalid!("kernel size must be odd and positive, got {size}"));
    }
    if len != size * size {
        return Err(invalid!("{len} weights for a {size}x{size} kernel"));
    }
    Ok(())
}

/// Linear motion of `length` pixels at `angle` radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionBlurSpec {
    pub length: f64,
    pub angle: f64,
}

/// Uniform disk of `radius` pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DefocusSpec {
    pub radius: f64,
}

/// Random smooth camera trajectory through `control_points` points,
/// scaled to `trajectory_length` pixels of arc.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShakeSpec {
    pub control_points: usize,
    pub trajectory_length: f64,
    pub seed: u64,
}

/// Uniform line kernel.
///
/// The segment of length `L` centered at the origin is rasterized with one
/// cell per unit of its dominant axis: each column (or row) is split into
/// 16 sub-positions and kept when at least half of them fall inside the
/// segment's extent; the perpendicular coordinate is the line's value at
/// the mean occupied sub-position, rounded. Axis-aligned segments reduce
/// to `√(i² + j²) ≤ L/2` on the line `i / j = −tan θ`, and vertical lines
/// are handled by continuity.
pub fn motion_kernel<T: Scalar>(spec: &MotionBlurSpec, size: usize) -> Result<Kernel<T>> {
    if !(spec.length >= 1.0) || !spec.angle.is_finite() {
        return Err(invalid!("motion blur needs length >= 1 and a finite angle"));
    }
    check_grid(size, size * size)?;
    if (size as f64) <= spec.length {
        return Err(invalid!("kernel size {} must exceed the motion length {}", size, spec.length));
    }
    let cells = rasterize_segment(spec.length, spec.angle, size / 2)?;
    let mut values = vec![T::zero(); size * size];
    let r = (size / 2) as isize;
    for (i, j) in cells {
        values[((i + r) as usize) * size + (j + r) as usize] = T::one();
    }
    Kernel::normalized(size, values)
}

fn rasterize_segment(length: f64, angle: f64, radius: usize) -> Result<Vec<(isize, isize)>> {
    let (s, c) = angle.sin_cos();
    let x_major = c.abs() >= s.abs();
    // extent of the segment along the dominant axis, and the slope of the
    // perpendicular coordinate (i for x-major, j for y-major) per unit step
    let (extent, slope) = if x_major {
        (0.5 * length * c.abs(), -s / c)
    } else {
        (0.5 * length * s.abs(), -c / s)
    };
    let r = radius as isize;
    let mut cells = Vec::new();
    for major in -r..=r {
        let inside: Vec<f64> = (0..SUPERSAMPLE)
            .map(|k| major as f64 - 0.5 + (k as f64 + 0.5) / SUPERSAMPLE as f64)
            .filter(|p| p.abs() <= extent)
            .collect();
        if 2 * inside.len() < SUPERSAMPLE {
            continue;
        }
        let mean = inside.iter().sum::<f64>() / inside.len() as f64;
        let minor = (mean * slope).round() as isize;
        if minor.abs() > r {
            return Err(invalid!("motion segment leaves the {}x{} grid", 2 * r + 1, 2 * r + 1));
        }
        // for x-major `major` is the column j and `minor` the row i; for
        // y-major `major` runs along −y = i and `minor` is j
        cells.push(if x_major { (minor, major) } else { (major, minor) });
    }
    Ok(cells)
}

/// Uniform disk `√(i² + j²) ≤ R`, weight `1/(πR²)` renormalized to unit
/// sum on the integer grid.
pub fn defocus_kernel<T: Scalar>(spec: &DefocusSpec, size: usize) -> Result<Kernel<T>> {
    if !(spec.radius > 0.0) || !spec.radius.is_finite() {
        return Err(invalid!("defocus radius must be positive, got {}", spec.radius));
    }
    check_grid(size, size * size)?;
    if (size as f64) <= 2.0 * spec.radius {
        return Err(invalid!("kernel size {} must exceed the defocus diameter {}", size, 2.0 * spec.radius));
    }
    let r = (size / 2) as isize;
    let weight = T::of(1.0 / (PI * spec.radius * spec.radius));
    let r2 = spec.radius * spec.radius;
    let values = (0..size * size)
        .map(|k| {
            let (i, j) = ((k / size) as isize - r, (k % size) as isize - r);
            if ((i * i + j * j) as f64) <= r2 { weight } else { T::zero() }
        })
        .collect();
    Kernel::normalized(size, values)
}

/// Camera shake along a seeded Catmull-Rom spline.
pub fn shake_kernel<T: Scalar>(spec: &ShakeSpec, size: usize) -> Result<Kernel<T>> {
    if spec.control_points < 2 {
        return Err(invalid!("camera shake needs at least 2 control points"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let points: Vec<(f64, f64)> = (0..spec.control_points)
        .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    trajectory_kernel(&points, spec.trajectory_length, size)
}

/// Rasterizes the Catmull-Rom spline through `points` (x right, y up),
/// rescaled to `length` pixels of arc and centered on its bounding box.
/// Each cell's weight is proportional to the time the trajectory spends
/// in it, with time advancing uniformly per spline segment.
pub fn trajectory_kernel<T: Scalar>(points: &[(f64, f64)], length: f64, size: usize) -> Result<Kernel<T>> {
    if points.len() < 2 {
        return Err(invalid!("a trajectory needs at least 2 points"));
    }
    if !(length > 0.0) || !length.is_finite() {
        return Err(invalid!("trajectory length must be positive, got {length}"));
    }
    check_grid(size, size * size)?;
    let steps = 64 * (length.ceil() as usize + 1);
    let nodes = catmull_rom(points, steps);
    let arc: f64 = nodes.windows(2).map(|w| (w[1].0 - w[0].0).hypot(w[1].1 - w[0].1)).sum();
    if arc < 1e-12 {
        return Kernel::delta(size);
    }
    let scale = length / arc;
    let (mut lo, mut hi) = ((f64::MAX, f64::MAX), (f64::MIN, f64::MIN));
    for &(x, y) in &nodes {
        lo = (lo.0.min(x), lo.1.min(y));
        hi = (hi.0.max(x), hi.1.max(y));
    }
    let mid = ((lo.0 + hi.0) / 2.0, (lo.1 + hi.1) / 2.0);

    // one dwell sample per time step, at the step's midpoint
    let r = (size / 2) as isize;
    let mut counts = vec![0u64; size * size];
    for w in nodes.windows(2) {
        let (x, y) = ((w[0].0 + w[1].0) / 2.0, (w[0].1 + w[1].1) / 2.0);
        let j = ((x - mid.0) * scale).round() as isize;
        let i = (-(y - mid.1) * scale).round() as isize;
        if i.abs() > r || j.abs() > r {
            return Err(invalid!("camera trajectory escapes the {size}x{size} grid"));
        }
        counts[((i + r) as usize) * size + (j + r) as usize] += 1;
    }
    Kernel::normalized(size, counts.into_iter().map(|c| T::of(c as f64)).collect())
}

/// Points of the uniform Catmull-Rom spline through `points` at
/// `steps` equal time steps per segment (endpoints included), with the
/// end control points duplicated as phantom neighbours.
fn catmull_rom(points: &[(f64, f64)], steps: usize) -> Vec<(f64, f64)> {
    let n = points.len();
    let at = |k: isize| points[k.clamp(0, n as isize - 1) as usize];
    let mut out = Vec::with_capacity((n - 1) * steps + 1);
    out.push(points[0]);
    for seg in 0..n - 1 {
        let s = seg as isize;
        let (p0, p1, p2, p3) = (at(s - 1), at(s), at(s + 1), at(s + 2));
        let m1 = ((p2.0 - p0.0) / 2.0, (p2.1 - p0.1) / 2.0);
        let m2 = ((p3.0 - p1.0) / 2.0, (p3.1 - p1.1) / 2.0);
        for k in 1..=steps {
            let t = k as f64 / steps as f64;
            let (t2, t3) = (t * t, t * t * t);
            let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
            let h10 = t3 - 2.0 * t2 + t;
            let h01 = -2.0 * t3 + 3.0 * t2;
            let h11 = t3 - t2;
            out.push((
                h00 * p1.0 + h10 * m1.0 + h01 * p2.0 + h11 * m2.0,
                h00 * p1.1 + h10 * m1.1 + h01 * p2.1 + h11 * m2.1,
            ));
        }
    }
    out
}

/// Full 2-D convolution of two kernels (size `a + b − 1`), not renormalized.
fn convolve_full<T: Scalar>(a: &Kernel<T>, b: &Kernel<T>) -> Vec<T> {
    let size = a.size + b.size - 1;
    let mut out = vec![T::zero(); size * size];
    for (ka, &va) in a.values.iter().enumerate() {
        if va == T::zero() {
            continue;
        }
        let (ai, aj) = (ka / a.size, ka % a.size);
        for (kb, &vb) in b.values.iter().enumerate() {
            let (bi, bj) = (kb / b.size, kb % b.size);
            let o = (ai + bi) * size + aj + bj;
            out[o] = out[o] + va * vb;
        }
    }
    out
}

/// Convolves all kernels together (`h_ex * h_in * …`); the result has size
/// `Σ sizes − (count − 1)` and unit sum.
pub fn compose_kernels<T: Scalar>(kernels: &[Kernel<T>]) -> Result<Kernel<T>> {
    let (first, rest) = kernels.split_first().ok_or_else(|| invalid!("cannot compose an empty kernel list"))?;
    let mut acc = first.clone();
    for k in rest {
        let size = acc.size + k.size - 1;
        acc = Kernel { size, values: convolve_full(&acc, k) };
    }
    Kernel::normalized(acc.size, acc.values)
}

/// Default grid for a motion kernel of length `l`.
pub fn motion_size(l: f64) -> usize {
    odd_size_above(l.ceil() + 1.0)
}

/// Default grid for a defocus disk of radius `r`.
pub fn defocus_size(r: f64) -> usize {
    odd_size_above(2.0 * r)
}

/// Default grid for a shake trajectory of arc length `len`. A path of arc
/// length `len` never strays more than `len / 2` from its bounding-box
/// center, so this always contains it.
pub fn shake_size(len: f64) -> usize {
    2 * ((len / 2.0).ceil() as usize + 1) + 1
}

/// Smallest odd grid strictly larger than `extent`.
pub fn odd_size_above(extent: f64) -> usize {
    let s = extent.floor() as usize + 1;
    if s % 2 == 0 { s + 1 } else { s }
}
