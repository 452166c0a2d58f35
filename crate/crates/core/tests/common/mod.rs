#![allow(dead_code)]

use deblur_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Uniform values kept away from zero so kinks (leaky ReLU) are not probed.
pub fn rand_away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) { v } else { -v }
    })
}

pub fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Naive nested-loop cross-correlation.
pub fn naive_conv2d(x: &Tensor<f64>, w: &Tensor<f64>, stride: usize, pad: usize) -> Vec<f64> {
    let [n, c, h, wd] = x.dims4().unwrap();
    let [o, _, kh, kw] = w.dims4().unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let xv = |b: usize, ch: usize, i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 || i >= h as isize || j >= wd as isize {
            0.0
        } else {
            x.data()[((b * c + ch) * h + i as usize) * wd + j as usize]
        }
    };
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for ch in 0..c {
                        for a in 0..kh {
                            for bb in 0..kw {
                                let wv = w.data()[((oc * c + ch) * kh + a) * kw + bb];
                                acc += wv * xv(b, ch, (i * stride + a) as isize - pad as isize, (j * stride + bb) as isize - pad as isize);
                            }
                        }
                    }
                    out[((b * o + oc) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    out
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Smooth synthetic scene: a gradient background with a few filled discs
/// and rectangles in random colors.
pub fn scene(size: usize, seed: u64) -> deblur_core::raster::Image<f64> {
    let mut r = rng(seed);
    let base: [f64; 3] = [r.random_range(0.1..0.5), r.random_range(0.1..0.5), r.random_range(0.1..0.5)];
    let tilt: (f64, f64) = (r.random_range(-0.4..0.4), r.random_range(-0.4..0.4));
    let shapes: Vec<(bool, f64, f64, f64, f64, [f64; 3])> = (0..5)
        .map(|_| {
            (
                r.random_bool(0.5),
                r.random_range(0.0..1.0),
                r.random_range(0.0..1.0),
                r.random_range(0.08..0.3),
                r.random_range(0.08..0.3),
                [r.random_range(0.0..1.0), r.random_range(0.0..1.0), r.random_range(0.0..1.0)],
            )
        })
        .collect();
    deblur_core::raster::Image::from_fn(3, size, size, |c, y, x| {
        let (u, v) = (x as f64 / size as f64, y as f64 / size as f64);
        let mut val = base[c] + tilt.0 * (u - 0.5) + tilt.1 * (v - 0.5);
        for &(disc, cx, cy, a, b, col) in &shapes {
            let inside = if disc { (u - cx).powi(2) + (v - cy).powi(2) <= a * a } else { (u - cx).abs() <= a && (v - cy).abs() <= b };
            if inside {
                val = col[c];
            }
        }
        val.clamp(0.0, 1.0)
    })
}

/// Writes `count` synthetic PNG scenes into `dir`.
pub fn write_scenes(dir: &std::path::Path, count: usize, size: usize, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    for k in 0..count {
        scene(size, seed.wrapping_add(k as u64)).save_png(&dir.join(format!("scene_{k:02}.png"))).unwrap();
    }
}
