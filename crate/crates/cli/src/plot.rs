//! Static loss-curve chart: one panel per logged term, each scaled to its
//! own range, iterations on the horizontal axis.

use image::{Rgb, RgbImage};

use deblur_core::train::TrainLog;

const WIDTH: u32 = 720;
const PANEL: u32 = 140;
const MARGIN: u32 = 12;

const SERIES: [(&str, [u8; 3]); 4] = [
    ("critic_loss", [200, 40, 40]),
    ("gen_loss", [40, 90, 200]),
    ("gp", [230, 140, 0]),
    ("perceptual", [30, 150, 60]),
];

fn value(log: &TrainLog, name: &str, i: usize) -> f64 {
    let r = &log.records[i];
    match name {
        "critic_loss" => r.critic_loss,
        "gen_loss" => r.gen_loss,
        "gp" => r.gp,
        _ => r.perceptual,
    }
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Renders the log; an empty log yields empty frames.
pub fn loss_curve(log: &TrainLog) -> RgbImage {
    let height = SERIES.len() as u32 * (PANEL + MARGIN) + MARGIN;
    let mut img = RgbImage::from_pixel(WIDTH, height, Rgb([255, 255, 255]));
    let frame = Rgb([160, 160, 160]);
    let (left, right) = (MARGIN as i64, (WIDTH - MARGIN) as i64);
    let n = log.records.len();
    for (p, &(name, color)) in SERIES.iter().enumerate() {
        let top = (MARGIN + p as u32 * (PANEL + MARGIN)) as i64;
        let bottom = top + PANEL as i64;
        for (a, b) in [((left, top), (right, top)), ((left, bottom), (right, bottom)), ((left, top), (left, bottom)), ((right, top), (right, bottom))] {
            line(&mut img, a, b, frame);
        }
        let values: Vec<f64> = (0..n).map(|i| value(log, name, i)).filter(|v| v.is_finite()).collect();
        if values.len() != n || n == 0 {
            continue;
        }
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let point = |i: usize| {
            let x = if n > 1 { left + 2 + ((right - left - 4) as f64 * i as f64 / (n - 1) as f64).round() as i64 } else { (left + right) / 2 };
            let y = bottom - 2 - ((PANEL - 4) as f64 * (values[i] - lo) / span).round() as i64;
            (x, y)
        };
        for i in 1..n {
            line(&mut img, point(i - 1), point(i), Rgb(color));
        }
        if n == 1 {
            line(&mut img, point(0), point(0), Rgb(color));
        }
    }
    img
}
