//! Minimal PNG output: a line plot for 1D curves and a heatmap for 2D maps.
//! Values at or below zero are clipped on log scales.

use std::path::Path;

use image::{Rgb, RgbImage};
use scatterfit::expr::Values;

use crate::error::CliError;
use crate::simulate::Curve;

const W: u32 = 640;
const H: u32 = 480;
const MARGIN: u32 = 40;

fn magnitudes(v: &Values) -> Vec<f64> {
    match v {
        Values::Real(x) => x.clone(),
        Values::Complex(z) => z.iter().map(|c| c.norm()).collect(),
    }
}

/// log10 when every finite value is positive and the range spans more than
/// three decades; otherwise linear.
fn transform(v: &[f64]) -> Vec<f64> {
    let pos: Vec<f64> = v.iter().cloned().filter(|x| x.is_finite() && *x > 0.0).collect();
    let (lo, hi) = pos.iter().fold((f64::INFINITY, 0.0f64), |(a, b), x| (a.min(*x), b.max(*x)));
    if !pos.is_empty() && hi / lo > 1e3 {
        v.iter().map(|x| if *x > 0.0 { x.log10() } else { f64::NAN }).collect()
    } else {
        v.to_vec()
    }
}

fn range(v: &[f64]) -> (f64, f64) {
    let (lo, hi) = v
        .iter()
        .filter(|x| x.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo <= 0.0 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, c);
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

fn curve_image(x: &[f64], y: &[f64]) -> RgbImage {
    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    let black = Rgb([0, 0, 0]);
    let (x0, x1) = (MARGIN as i64, (W - MARGIN / 2) as i64);
    let (y0, y1) = ((H - MARGIN) as i64, (MARGIN / 2) as i64);
    line(&mut img, (x0, y0), (x1, y0), black);
    line(&mut img, (x0, y0), (x0, y1), black);
    let (xl, xh) = range(x);
    let (yl, yh) = range(y);
    let px = |v: f64| x0 + ((v - xl) / (xh - xl) * (x1 - x0) as f64).round() as i64;
    let py = |v: f64| y0 + ((v - yl) / (yh - yl) * (y1 - y0) as f64).round() as i64;
    let blue = Rgb([31, 90, 180]);
    let mut prev: Option<(i64, i64)> = None;
    for (a, b) in x.iter().zip(y) {
        if !(a.is_finite() && b.is_finite()) {
            prev = None;
            continue;
        }
        let p = (px(*a), py(*b));
        if let Some(q) = prev {
            line(&mut img, q, p, blue);
        } else {
            line(&mut img, p, p, blue);
        }
        prev = Some(p);
    }
    img
}

fn colour(t: f64) -> Rgb<u8> {
    // dark blue through cyan and yellow to white
    let t = t.clamp(0.0, 1.0);
    let stops = [[0.05, 0.0, 0.25], [0.0, 0.6, 0.8], [0.95, 0.85, 0.1], [1.0, 1.0, 1.0]];
    let s = t * (stops.len() - 1) as f64;
    let i = (s.floor() as usize).min(stops.len() - 2);
    let f = s - i as f64;
    let c: [u8; 3] = std::array::from_fn(|k| ((stops[i][k] * (1.0 - f) + stops[i + 1][k] * f) * 255.0).round() as u8);
    Rgb(c)
}

/// `v` is laid out row-major over `nx × ny` with the second axis fastest;
/// the first axis runs left to right and the second bottom to top.
fn heatmap(v: &[f64], nx: usize, ny: usize) -> RgbImage {
    let (lo, hi) = range(v);
    let mut img = RgbImage::new(nx as u32, ny as u32);
    for i in 0..nx {
        for j in 0..ny {
            let z = v[i * ny + j];
            let c = if z.is_finite() { colour((z - lo) / (hi - lo)) } else { Rgb([0, 0, 0]) };
            img.put_pixel(i as u32, (ny - 1 - j) as u32, c);
        }
    }
    img
}

/// Axes of length one are dropped, so a 3D grid with one fixed coordinate
/// renders as a heatmap.
pub fn render(c: &Curve) -> Result<RgbImage, CliError> {
    let v = transform(&magnitudes(&c.values));
    let live: Vec<usize> = (0..c.shape.len()).filter(|&k| c.shape[k] > 1).collect();
    match (c.shape.len(), live.as_slice()) {
        (1, _) => Ok(curve_image(&c.coords[0], &v)),
        (_, [k]) => Ok(curve_image(&c.coords[*k], &v)),
        (_, [a, b]) => Ok(heatmap(&v, c.shape[*a], c.shape[*b])),
        _ => Err(CliError::schema(
            "--format",
            format!("png needs a 1D curve or a 2D grid; `{}` has shape {:?}", c.functor, c.shape),
        )),
    }
}

pub fn write_png(c: &Curve, path: &Path) -> Result<(), CliError> {
    render(c)?
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| CliError::schema("--out", format!("cannot write {}: {e}", path.display())))
}
