//! Static PNG charts: per-region prediction intervals and citywide
//! nearest-region heatmaps.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Result, StuaError};

const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([90, 90, 90]);
const BAND: Rgb<u8> = Rgb([190, 215, 240]);
const TRUTH: Rgb<u8> = Rgb([20, 20, 20]);
const ESTIMATE: Rgb<u8> = Rgb([200, 40, 40]);

/// Piecewise-linear dark-blue to yellow ramp over `[0, 1]`.
pub fn colormap(x: f64) -> Rgb<u8> {
    const STOPS: [[f64; 3]; 5] = [
        [68.0, 1.0, 84.0],
        [59.0, 82.0, 139.0],
        [33.0, 145.0, 140.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    let x = if x.is_finite() {
        x.clamp(0.0, 1.0)
    } else {
        0.0
    };
    let pos = x * (STOPS.len() - 1) as f64;
    let k = (pos.floor() as usize).min(STOPS.len() - 2);
    let f = pos - k as f64;
    let c = |i: usize| (STOPS[k][i] + f * (STOPS[k + 1][i] - STOPS[k][i])).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    img.write_to(
        &mut std::io::Cursor::new(&mut bytes),
        image::ImageFormat::Png,
    )
    .map_err(|e| StuaError::io(path, std::io::Error::other(e.to_string())))?;
    crate::experiment::write_atomic(path, &bytes)
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

/// Bresenham segment.
fn line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        put(img, x, y, color);
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

/// Interval chart for one region: shaded band `h_hat +- |sigma|`, the
/// estimate in red and the truth in black.
pub fn interval_chart(h_true: &[f64], h_hat: &[f64], sigma: &[f64], path: &Path) -> Result<()> {
    let t = h_true.len();
    if h_hat.len() != t || sigma.len() != t {
        return Err(StuaError::shape(
            "interval_chart",
            t,
            format!("{} / {}", h_hat.len(), sigma.len()),
        ));
    }
    let (width, height, margin) = (640u32, 240u32, 20i64);
    let mut img = RgbImage::from_pixel(width, height, BACKGROUND);
    if t == 0 {
        return save_png(&img, path);
    }
    let lo = (0..t)
        .map(|k| h_true[k].min(h_hat[k] - sigma[k].abs()))
        .fold(f64::INFINITY, f64::min);
    let hi = (0..t)
        .map(|k| h_true[k].max(h_hat[k] + sigma[k].abs()))
        .fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let plot_w = (width as i64 - 2 * margin) as f64;
    let plot_h = (height as i64 - 2 * margin) as f64;
    let px = |k: usize| margin + (k as f64 * plot_w / (t.max(2) - 1) as f64).round() as i64;
    let py = |v: f64| margin + ((hi - v) / span * plot_h).round() as i64;

    for k in 0..t {
        let x = px(k);
        let x_next = if k + 1 < t { px(k + 1) } else { x + 1 };
        let (top, bottom) = (py(h_hat[k] + sigma[k].abs()), py(h_hat[k] - sigma[k].abs()));
        for xx in x..x_next {
            line(&mut img, (xx, top), (xx, bottom), BAND);
        }
    }
    let bottom = height as i64 - margin;
    line(
        &mut img,
        (margin, bottom),
        (width as i64 - margin, bottom),
        AXIS,
    );
    line(&mut img, (margin, margin), (margin, bottom), AXIS);
    for k in 1..t {
        line(
            &mut img,
            (px(k - 1), py(h_true[k - 1])),
            (px(k), py(h_true[k])),
            TRUTH,
        );
        line(
            &mut img,
            (px(k - 1), py(h_hat[k - 1])),
            (px(k), py(h_hat[k])),
            ESTIMATE,
        );
    }
    save_png(&img, path)
}

/// Fills every pixel with the colour of its nearest region's value.
pub fn region_heatmap(coords: &[(f64, f64)], values: &[f64], path: &Path) -> Result<()> {
    if coords.len() != values.len() || coords.is_empty() {
        return Err(StuaError::shape(
            "region_heatmap",
            coords.len(),
            values.len(),
        ));
    }
    let (size, pad) = (320u32, 0.5);
    let min_x = coords.iter().map(|c| c.0).fold(f64::INFINITY, f64::min) - pad;
    let max_x = coords.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max) + pad;
    let min_y = coords.iter().map(|c| c.1).fold(f64::INFINITY, f64::min) - pad;
    let max_y = coords.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max) + pad;
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };

    let img = RgbImage::from_fn(size, size, |px, py| {
        let x = min_x + (px as f64 + 0.5) / size as f64 * (max_x - min_x);
        let y = max_y - (py as f64 + 0.5) / size as f64 * (max_y - min_y);
        let nearest = coords
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                let da = (a.0 - x).powi(2) + (a.1 - y).powi(2);
                let db = (b.0 - x).powi(2) + (b.1 - y).powi(2);
                da.total_cmp(&db)
            })
            .map(|(i, _)| i)
            .expect("nonempty");
        colormap((values[nearest] - lo) / span)
    });
    save_png(&img, path)
}
