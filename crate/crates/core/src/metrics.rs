//! Point and interval metrics over `T x N` test grids.

use ndarray::Array2;

use crate::error::{Result, StuaError};

fn same_shape(ctx: &'static str, a: &Array2<f64>, b: &Array2<f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(StuaError::shape(
            ctx,
            format!("{:?}", a.dim()),
            format!("{:?}", b.dim()),
        ));
    }
    if a.is_empty() {
        return Err(StuaError::shape(ctx, "at least one cell", 0));
    }
    Ok(())
}

/// Strict containment `h_hat - |sigma| < h < h_hat + |sigma|`.
pub fn covered(h_hat: f64, sigma: f64, h: f64) -> bool {
    let s = sigma.abs();
    h_hat - s < h && h < h_hat + s
}

/// Prediction interval coverage probability.
pub fn picp(h_hat: &Array2<f64>, sigma_hat: &Array2<f64>, h: &Array2<f64>) -> Result<f64> {
    same_shape("picp sigma", h_hat, sigma_hat)?;
    same_shape("picp truth", h_hat, h)?;
    let hits = ndarray::Zip::from(h_hat)
        .and(sigma_hat)
        .and(h)
        .fold(0usize, |acc, &p, &s, &y| acc + covered(p, s, y) as usize);
    Ok(hits as f64 / h.len() as f64)
}

pub fn rmse(h_hat: &Array2<f64>, h: &Array2<f64>) -> Result<f64> {
    same_shape("rmse", h_hat, h)?;
    let sq = ndarray::Zip::from(h_hat)
        .and(h)
        .fold(0.0, |acc, &p, &y| acc + (p - y).powi(2));
    Ok((sq / h.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mape {
    /// Percentage.
    pub value: f64,
    /// Cells skipped because the truth is below the floor.
    pub excluded: usize,
}

/// Mean absolute percentage error over cells with `h >= floor`.
pub fn mape(h_hat: &Array2<f64>, h: &Array2<f64>, floor: f64) -> Result<Mape> {
    same_shape("mape", h_hat, h)?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for (&p, &y) in h_hat.iter().zip(h.iter()) {
        if y >= floor {
            sum += (p - y).abs() / y;
            used += 1;
        }
    }
    if used == 0 {
        return Err(StuaError::UndefinedMetric(format!(
            "mape: all {} cells fall below the floor {floor}",
            h.len()
        )));
    }
    Ok(Mape {
        value: 100.0 * sum / used as f64,
        excluded: h.len() - used,
    })
}
