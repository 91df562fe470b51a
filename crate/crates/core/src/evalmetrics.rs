//! Image and landmark quality metrics, plus the pixel and identity losses.

use image::RgbImage;
use nalgebra::Matrix2xX;

use crate::error::{Error, Result};

/// 2×M landmark positions in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: Matrix2xX<f64>,
}

impl LandmarkSet {
    pub fn new(points: Matrix2xX<f64>) -> Result<Self> {
        if points.ncols() == 0 {
            return Err(Error::InvalidInput("landmark set is empty".into()));
        }
        if !points.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("landmark set has non-finite entries".into()));
        }
        Ok(Self { points })
    }

    pub fn from_pairs(pairs: &[[f64; 2]]) -> Result<Self> {
        Self::new(Matrix2xX::from_iterator(pairs.len(), pairs.iter().flatten().copied()))
    }

    pub fn len(&self) -> usize {
        self.points.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.points.ncols() == 0
    }

    pub fn points(&self) -> &Matrix2xX<f64> {
        &self.points
    }

    /// Diagonal of the axis-aligned bounding box.
    pub fn bbox_diagonal(&self) -> f64 {
        let w = self.points.row(0).max() - self.points.row(0).min();
        let h = self.points.row(1).max() - self.points.row(1).min();
        w.hypot(h)
    }
}

fn same_dims(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::Dimension(format!(
            "image sizes differ: {:?} vs {:?}",
            a.dimensions(),
            b.dimensions()
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over all channels. Identical images give
/// `f64::INFINITY`.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    same_dims(a, b)?;
    let n = a.as_raw().len() as f64;
    let sse = pixel_loss(a, b)?;
    if sse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse / n;
    Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
}

/// Sum of squared channel differences.
pub fn pixel_loss(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    same_dims(a, b)?;
    Ok(a.as_raw()
        .iter()
        .zip(b.as_raw())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

fn gaussian_window() -> [[f64; SSIM_WINDOW]; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let total: f64 = g.iter().sum();
    let mut w = [[0.0; SSIM_WINDOW]; SSIM_WINDOW];
    for (i, gi) in g.iter().enumerate() {
        for (j, gj) in g.iter().enumerate() {
            w[i][j] = gi * gj / (total * total);
        }
    }
    w
}

/// BT.601 luma.
pub fn luma(img: &RgbImage) -> Vec<f64> {
    img.pixels()
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect()
}

/// Mean SSIM on luma over every fully-contained 11×11 Gaussian window.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    same_dims(a, b)?;
    let (w, h) = (a.width() as usize, a.height() as usize);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!(
            "SSIM needs images of at least {SSIM_WINDOW}×{SSIM_WINDOW}, got {w}×{h}"
        )));
    }
    let (ya, yb) = (luma(a), luma(b));
    let win = gaussian_window();
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - SSIM_WINDOW {
        for x0 in 0..=w - SSIM_WINDOW {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (dy, row) in win.iter().enumerate() {
                let base = (y0 + dy) * w + x0;
                for (dx, &g) in row.iter().enumerate() {
                    let (p, q) = (ya[base + dx], yb[base + dx]);
                    ma += g * p;
                    mb += g * q;
                    saa += g * p * p;
                    sbb += g * q * q;
                    sab += g * p * q;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            let num = (2.0 * ma * mb + C1) * (2.0 * cov + C2);
            let den = (ma * ma + mb * mb + C1) * (va + vb + C2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Point-to-point landmark RMS. With `normalize`, divided by the truth set's
/// bounding-box diagonal.
pub fn lrms(pred: &LandmarkSet, truth: &LandmarkSet, normalize: bool) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "landmark counts differ: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    let sq: f64 = pred
        .points
        .column_iter()
        .zip(truth.points.column_iter())
        .map(|(p, q)| (p - q).norm_squared())
        .sum();
    let rms = (sq / pred.len() as f64).sqrt();
    if !normalize {
        return Ok(rms);
    }
    let diag = truth.bbox_diagonal();
    if diag <= 0.0 {
        return Err(Error::InvalidInput("truth landmarks have a zero-size bounding box".into()));
    }
    Ok(rms / diag)
}

/// Squared distance between the two embeddings after L2 normalisation.
pub fn identity_loss(e1: &[f64], e2: &[f64]) -> Result<f64> {
    if e1.len() != e2.len() {
        return Err(Error::Dimension(format!("embedding lengths differ: {} vs {}", e1.len(), e2.len())));
    }
    let n1 = e1.iter().map(|x| x * x).sum::<f64>().sqrt();
    let n2 = e2.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::InvalidInput("identity embedding is the zero vector".into()));
    }
    Ok(e1
        .iter()
        .zip(e2)
        .map(|(a, b)| {
            let d = a / n1 - b / n2;
            d * d
        })
        .sum())
}
