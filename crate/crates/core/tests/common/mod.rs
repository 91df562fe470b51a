//! Independent scalar-loop oracles shared by the integration tests.
#![allow(dead_code)]

use facedyn::mmodel::{CoeffVector, MorphableModel, N_EXPR, N_LANDMARKS, N_SHAPE};
use image::RgbImage;
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;

/// A random dense model with `n` vertices and unstructured geometry.
pub fn random_model(rng: &mut impl Rng, n: usize) -> MorphableModel {
    let rows = 3 * n;
    let mean = DVector::from_fn(rows, |_, _| rng.random_range(-30.0..30.0));
    let shape = DMatrix::from_fn(rows, N_SHAPE, |_, _| rng.random_range(-1.0..1.0));
    let expr = DMatrix::from_fn(rows, N_EXPR, |_, _| rng.random_range(-1.0..1.0));
    let k = rng.random_range(1..=2 * n);
    let tris = (0..k)
        .map(|_| std::array::from_fn(|_| rng.random_range(0..n as u32)))
        .collect();
    let landmarks = if n >= N_LANDMARKS {
        sample(rng, n, N_LANDMARKS).into_iter().map(|v| v as u32).collect()
    } else {
        (0..N_LANDMARKS).map(|_| rng.random_range(0..n as u32)).collect()
    };
    MorphableModel::new(mean, shape, expr, tris, landmarks).unwrap()
}

/// Model-space vertices by explicit summation over basis columns.
pub fn shape_oracle(m: &MorphableModel, c: &CoeffVector) -> Vec<[f64; 3]> {
    (0..m.n_vertices())
        .map(|i| {
            std::array::from_fn(|k| {
                let row = 3 * i + k;
                let mut v = m.mean_shape()[row];
                for j in 0..N_SHAPE {
                    v += m.shape_basis()[(row, j)] * c.alpha_s[j];
                }
                for j in 0..N_EXPR {
                    v += m.expr_basis()[(row, j)] * c.alpha_exp[j];
                }
                v
            })
        })
        .collect()
}

/// `(x, y, depth)` per vertex: each pose row dotted with `[s; 1]`.
pub fn project_oracle(m: &MorphableModel, c: &CoeffVector) -> Vec<[f64; 3]> {
    let p = c.to_array();
    shape_oracle(m, c)
        .iter()
        .map(|s| std::array::from_fn(|r| p[4 * r] * s[0] + p[4 * r + 1] * s[1] + p[4 * r + 2] * s[2] + p[4 * r + 3]))
        .collect()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

pub fn random_image(rng: &mut impl Rng, w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| image::Rgb(std::array::from_fn(|_| rng.random())))
}

pub fn pixel_loss_oracle(a: &RgbImage, b: &RgbImage) -> f64 {
    let mut s = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            for k in 0..3 {
                let d = a.get_pixel(x, y)[k] as f64 - b.get_pixel(x, y)[k] as f64;
                s += d * d;
            }
        }
    }
    s
}

pub fn psnr_oracle(a: &RgbImage, b: &RgbImage) -> f64 {
    let mse = pixel_loss_oracle(a, b) / (3 * a.width() * a.height()) as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        20.0 * 255.0f64.log10() - 10.0 * mse.log10()
    }
}

/// SSIM with two-pass window statistics and directly evaluated 2D weights.
pub fn ssim_oracle(a: &RgbImage, b: &RgbImage) -> f64 {
    let lum = |img: &RgbImage, x: u32, y: u32| {
        let p = img.get_pixel(x, y);
        0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
    };
    let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
    let mut weights = [[0.0f64; 11]; 11];
    let mut total = 0.0;
    for (i, row) in weights.iter_mut().enumerate() {
        for (j, w) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *w = (-(di * di + dj * dj) / 4.5).exp();
            total += *w;
        }
    }
    let mut sum = 0.0;
    let mut n = 0;
    for y0 in 0..=a.height() - 11 {
        for x0 in 0..=a.width() - 11 {
            let mut mu = [0.0, 0.0];
            for i in 0..11 {
                for j in 0..11 {
                    let w = weights[i][j] / total;
                    mu[0] += w * lum(a, x0 + j as u32, y0 + i as u32);
                    mu[1] += w * lum(b, x0 + j as u32, y0 + i as u32);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let w = weights[i][j] / total;
                    let da = lum(a, x0 + j as u32, y0 + i as u32) - mu[0];
                    let db = lum(b, x0 + j as u32, y0 + i as u32) - mu[1];
                    va += w * da * da;
                    vb += w * db * db;
                    cov += w * da * db;
                }
            }
            sum += ((2.0 * mu[0] * mu[1] + c1) * (2.0 * cov + c2))
                / ((mu[0] * mu[0] + mu[1] * mu[1] + c1) * (va + vb + c2));
            n += 1;
        }
    }
    sum / n as f64
}

pub fn lrms_oracle(p: &[[f64; 2]], q: &[[f64; 2]], normalize: bool) -> f64 {
    let mut s = 0.0;
    for (a, b) in p.iter().zip(q) {
        s += (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    }
    let rms = (s / p.len() as f64).sqrt();
    if !normalize {
        return rms;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for b in q {
        x0 = x0.min(b[0]);
        x1 = x1.max(b[0]);
        y0 = y0.min(b[1]);
        y1 = y1.max(b[1]);
    }
    rms / ((x1 - x0).powi(2) + (y1 - y0).powi(2)).sqrt()
}

pub fn identity_loss_oracle(e1: &[f64], e2: &[f64]) -> f64 {
    let n1 = e1.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n2 = e2.iter().map(|v| v * v).sum::<f64>().sqrt();
    e1.iter().zip(e2).map(|(a, b)| (a / n1 - b / n2).powi(2)).sum()
}
