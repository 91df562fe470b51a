//! Synthetic models, coefficients and textures, so nothing here needs a
//! third-party face asset.

use image::{Rgb, RgbImage};
use nalgebra::{DMatrix, DVector, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{CoeffVector, MorphableModel, N_EXPR, N_LANDMARKS, N_SHAPE};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Parameters of the synthetic dome-shaped grid face.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthModelSpec {
    pub rows: usize,
    pub cols: usize,
    /// Half-width of the grid in model units.
    pub extent: f64,
    /// Height of the dome at its centre.
    pub depth: f64,
    pub shape_amp: f64,
    pub expr_amp: f64,
}

impl SynthModelSpec {
    pub fn grid(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            extent: 40.0,
            depth: 25.0,
            shape_amp: 1.5,
            expr_amp: 1.0,
        }
    }
}

impl Default for SynthModelSpec {
    fn default() -> Self {
        Self::grid(40, 40)
    }
}

fn f32_exact(x: f64) -> f64 {
    x as f32 as f64
}

fn smooth_basis(rng: &mut ChaCha8Rng, xy: &[(f64, f64)], width: usize, amp: f64, extent: f64) -> DMatrix<f64> {
    let n = xy.len();
    let mut m = DMatrix::zeros(3 * n, width);
    for j in 0..width {
        let fx: f64 = rng.random_range(-1.5..1.5) * std::f64::consts::PI / extent;
        let fy: f64 = rng.random_range(-1.5..1.5) * std::f64::consts::PI / extent;
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let gains: [f64; 3] = std::array::from_fn(|_| amp * Distribution::<f64>::sample(&StandardNormal, rng));
        for (i, &(x, y)) in xy.iter().enumerate() {
            let w = (fx * x + fy * y + phase).sin();
            for k in 0..3 {
                m[(3 * i + k, j)] = f32_exact(gains[k] * w);
            }
        }
    }
    m
}

/// Dome-shaped grid mesh with smooth random bases. Triangles are wound with
/// positive signed area in the image plane under the identity pose. All
/// values are representable in `f32`, so the model survives a container
/// round trip unchanged.
pub fn synthetic_model(spec: &SynthModelSpec, seed: u64) -> MorphableModel {
    assert!(spec.rows >= 2 && spec.cols >= 2, "grid needs at least 2×2 vertices");
    let mut rng = rng(seed);
    let (rows, cols) = (spec.rows, spec.cols);
    let n = rows * cols;
    let mut xy = Vec::with_capacity(n);
    let mut mean = DVector::zeros(3 * n);
    for r in 0..rows {
        for c in 0..cols {
            let x = -spec.extent + 2.0 * spec.extent * c as f64 / (cols - 1) as f64;
            let y = -spec.extent + 2.0 * spec.extent * r as f64 / (rows - 1) as f64;
            let rr = (x * x + y * y) / (2.0 * spec.extent * spec.extent);
            let z = spec.depth * (1.0 - rr).max(0.0).sqrt();
            let i = r * cols + c;
            mean[3 * i] = f32_exact(x);
            mean[3 * i + 1] = f32_exact(y);
            mean[3 * i + 2] = f32_exact(z);
            xy.push((x, y));
        }
    }
    let shape = smooth_basis(&mut rng, &xy, N_SHAPE, spec.shape_amp, spec.extent);
    let expr = smooth_basis(&mut rng, &xy, N_EXPR, spec.expr_amp, spec.extent);

    let mut triangles = Vec::with_capacity(2 * (rows - 1) * (cols - 1));
    for r in 0..rows - 1 {
        for c in 0..cols - 1 {
            let v00 = (r * cols + c) as u32;
            let v01 = v00 + 1;
            let v10 = v00 + cols as u32;
            let v11 = v10 + 1;
            triangles.push([v00, v01, v10]);
            triangles.push([v01, v11, v10]);
        }
    }

    let landmarks = if n >= N_LANDMARKS {
        let mut picked: Vec<u32> = rand::seq::index::sample(&mut rng, n, N_LANDMARKS)
            .into_iter()
            .map(|i| i as u32)
            .collect();
        picked.sort_unstable();
        picked
    } else {
        (0..N_LANDMARKS).map(|j| (j % n) as u32).collect()
    };

    MorphableModel::new(mean, shape, expr, triangles, landmarks).expect("synthetic model is valid")
}

/// Four vertices, two triangles; the smallest valid container fixture.
pub fn tiny_model() -> MorphableModel {
    let mean = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0]);
    let mut shape = DMatrix::zeros(12, N_SHAPE);
    let mut expr = DMatrix::zeros(12, N_EXPR);
    for i in 0..12 {
        shape[(i, i % N_SHAPE)] = 0.5;
        expr[(i, i % N_EXPR)] = 0.25;
    }
    let landmarks = (0..N_LANDMARKS).map(|j| (j % 4) as u32).collect();
    MorphableModel::new(mean, shape, expr, vec![[0, 1, 2], [1, 3, 2]], landmarks).unwrap()
}

/// Random coefficients: a scaled rotation of up to ~0.3 rad per axis, centred
/// in a 128×128 frame, with `alpha ~ N(0, spread²)`.
pub fn random_coeffs(rng: &mut impl Rng, spread: f64) -> CoeffVector {
    let angle = |rng: &mut dyn rand::RngCore| rng.random_range(-0.3..0.3) * spread.min(1.0);
    let rot = Rotation3::from_euler_angles(angle(rng), angle(rng), angle(rng)).into_inner();
    let scale = rng.random_range(0.8..1.2);
    let t = Vector3::new(64.0 + rng.random_range(-5.0..5.0), 64.0 + rng.random_range(-5.0..5.0), 0.0);
    let mut c = CoeffVector::identity().with_pose(scale, &rot, &t);
    for a in c.alpha_s.iter_mut().chain(c.alpha_exp.iter_mut()) {
        let z: f64 = StandardNormal.sample(rng);
        *a = z * spread;
    }
    c
}

/// A frontal, unit-scale pose centred in a `size × size` frame.
pub fn centred_coeffs(size: u32) -> CoeffVector {
    let half = size as f64 / 2.0;
    CoeffVector::identity().with_pose(1.0, &nalgebra::Matrix3::identity(), &Vector3::new(half, half, 0.0))
}

/// Smooth colour texture, enough structure for sampling tests.
pub fn texture_image(width: u32, height: u32, seed: u64) -> RgbImage {
    let mut rng = rng(seed);
    let ph: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..std::f64::consts::TAU));
    RgbImage::from_fn(width, height, |x, y| {
        let (x, y) = (x as f64, y as f64);
        let r = 128.0 + 100.0 * (x / 9.0 + ph[0]).sin();
        let g = 128.0 + 100.0 * (y / 7.0 + ph[1]).sin();
        let b = 128.0 + 80.0 * ((x + y) / 11.0 + ph[2]).sin();
        Rgb([r.round() as u8, g.round() as u8, b.round() as u8])
    })
}

/// A reference motion: expression and head rotation oscillate around `base`.
pub fn reference_sequence(base: &CoeffVector, frames: usize, seed: u64) -> Vec<CoeffVector> {
    let mut rng = rng(seed);
    let expr_dir: Vec<f64> = (0..N_EXPR).map(|_| StandardNormal.sample(&mut rng)).collect();
    let yaw_amp = rng.random_range(0.05..0.2);
    let omega = std::f64::consts::TAU / frames.max(2) as f64;
    let rot0 = base.pose.fixed_view::<3, 3>(0, 0).into_owned();
    (0..frames)
        .map(|t| {
            let s = (omega * t as f64).sin();
            let mut c = *base;
            for (a, d) in c.alpha_exp.iter_mut().zip(&expr_dir) {
                *a += 1.5 * s * d;
            }
            let turn = Rotation3::from_euler_angles(0.0, yaw_amp * s, 0.0).into_inner();
            c.pose.fixed_view_mut::<3, 3>(0, 0).copy_from(&(rot0 * turn));
            c
        })
        .collect()
}
