use image::{Rgb, RgbImage};

use super::{RasterConfig, SparsePrior};

/// Per-pixel nearest depth written so far. Starts at negative infinity.
#[derive(Debug, Clone, PartialEq)]
pub struct ZBuffer {
    width: u32,
    height: u32,
    depth: Vec<f64>,
}

impl ZBuffer {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            depth: vec![f64::NEG_INFINITY; (width * height) as usize],
        }
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.depth[(y * self.width + x) as usize]
    }

    fn set(&mut self, x: u32, y: u32, z: f64) {
        self.depth[(y * self.width + x) as usize] = z;
    }
}

/// Twice the signed area of an image-plane triangle.
pub fn signed_area2(t: &[[f64; 2]; 3]) -> f64 {
    (t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[1][1] - t[0][1]) * (t[2][0] - t[0][0])
}

fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

fn sample_nearest(img: &RgbImage, u: f64, v: f64) -> Rgb<u8> {
    let x = (u.floor().max(0.0) as u32).min(img.width() - 1);
    let y = (v.floor().max(0.0) as u32).min(img.height() - 1);
    *img.get_pixel(x, y)
}

fn sample_bilinear(img: &RgbImage, u: f64, v: f64) -> Rgb<u8> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let fx = u - 0.5;
    let fy = v - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let ax = fx - x0;
    let ay = fy - y0;
    let clamp = |i: i64, n: i64| i.clamp(0, n - 1) as u32;
    let (xa, xb) = (clamp(x0 as i64, w), clamp(x0 as i64 + 1, w));
    let (ya, yb) = (clamp(y0 as i64, h), clamp(y0 as i64 + 1, h));
    let p00 = img.get_pixel(xa, ya);
    let p10 = img.get_pixel(xb, ya);
    let p01 = img.get_pixel(xa, yb);
    let p11 = img.get_pixel(xb, yb);
    Rgb(std::array::from_fn(|k| {
        let top = p00[k] as f64 * (1.0 - ax) + p10[k] as f64 * ax;
        let bot = p01[k] as f64 * (1.0 - ax) + p11[k] as f64 * ax;
        (top * (1.0 - ay) + bot * ay).round().clamp(0.0, 255.0) as u8
    }))
}

/// Fills one triangle into `out`, sampling `source_image` at the matching
/// barycentric position of `source`. Returns the number of pixels written.
///
/// A pixel is covered when all three barycentric weights of its centre are
/// non-negative and its interpolated depth is strictly nearer than the
/// z-buffer, so at equal depth the first write wins. Degenerate triangles
/// write nothing.
pub fn rasterize_triangle(
    target: &[[f64; 2]; 3],
    target_depth: &[f64; 3],
    source: &[[f64; 2]; 3],
    source_image: &RgbImage,
    zbuf: &mut ZBuffer,
    out: &mut SparsePrior,
    cfg: &RasterConfig,
) -> usize {
    debug_assert_eq!((zbuf.width, zbuf.height), (out.width(), out.height()));
    let area = signed_area2(target);
    if !area.is_finite() || area.abs() < 1e-12 {
        return 0;
    }
    let (w, h) = (out.width() as f64, out.height() as f64);
    let min_x = target.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let max_x = target.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    let min_y = target.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min);
    let max_y = target.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max);
    // Pixel centres i + 0.5 inside [min, max].
    let x0 = (min_x - 0.5).ceil().max(0.0);
    let x1 = (max_x - 0.5).floor().min(w - 1.0);
    let y0 = (min_y - 0.5).ceil().max(0.0);
    let y1 = (max_y - 0.5).floor().min(h - 1.0);
    if x0 > x1 || y0 > y1 {
        return 0;
    }
    let mut written = 0;
    for py in y0 as u32..=y1 as u32 {
        for px in x0 as u32..=x1 as u32 {
            let p = [px as f64 + 0.5, py as f64 + 0.5];
            let b0 = edge(target[1], target[2], p) / area;
            let b1 = edge(target[2], target[0], p) / area;
            let b2 = edge(target[0], target[1], p) / area;
            if b0 < 0.0 || b1 < 0.0 || b2 < 0.0 {
                continue;
            }
            let z = b0 * target_depth[0] + b1 * target_depth[1] + b2 * target_depth[2];
            if z <= zbuf.get(px, py) {
                continue;
            }
            let u = b0 * source[0][0] + b1 * source[1][0] + b2 * source[2][0];
            let v = b0 * source[0][1] + b1 * source[1][1] + b2 * source[2][1];
            let color = if cfg.bilinear {
                sample_bilinear(source_image, u, v)
            } else {
                sample_nearest(source_image, u, v)
            };
            zbuf.set(px, py, z);
            out.mark(px, py, color);
            written += 1;
        }
    }
    written
}
