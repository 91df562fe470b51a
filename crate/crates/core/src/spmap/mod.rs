//! Sparse texture mapping: interval-downsampled triangle lists and a small
//! z-buffered rasterizer that warps source-image texture onto target geometry.
//!
//! Pixel `(i, j)` covers `[i, i+1) × [j, j+1)` and is sampled at its centre.
//! Larger depth is nearer to the viewer. A triangle is front-facing when its
//! signed image-plane area is positive.

mod raster;

use std::path::Path;
use std::time::{Duration, Instant};

use image::{GrayImage, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::mmodel::{project, CoeffVector, MorphableModel};

pub use raster::{rasterize_triangle, signed_area2, ZBuffer};

/// Default prior side length in pixels.
pub const DEFAULT_SIZE: u32 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RasterConfig {
    pub width: u32,
    pub height: u32,
    pub background: Rgb<u8>,
    pub cull_backfaces: bool,
    pub bilinear: bool,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            width: DEFAULT_SIZE,
            height: DEFAULT_SIZE,
            background: Rgb([0, 0, 0]),
            cull_backfaces: true,
            bilinear: true,
        }
    }
}

impl RasterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidInput(format!(
                "raster size must be positive, got {}×{}",
                self.width, self.height
            )));
        }
        Ok(())
    }
}

/// A rendered prior and the pixels that some triangle wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct SparsePrior {
    pub pixels: RgbImage,
    mask: Vec<bool>,
    pub interval: usize,
}

impl SparsePrior {
    pub fn blank(cfg: &RasterConfig, interval: usize) -> Self {
        Self {
            pixels: RgbImage::from_pixel(cfg.width, cfg.height, cfg.background),
            mask: vec![false; (cfg.width * cfg.height) as usize],
            interval,
        }
    }

    pub fn width(&self) -> u32 {
        self.pixels.width()
    }

    pub fn height(&self) -> u32 {
        self.pixels.height()
    }

    pub fn is_masked(&self, x: u32, y: u32) -> bool {
        self.mask[(y * self.width() + x) as usize]
    }

    pub(crate) fn mark(&mut self, x: u32, y: u32, color: Rgb<u8>) {
        let w = self.width();
        self.mask[(y * w + x) as usize] = true;
        self.pixels.put_pixel(x, y, color);
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn masked_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Mask as 0/255 greyscale.
    pub fn mask_image(&self) -> GrayImage {
        GrayImage::from_fn(self.width(), self.height(), |x, y| {
            Luma([if self.is_masked(x, y) { 255 } else { 0 }])
        })
    }

    /// Writes `pixels` to `image_path` and the mask to `mask_path`, both PNG.
    pub fn save_png(&self, image_path: &Path, mask_path: &Path) -> Result<()> {
        self.pixels.save_with_format(image_path, image::ImageFormat::Png)?;
        self.mask_image().save_with_format(mask_path, image::ImageFormat::Png)?;
        Ok(())
    }
}

/// Keeps every `n`-th triangle starting with the first: 0-based indices
/// `0, n, 2n, …, kn` with `k = ⌊(K−1)/n⌋`.
pub fn downsample_triangles(triangles: &[[u32; 3]], n: usize) -> Result<Vec<[u32; 3]>> {
    if n < 1 {
        return Err(Error::InvalidInput("sampling interval must be >= 1".into()));
    }
    if triangles.is_empty() {
        return Err(Error::InvalidInput("mesh has no triangles".into()));
    }
    Ok(triangles.iter().step_by(n).copied().collect())
}

/// Number of triangles kept at interval `n` from a `k_total`-triangle mesh.
pub fn kept_count(k_total: usize, n: usize) -> usize {
    (k_total - 1) / n + 1
}

/// Accounting for one rendered prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RenderStats {
    pub kept_triangles: usize,
    pub drawn_triangles: usize,
    /// Distinct vertices referenced by the kept triangles.
    pub touched_vertices: usize,
    pub total_vertices: usize,
    pub masked_pixels: usize,
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub prior: SparsePrior,
    pub stats: RenderStats,
}

/// Renders the source image's texture through the target geometry, using only
/// the triangles kept at interval `n`.
pub fn render_sparse_prior(
    model: &MorphableModel,
    source_image: &RgbImage,
    source_c: &CoeffVector,
    target_c: &CoeffVector,
    n: usize,
    cfg: &RasterConfig,
) -> Result<RenderOutput> {
    cfg.validate()?;
    if source_image.width() == 0 || source_image.height() == 0 {
        return Err(Error::InvalidInput("source image is empty".into()));
    }
    if !source_c.is_finite() || !target_c.is_finite() {
        return Err(Error::InvalidInput("coefficients are not finite".into()));
    }
    let start = Instant::now();
    let kept = downsample_triangles(model.triangles(), n)?;
    let src = project(&model.evaluate_shape(source_c), source_c);
    let tgt = project(&model.evaluate_shape(target_c), target_c);

    let mut prior = SparsePrior::blank(cfg, n);
    let mut zbuf = ZBuffer::new(cfg.width, cfg.height);
    let mut drawn = 0;
    let mut touched = vec![false; model.n_vertices()];
    for tri in &kept {
        let idx = tri.map(|v| v as usize);
        idx.iter().for_each(|&v| touched[v] = true);
        let t_xy = idx.map(|v| [tgt.xy[(0, v)], tgt.xy[(1, v)]]);
        if cfg.cull_backfaces && signed_area2(&t_xy) <= 0.0 {
            continue;
        }
        let t_depth = idx.map(|v| tgt.depth[v]);
        let s_xy = idx.map(|v| [src.xy[(0, v)], src.xy[(1, v)]]);
        rasterize_triangle(&t_xy, &t_depth, &s_xy, source_image, &mut zbuf, &mut prior, cfg);
        drawn += 1;
    }
    let stats = RenderStats {
        kept_triangles: kept.len(),
        drawn_triangles: drawn,
        touched_vertices: touched.iter().filter(|&&t| t).count(),
        total_vertices: model.n_vertices(),
        masked_pixels: prior.masked_count(),
        elapsed: start.elapsed(),
    };
    Ok(RenderOutput { prior, stats })
}
