//! File-based drivers behind the CLI subcommands.
//!
//! Every driver is a pure function of its inputs: output bytes depend only on
//! the model, images, coefficients and configuration. Wall-clock timings go to
//! `timing.json`, which is the one file excluded from the manifest.

mod metrics;

use std::fs;
use std::path::{Path, PathBuf};

use image::RgbImage;
use nalgebra::Matrix2xX;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynpred::{interpolate_sequence, DynPredictor};
use crate::error::{Error, Result};
use crate::evalmetrics::{lrms, LandmarkSet};
use crate::mmodel::{write_coeff_sequence, write_obj_file, Blocks, CoeffVector, MorphableModel};
use crate::spmap::{render_sparse_prior, RasterConfig, RenderStats};

pub use metrics::{evaluate_directories, write_metrics_csv, MetricRow};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const TIMING_FILE: &str = "timing.json";
pub const COEFFS_FILE: &str = "coeffs.jsonl";
pub const FINAL_COEFFS_FILE: &str = "final_coeffs.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetargetMode {
    /// Expression from the reference; pose and shape from the source.
    Expression,
    /// Pose and expression from the reference; shape from the source.
    Talking,
}

impl RetargetMode {
    pub fn blocks(self) -> Blocks {
        match self {
            RetargetMode::Expression => Blocks::EXPRESSION,
            RetargetMode::Talking => Blocks::TALKING,
        }
    }
}

/// Shared inputs of every rendering driver.
#[derive(Debug, Clone, Copy)]
pub struct RenderJob<'a> {
    pub model: &'a MorphableModel,
    pub source_image: &'a RgbImage,
    pub source_coeffs: &'a CoeffVector,
    pub interval: usize,
    pub raster: &'a RasterConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

impl FileEntry {
    fn of(dir: &Path, name: String) -> Result<Self> {
        let bytes = fs::read(dir.join(&name))?;
        Ok(Self {
            sha256: hex::encode(Sha256::digest(&bytes)),
            path: name,
        })
    }

    fn check(&self, dir: &Path) -> Result<()> {
        let p = dir.join(&self.path);
        if !p.is_file() {
            return Err(Error::MissingFile(p));
        }
        let got = hex::encode(Sha256::digest(fs::read(&p)?));
        if got != self.sha256 {
            return Err(Error::Format(format!("{}: hash {got} does not match manifest", self.path)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub index: usize,
    pub prior: FileEntry,
    pub mask: FileEntry,
    pub mesh: FileEntry,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub landmarks: Option<FileEntry>,
    pub drawn_triangles: usize,
    pub masked_pixels: usize,
}

/// Outputs of one run. Vertex and triangle counts give the sparse versus
/// dense accounting: `touched_vertices` are the vertices the kept triangles
/// reference, out of `total_vertices`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub frame_count: usize,
    pub interval: usize,
    pub width: u32,
    pub height: u32,
    pub kept_triangles: usize,
    pub total_triangles: usize,
    pub touched_vertices: usize,
    pub total_vertices: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub smoothness: Option<f64>,
    pub coefficients: FileEntry,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub final_coefficients: Option<FileEntry>,
    pub frames: Vec<FrameEntry>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST_FILE);
        if !p.is_file() {
            return Err(Error::MissingFile(p));
        }
        Ok(serde_json::from_slice(&fs::read(p)?)?)
    }

    /// Checks the counts and that every listed file exists with its hash.
    pub fn validate(&self, dir: &Path) -> Result<()> {
        if self.frames.len() != self.frame_count {
            return Err(Error::Format(format!(
                "manifest lists {} frames but declares {}",
                self.frames.len(),
                self.frame_count
            )));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.index != i {
                return Err(Error::Format(format!("frame entry {i} has index {}", f.index)));
            }
            for e in [&f.prior, &f.mask, &f.mesh].into_iter().chain(&f.landmarks) {
                e.check(dir)?;
            }
        }
        self.coefficients.check(dir)?;
        if let Some(e) = &self.final_coefficients {
            e.check(dir)?;
        }
        Ok(())
    }

    pub fn files(&self) -> Vec<&FileEntry> {
        let mut v = vec![&self.coefficients];
        v.extend(&self.final_coefficients);
        for f in &self.frames {
            v.extend([&f.prior, &f.mask, &f.mesh]);
            v.extend(&f.landmarks);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// Texture-mapping time per frame, milliseconds.
    pub mapping_ms: Vec<f64>,
    pub total_mapping_ms: f64,
}

/// Landmark JSON: `{"points": [[x, y], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkFile {
    pub points: Vec<[f64; 2]>,
}

impl LandmarkFile {
    pub fn from_matrix(m: &Matrix2xX<f64>) -> Self {
        Self {
            points: m.column_iter().map(|c| [c[0], c[1]]).collect(),
        }
    }

    pub fn to_matrix(&self) -> Matrix2xX<f64> {
        Matrix2xX::from_fn(self.points.len(), |r, c| self.points[c][r])
    }

    pub fn read(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        serde_json::from_slice(&fs::read(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }
}

/// Mean over `t` of the landmark RMS displacement between frames `t` and
/// `t+1`, in pixels. Zero for fewer than two frames.
pub fn smoothness(model: &MorphableModel, seq: &[CoeffVector]) -> Result<f64> {
    if seq.len() < 2 {
        return Ok(0.0);
    }
    let sets = seq
        .iter()
        .map(|c| LandmarkSet::new(model.landmarks_from_coeffs(c)))
        .collect::<Result<Vec<_>>>()?;
    let total = sets.windows(2).map(|w| lrms(&w[1], &w[0], false)).sum::<Result<f64>>()?;
    Ok(total / (seq.len() - 1) as f64)
}

fn frame_name(i: usize, suffix: &str) -> String {
    format!("frame_{i:04}_{suffix}")
}

/// Renders one prior per coefficient vector and writes priors, masks, OBJ
/// meshes, the coefficient sequence, the manifest and the timing file.
fn render_frames(
    job: &RenderJob<'_>,
    kind: &str,
    coeffs: &[CoeffVector],
    landmarks: bool,
    out_dir: &Path,
) -> Result<(Manifest, Timing)> {
    if coeffs.is_empty() {
        return Err(Error::InvalidInput("no frames to render".into()));
    }
    fs::create_dir_all(out_dir)?;
    let rendered: Vec<Result<_>> = coeffs
        .par_iter()
        .map(|c| render_sparse_prior(job.model, job.source_image, job.source_coeffs, c, job.interval, job.raster))
        .collect();

    // Writes are serialized by frame index; the first failing frame aborts.
    let mut frames = Vec::with_capacity(coeffs.len());
    let mut mapping_ms = Vec::with_capacity(coeffs.len());
    let mut first: Option<RenderStats> = None;
    for (i, (r, c)) in rendered.into_iter().zip(coeffs).enumerate() {
        let out = r.map_err(|e| e.at_frame(i))?;
        let write = || -> Result<FrameEntry> {
            let (prior, mask, mesh) = (frame_name(i, "prior.png"), frame_name(i, "mask.png"), frame_name(i, "mesh.obj"));
            out.prior.save_png(&out_dir.join(&prior), &out_dir.join(&mask))?;
            let shape = job.model.evaluate_shape(c);
            write_obj_file(&out_dir.join(&mesh), &shape.camera_points(c), job.model.triangles())?;
            let landmarks = if landmarks {
                let name = frame_name(i, "landmarks.json");
                LandmarkFile::from_matrix(&job.model.landmarks_from_coeffs(c)).write(&out_dir.join(&name))?;
                Some(FileEntry::of(out_dir, name)?)
            } else {
                None
            };
            Ok(FrameEntry {
                index: i,
                prior: FileEntry::of(out_dir, prior)?,
                mask: FileEntry::of(out_dir, mask)?,
                mesh: FileEntry::of(out_dir, mesh)?,
                landmarks,
                drawn_triangles: out.stats.drawn_triangles,
                masked_pixels: out.stats.masked_pixels,
            })
        };
        frames.push(write().map_err(|e| e.at_frame(i))?);
        mapping_ms.push(out.stats.elapsed.as_secs_f64() * 1e3);
        first.get_or_insert(out.stats);
    }
    write_coeff_sequence(&out_dir.join(COEFFS_FILE), coeffs)?;
    let stats = first.expect("at least one frame");
    let manifest = Manifest {
        kind: kind.to_string(),
        frame_count: frames.len(),
        interval: job.interval,
        width: job.raster.width,
        height: job.raster.height,
        kept_triangles: stats.kept_triangles,
        total_triangles: job.model.n_triangles(),
        touched_vertices: stats.touched_vertices,
        total_vertices: stats.total_vertices,
        smoothness: None,
        coefficients: FileEntry::of(out_dir, COEFFS_FILE.to_string())?,
        final_coefficients: None,
        frames,
    };
    let timing = Timing {
        total_mapping_ms: mapping_ms.iter().sum(),
        mapping_ms,
    };
    fs::write(out_dir.join(TIMING_FILE), serde_json::to_vec_pretty(&timing)?)?;
    Ok((manifest, timing))
}

fn write_manifest(out_dir: &Path, m: &Manifest) -> Result<()> {
    fs::write(out_dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(m)?)?;
    Ok(())
}

/// Recombines the source with every reference frame and renders the result.
pub fn run_retarget(job: &RenderJob<'_>, reference: &[CoeffVector], mode: RetargetMode, out_dir: &Path) -> Result<Manifest> {
    if reference.is_empty() {
        return Err(Error::InvalidInput("reference sequence is empty".into()));
    }
    let coeffs: Vec<CoeffVector> = reference.iter().map(|r| job.source_coeffs.recombine(r, mode.blocks())).collect();
    let kind = match mode {
        RetargetMode::Expression => "retarget-expr",
        RetargetMode::Talking => "retarget-talk",
    };
    let (m, _) = render_frames(job, kind, &coeffs, false, out_dir)?;
    write_manifest(out_dir, &m)?;
    Ok(m)
}

/// Free-running prediction of `t_len` frames from the source, with the shape
/// block held at the source's.
pub fn run_predict(job: &RenderJob<'_>, predictor: &DynPredictor, t_len: usize, out_dir: &Path) -> Result<Manifest> {
    let coeffs: Vec<CoeffVector> = predictor
        .predict_sequence(job.source_coeffs, t_len)?
        .into_iter()
        .map(|mut c| {
            c.alpha_s = job.source_coeffs.alpha_s;
            c
        })
        .collect();
    let (mut m, _) = render_frames(job, "predict", &coeffs, false, out_dir)?;
    m.smoothness = Some(smoothness(job.model, &coeffs)?);
    write_manifest(out_dir, &m)?;
    Ok(m)
}

/// How the frames between source and target are produced.
#[derive(Debug, Clone, Copy)]
pub enum TargetPath<'a> {
    Predictor(&'a DynPredictor),
    Interpolate,
}

/// Target-driven prediction (or the straight-line baseline) from the source
/// to `target`. Also writes per-frame landmarks and the last frame's
/// coefficients.
pub fn run_predict_target(
    job: &RenderJob<'_>,
    target: &CoeffVector,
    path: TargetPath<'_>,
    t_len: usize,
    out_dir: &Path,
) -> Result<Manifest> {
    let (kind, coeffs) = match path {
        TargetPath::Predictor(p) => ("predict-target", p.predict_target_driven(job.source_coeffs, target, t_len)?),
        TargetPath::Interpolate => ("interpolate", interpolate_sequence(job.source_coeffs, target, t_len)?),
    };
    let (mut m, _) = render_frames(job, kind, &coeffs, true, out_dir)?;
    write_coeff_sequence(&out_dir.join(FINAL_COEFFS_FILE), &coeffs[coeffs.len() - 1..])?;
    m.final_coefficients = Some(FileEntry::of(out_dir, FINAL_COEFFS_FILE.to_string())?);
    m.smoothness = Some(smoothness(job.model, &coeffs)?);
    write_manifest(out_dir, &m)?;
    Ok(m)
}

/// Renders a single prior to `prior_path` and its mask to `mask_path`.
pub fn render_prior(
    job: &RenderJob<'_>,
    target: &CoeffVector,
    prior_path: &Path,
    mask_path: &Path,
) -> Result<RenderStats> {
    let out = render_sparse_prior(job.model, job.source_image, job.source_coeffs, target, job.interval, job.raster)?;
    out.prior.save_png(prior_path, mask_path)?;
    Ok(out.stats)
}

/// Loads an RGB image; other colour types are converted.
pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(image::open(path)?.to_rgb8())
}

/// Reads the single coefficient vector stored in a JSON-lines file.
pub fn read_single_coeffs(path: &Path) -> Result<CoeffVector> {
    let seq = crate::mmodel::read_coeff_sequence(path)?;
    match seq.as_slice() {
        [c] => Ok(*c),
        _ => Err(Error::InvalidInput(format!(
            "{}: expected one coefficient vector, found {}",
            path.display(),
            seq.len()
        ))),
    }
}

/// Expands directories into their sorted `*.jsonl` files.
pub fn expand_sequence_paths(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut v: Vec<PathBuf> = fs::read_dir(p)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            v.retain(|f| f.extension().is_some_and(|e| e == "jsonl"));
            v.sort();
            out.extend(v);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(Error::MissingFile(p.clone()));
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidInput("no sequence files given".into()));
    }
    Ok(out)
}
