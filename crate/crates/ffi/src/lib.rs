//! C ABI over `facedyn`.
//!
//! Models and predictors are opaque heap handles released with their `_free`
//! function. Every fallible call returns an [`FdStatus`]; on failure the
//! message is available from [`fd_last_error`] on the same thread. Arrays are
//! caller-allocated with the documented lengths. Coefficient vectors hold
//! [`FD_N_COEFF`] doubles: the 3×4 pose row-major, then shape, then
//! expression.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use facedyn::dynpred::{interpolate_sequence, load_predictor, DynPredictor};
use facedyn::evalmetrics::{identity_loss, lrms, psnr, ssim, LandmarkSet};
use facedyn::mmodel::{fit_landmarks, load_model, project, CoeffVector, FitOptions, MorphableModel, N_LANDMARKS};
use facedyn::spmap::{kept_count, render_sparse_prior, RasterConfig};
use facedyn::Error;
use image::RgbImage;
use nalgebra::Matrix2xX;

pub const FD_N_COEFF: usize = 62;
pub const FD_N_LANDMARKS: usize = 68;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Numeric = 3,
    Format = 4,
    Panic = 5,
}

/// Opaque morphable model.
pub struct FdModel(MorphableModel);

/// Opaque coefficient-sequence predictor.
pub struct FdPredictor(DynPredictor);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(FdStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match e.exit_code() {
            3 => FdStatus::Numeric,
            4 => FdStatus::Format,
            _ => FdStatus::InvalidInput,
        };
        Fail(status, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(FdStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(FdStatus::InvalidInput, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FdStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            FdStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn to_path(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| invalid("path is not UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn read_coeffs(p: *const f64, what: &str) -> Result<CoeffVector, Fail> {
    Ok(CoeffVector::from_slice(slice(p, FD_N_COEFF, what)?)?)
}

unsafe fn model<'a>(m: *const FdModel) -> Result<&'a MorphableModel, Fail> {
    m.as_ref().map(|m| &m.0).ok_or_else(|| null("model"))
}

unsafe fn predictor<'a>(p: *const FdPredictor) -> Result<&'a DynPredictor, Fail> {
    p.as_ref().map(|p| &p.0).ok_or_else(|| null("predictor"))
}

unsafe fn image(p: *const u8, width: u32, height: u32, what: &str) -> Result<RgbImage, Fail> {
    let len = 3 * width as usize * height as usize;
    RgbImage::from_raw(width, height, slice(p, len, what)?.to_vec()).ok_or_else(|| invalid(format!("{what} has bad size")))
}

fn write_sequence(seq: &[CoeffVector], out: &mut [f64]) {
    for (c, chunk) in seq.iter().zip(out.chunks_exact_mut(FD_N_COEFF)) {
        chunk.copy_from_slice(&c.to_array());
    }
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn fd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a model container. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fd_model_load(path: *const c_char, out: *mut *mut FdModel) -> FdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = load_model(&to_path(path)?)?;
        *out = Box::into_raw(Box::new(FdModel(m)));
        Ok(())
    })
}

/// # Safety
/// `m` must come from [`fd_model_load`] and not be freed twice. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn fd_model_free(m: *mut FdModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Vertex count, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn fd_model_vertex_count(m: *const FdModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.n_vertices())
}

/// Triangle count, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn fd_model_triangle_count(m: *const FdModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.n_triangles())
}

/// Model-space vertices under `coeffs`, written as `x, y, z` per vertex
/// into `out_xyz` (3·N doubles).
///
/// # Safety
/// Pointers must be valid for the documented lengths.
#[no_mangle]
pub unsafe extern "C" fn fd_model_evaluate(m: *const FdModel, coeffs: *const f64, out_xyz: *mut f64) -> FdStatus {
    guard(|| {
        let m = model(m)?;
        let c = read_coeffs(coeffs, "coeffs")?;
        let out = slice_mut(out_xyz, 3 * m.n_vertices(), "out_xyz")?;
        out.copy_from_slice(m.evaluate_shape(&c).vertices.as_slice());
        Ok(())
    })
}

/// Image-plane positions (`x, y` per vertex, 2·N doubles) and depths (N
/// doubles). Either output may be null to skip it.
///
/// # Safety
/// Non-null pointers must be valid for the documented lengths.
#[no_mangle]
pub unsafe extern "C" fn fd_model_project(
    m: *const FdModel,
    coeffs: *const f64,
    out_xy: *mut f64,
    out_depth: *mut f64,
) -> FdStatus {
    guard(|| {
        let m = model(m)?;
        let c = read_coeffs(coeffs, "coeffs")?;
        let p = project(&m.evaluate_shape(&c), &c);
        if !out_xy.is_null() {
            slice_mut(out_xy, 2 * m.n_vertices(), "out_xy")?.copy_from_slice(p.xy.as_slice());
        }
        if !out_depth.is_null() {
            slice_mut(out_depth, m.n_vertices(), "out_depth")?.copy_from_slice(p.depth.as_slice());
        }
        Ok(())
    })
}

/// The 68 projected landmarks as `x, y` pairs (136 doubles).
///
/// # Safety
/// Pointers must be valid for the documented lengths.
#[no_mangle]
pub unsafe extern "C" fn fd_model_landmarks(m: *const FdModel, coeffs: *const f64, out_xy: *mut f64) -> FdStatus {
    guard(|| {
        let m = model(m)?;
        let c = read_coeffs(coeffs, "coeffs")?;
        slice_mut(out_xy, 2 * N_LANDMARKS, "out_xy")?.copy_from_slice(m.landmarks_from_coeffs(&c).as_slice());
        Ok(())
    })
}

/// Fits coefficients to 68 observed `x, y` landmarks. `out_objective` may
/// be null.
///
/// # Safety
/// Non-null pointers must be valid for the documented lengths.
#[no_mangle]
pub unsafe extern "C" fn fd_fit_landmarks(
    m: *const FdModel,
    observed_xy: *const f64,
    reg: f64,
    max_iter: usize,
    out_coeffs: *mut f64,
    out_objective: *mut f64,
) -> FdStatus {
    guard(|| {
        let m = model(m)?;
        let obs = Matrix2xX::from_column_slice(slice(observed_xy, 2 * N_LANDMARKS, "observed_xy")?);
        let out = slice_mut(out_coeffs, FD_N_COEFF, "out_coeffs")?;
        let opts = FitOptions {
            reg,
            max_iter,
            ..Default::default()
        };
        let fit = fit_landmarks(m, &obs, &opts)?;
        out.copy_from_slice(&fit.coeffs.to_array());
        if let Some(o) = out_objective.as_mut() {
            *o = fit.objective();
        }
        Ok(())
    })
}

/// Renders a sparse prior of `width × height` pixels: the source texture
/// mapped through the target geometry with every `interval`-th triangle.
/// Writes interleaved RGB into `out_rgb` (3·w·h bytes), 0/255 into
/// `out_mask` (w·h bytes, may be null) and the masked pixel count into
/// `out_masked` (may be null).
///
/// # Safety
/// Non-null pointers must be valid for the documented lengths.
#[no_mangle]
pub unsafe extern "C" fn fd_render_prior(
    m: *const FdModel,
    source_rgb: *const u8,
    source_width: u32,
    source_height: u32,
    source_coeffs: *const f64,
    target_coeffs: *const f64,
    interval: usize,
    width: u32,
    height: u32,
    out_rgb: *mut u8,
    out_mask: *mut u8,
    out_masked: *mut usize,
) -> FdStatus {
    guard(|| {
        let m = model(m)?;
        let src = image(source_rgb, source_width, source_height, "source_rgb")?;
        let (sc, tc) = (read_coeffs(source_coeffs, "source_coeffs")?, read_coeffs(target_coeffs, "target_coeffs")?);
        let cfg = RasterConfig {
            width,
            height,
            ..Default::default()
        };
        let r = render_sparse_prior(m, &src, &sc, &tc, interval, &cfg)?;
        let n = width as usize * height as usize;
        slice_mut(out_rgb, 3 * n, "out_rgb")?.copy_from_slice(r.prior.pixels.as_raw());
        if !out_mask.is_null() {
            slice_mut(out_mask, n, "out_mask")?.copy_from_slice(r.prior.mask_image().as_raw());
        }
        if let Some(o) = out_masked.as_mut() {
            *o = r.stats.masked_pixels;
        }
        Ok(())
    })
}

/// Triangles kept from `k_total` at interval `n`; 0 when `n` is 0.
#[no_mangle]
pub extern "C" fn fd_kept_count(k_total: usize, n: usize) -> usize {
    if n == 0 {
        0
    } else {
        kept_count(k_total, n)
    }
}

/// Loads a predictor checkpoint. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fd_predictor_load(path: *const c_char, out: *mut *mut FdPredictor) -> FdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = load_predictor(&to_path(path)?)?;
        *out = Box::into_raw(Box::new(FdPredictor(p)));
        Ok(())
    })
}

/// # Safety
/// `p` must come from [`fd_predictor_load`] and not be freed twice. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn fd_predictor_free(p: *mut FdPredictor) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Hidden width, or 0 for a null handle.
///
/// # Safety
/// `p` must be null or a live predictor handle.
#[no_mangle]
pub unsafe extern "C" fn fd_predictor_hidden(p: *const FdPredictor) -> usize {
    p.as_ref().map_or(0, |p| p.0.hidden())
}

/// Free-running prediction of `t_len` frames after `d0` into `out`
/// (62·t_len doubles).
///
/// # Safety
/// Pointers must be valid for the documented lengths.
#[no_mangle]
pub unsafe extern "C" fn fd_predict_sequence(p: *const FdPredictor, d0: *const f64, t_len: usize, out: *mut f64) -> FdStatus {
    guard(|| {
        let p = predictor(p)?;
        let seq = p.predict_sequence(&read_coeffs(d0, "d0")?, t_len)?;
        write_sequence(&seq, slice_mut(out, FD_N_COEFF * t_len, "out")?);
        Ok(())
    })
}

/// Prediction of `t_len` frames from `d0` towards `target` into `out`
/// (62·t_len doubles).
///
/// # Safety
/// Pointers must be valid for the documented lengths.
#[no_mangle]
pub unsafe extern "C" fn fd_predict_target(
    p: *const FdPredictor,
    d0: *const f64,
    target: *const f64,
    t_len: usize,
    out: *mut f64,
) -> FdStatus {
    guard(|| {
        let p = predictor(p)?;
        let seq = p.predict_target_driven(&read_coeffs(d0, "d0")?, &read_coeffs(target, "target")?, t_len)?;
        write_sequence(&seq, slice_mut(out, FD_N_COEFF * t_len, "out")?);
        Ok(())
    })
}

/// Straight-line frames `1..=t_len` from `d0` to `target` into `out`
/// (62·t_len doubles); the last frame equals `target` exactly.
///
/// # Safety
/// Pointers must be valid for the documented lengths.
#[no_mangle]
pub unsafe extern "C" fn fd_interpolate(d0: *const f64, target: *const f64, t_len: usize, out: *mut f64) -> FdStatus {
    guard(|| {
        let seq = interpolate_sequence(&read_coeffs(d0, "d0")?, &read_coeffs(target, "target")?, t_len)?;
        write_sequence(&seq, slice_mut(out, FD_N_COEFF * t_len, "out")?);
        Ok(())
    })
}

unsafe fn image_metric(
    a: *const u8,
    b: *const u8,
    width: u32,
    height: u32,
    out: *mut f64,
    f: fn(&RgbImage, &RgbImage) -> facedyn::Result<f64>,
) -> FdStatus {
    guard(|| {
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        *o = f(&image(a, width, height, "a")?, &image(b, width, height, "b")?)?;
        Ok(())
    })
}

/// PSNR in dB of two interleaved RGB images; `+inf` when identical.
///
/// # Safety
/// Images must hold 3·w·h bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fd_psnr(a: *const u8, b: *const u8, width: u32, height: u32, out: *mut f64) -> FdStatus {
    image_metric(a, b, width, height, out, psnr)
}

/// Mean SSIM of two interleaved RGB images (at least 11×11).
///
/// # Safety
/// Images must hold 3·w·h bytes; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fd_ssim(a: *const u8, b: *const u8, width: u32, height: u32, out: *mut f64) -> FdStatus {
    image_metric(a, b, width, height, out, ssim)
}

/// Landmark RMS between `n` predicted and true `x, y` pairs, divided by the
/// truth's bounding-box diagonal when `normalize` is non-zero.
///
/// # Safety
/// `pred` and `truth` must hold 2·n doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fd_lrms(pred: *const f64, truth: *const f64, n: usize, normalize: i32, out: *mut f64) -> FdStatus {
    guard(|| {
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        let set = |p: &[f64]| LandmarkSet::new(Matrix2xX::from_column_slice(p));
        *o = lrms(&set(slice(pred, 2 * n, "pred")?)?, &set(slice(truth, 2 * n, "truth")?)?, normalize != 0)?;
        Ok(())
    })
}

/// Squared distance between the unit-normalised embeddings `e1` and `e2`
/// of length `n`.
///
/// # Safety
/// `e1` and `e2` must hold `n` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fd_identity_loss(e1: *const f64, e2: *const f64, n: usize, out: *mut f64) -> FdStatus {
    guard(|| {
        let o = out.as_mut().ok_or_else(|| null("out"))?;
        *o = identity_loss(slice(e1, n, "e1")?, slice(e2, n, "e2")?)?;
        Ok(())
    })
}
