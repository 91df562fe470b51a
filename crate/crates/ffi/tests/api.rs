use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use facedyn::dynpred::{save_predictor, DynPredictor, Normalization};
use facedyn::mmodel::{save_model, synth, CoeffVector};
use facedyn_ffi::*;

fn cpath(p: &Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(fd_last_error()) }.to_string_lossy().into_owned()
}

struct Model(*mut FdModel);

impl Drop for Model {
    fn drop(&mut self) {
        unsafe { fd_model_free(self.0) }
    }
}

fn load(dir: &Path, seed: u64) -> (facedyn::mmodel::MorphableModel, Model) {
    let m = synth::synthetic_model(&synth::SynthModelSpec::grid(16, 16), seed);
    let path = dir.join("m.fmm");
    save_model(&path, &m).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { fd_model_load(cpath(&path).as_ptr(), &mut h) }, FdStatus::Ok);
    (m, Model(h))
}

#[test]
fn model_queries_match_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let (m, h) = load(dir.path(), 1);
    let n = m.n_vertices();
    unsafe {
        assert_eq!(fd_model_vertex_count(h.0), n);
        assert_eq!(fd_model_triangle_count(h.0), m.n_triangles());
    }
    let c = synth::random_coeffs(&mut synth::rng(2), 1.0);
    let arr = c.to_array();
    let (mut xyz, mut xy, mut depth, mut lm) = (vec![0.0; 3 * n], vec![0.0; 2 * n], vec![0.0; n], vec![0.0; 2 * FD_N_LANDMARKS]);
    unsafe {
        assert_eq!(fd_model_evaluate(h.0, arr.as_ptr(), xyz.as_mut_ptr()), FdStatus::Ok);
        assert_eq!(fd_model_project(h.0, arr.as_ptr(), xy.as_mut_ptr(), depth.as_mut_ptr()), FdStatus::Ok);
        assert_eq!(fd_model_landmarks(h.0, arr.as_ptr(), lm.as_mut_ptr()), FdStatus::Ok);
    }
    let s = m.evaluate_shape(&c);
    assert_eq!(xyz, s.vertices.as_slice());
    let p = facedyn::mmodel::project(&s, &c);
    assert_eq!(xy, p.xy.as_slice());
    assert_eq!(depth, p.depth.as_slice());
    assert_eq!(lm, m.landmarks_from_coeffs(&c).as_slice());

    let mut fitted = [0.0; FD_N_COEFF];
    let mut obj = f64::NAN;
    unsafe {
        assert_eq!(fd_fit_landmarks(h.0, lm.as_ptr(), 1e-3, 200, fitted.as_mut_ptr(), &mut obj), FdStatus::Ok);
    }
    assert!(obj.is_finite() && obj >= 0.0);
    let back = m.landmarks_from_coeffs(&CoeffVector::from_slice(&fitted).unwrap());
    let worst = back.iter().zip(&lm).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 0.5, "landmark error {worst}");
}

#[test]
fn identity_render_reproduces_source() {
    let dir = tempfile::tempdir().unwrap();
    let (_, h) = load(dir.path(), 3);
    let src = synth::texture_image(64, 64, 4);
    let c = synth::centred_coeffs(64).to_array();
    let (mut rgb, mut mask, mut masked) = (vec![0u8; 3 * 64 * 64], vec![0u8; 64 * 64], 0usize);
    let status = unsafe {
        fd_render_prior(h.0, src.as_raw().as_ptr(), 64, 64, c.as_ptr(), c.as_ptr(), 1, 64, 64, rgb.as_mut_ptr(), mask.as_mut_ptr(), &mut masked)
    };
    assert_eq!(status, FdStatus::Ok, "{}", last_error());
    assert!(masked > 0);
    assert_eq!(mask.iter().filter(|&&v| v == 255).count(), masked);
    for (i, &mv) in mask.iter().enumerate() {
        if mv == 255 {
            for k in 0..3 {
                assert!((rgb[3 * i + k] as i32 - src.as_raw()[3 * i + k] as i32).abs() <= 1);
            }
        }
    }
    assert_eq!(fd_kept_count(10, 3), 4);
    assert_eq!(fd_kept_count(10, 0), 0);
}

#[test]
fn predictor_round_trip_and_interpolation() {
    let dir = tempfile::tempdir().unwrap();
    let frames = synth::reference_sequence(&synth::centred_coeffs(128), 8, 5);
    let norm = Normalization::fit(frames.iter(), 0.1).unwrap();
    let p = DynPredictor::seeded(6, norm, 7);
    let path = dir.path().join("p.ddp");
    save_predictor(&path, &p).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { fd_predictor_load(cpath(&path).as_ptr(), &mut h) }, FdStatus::Ok);
    assert_eq!(unsafe { fd_predictor_hidden(h) }, 6);

    let (d0, dt) = (frames[0].to_array(), frames[7].to_array());
    let mut out = vec![0.0; FD_N_COEFF * 5];
    unsafe {
        assert_eq!(fd_predict_sequence(h, d0.as_ptr(), 5, out.as_mut_ptr()), FdStatus::Ok);
    }
    let expect: Vec<f64> = p.predict_sequence(&frames[0], 5).unwrap().iter().flat_map(|c| c.to_array()).collect();
    assert_eq!(out, expect);
    unsafe {
        assert_eq!(fd_predict_target(h, d0.as_ptr(), dt.as_ptr(), 5, out.as_mut_ptr()), FdStatus::Ok);
    }
    let expect: Vec<f64> = p.predict_target_driven(&frames[0], &frames[7], 5).unwrap().iter().flat_map(|c| c.to_array()).collect();
    assert_eq!(out, expect);
    unsafe {
        assert_eq!(fd_interpolate(d0.as_ptr(), dt.as_ptr(), 5, out.as_mut_ptr()), FdStatus::Ok);
        fd_predictor_free(h);
    }
    assert_eq!(&out[4 * FD_N_COEFF..], &dt[..]);
    assert_eq!(unsafe { fd_interpolate(d0.as_ptr(), dt.as_ptr(), 0, out.as_mut_ptr()) }, FdStatus::InvalidInput);
}

#[test]
fn metrics_analytic_values() {
    let img: Vec<u8> = (0..3 * 16 * 16).map(|i| (i * 7 % 256) as u8).collect();
    let mut v = 0.0;
    unsafe {
        assert_eq!(fd_psnr(img.as_ptr(), img.as_ptr(), 16, 16, &mut v), FdStatus::Ok);
        assert_eq!(v, f64::INFINITY);
        assert_eq!(fd_ssim(img.as_ptr(), img.as_ptr(), 16, 16, &mut v), FdStatus::Ok);
        assert_eq!(v, 1.0);
        let (p, q) = ([0.0, 0.0, 10.0, 2.0], [3.0, 4.0, 13.0, 6.0]);
        assert_eq!(fd_lrms(p.as_ptr(), q.as_ptr(), 2, 0, &mut v), FdStatus::Ok);
        assert_eq!(v, 5.0);
        let (e1, e2) = ([1.0, 0.0], [0.0, 3.0]);
        assert_eq!(fd_identity_loss(e1.as_ptr(), e2.as_ptr(), 2, &mut v), FdStatus::Ok);
        assert_eq!(v, 2.0);
        assert_eq!(fd_ssim(img.as_ptr(), img.as_ptr(), 4, 4, &mut v), FdStatus::InvalidInput);
    }
}

#[test]
fn failures_set_status_and_message() {
    let dir = tempfile::tempdir().unwrap();
    let mut h = ptr::null_mut();
    let missing = cpath(&dir.path().join("missing.fmm"));
    assert_eq!(unsafe { fd_model_load(missing.as_ptr(), &mut h) }, FdStatus::InvalidInput);
    assert!(last_error().contains("missing.fmm"));
    assert!(h.is_null());

    let bad = dir.path().join("bad.fmm");
    std::fs::write(&bad, b"not a model at all").unwrap();
    assert_eq!(unsafe { fd_model_load(cpath(&bad).as_ptr(), &mut h) }, FdStatus::Format);
    assert!(!last_error().is_empty());

    assert_eq!(unsafe { fd_model_load(ptr::null(), &mut h) }, FdStatus::NullPointer);
    assert_eq!(unsafe { fd_model_evaluate(ptr::null(), ptr::null(), ptr::null_mut()) }, FdStatus::NullPointer);
    let mut v = 0.0;
    assert_eq!(unsafe { fd_psnr(ptr::null(), ptr::null(), 1, 1, &mut v) }, FdStatus::NullPointer);
    unsafe {
        fd_model_free(ptr::null_mut());
        fd_predictor_free(ptr::null_mut());
        assert_eq!(fd_model_vertex_count(ptr::null()), 0);
    }
}
