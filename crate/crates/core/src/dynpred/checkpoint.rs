//! `FDP1` predictor checkpoints.
//!
//! Little-endian: magic, `u32 h`, `u32 62`, `f64 lo[62]`, `f64 hi[62]`, then
//! `enc_w (h×62)`, `enc_b (h)`, `w_x (4h×h)`, `w_h (4h×h)`, `b (4h)`,
//! `readout (62×h)` as `f64`, matrices row-major. Gate blocks are stacked
//! input, forget, output, candidate.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::{DynPredictor, Normalization, Weights};
use crate::error::{Error, Result};
use crate::mmodel::N_COEFF;

pub const PREDICTOR_MAGIC: [u8; 4] = *b"FDP1";

fn put_matrix(buf: &mut Vec<u8>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for v in m.row(r).iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn write_predictor(p: &DynPredictor) -> Vec<u8> {
    let w = &p.weights;
    let mut buf = Vec::new();
    buf.extend_from_slice(&PREDICTOR_MAGIC);
    buf.extend_from_slice(&(w.hidden() as u32).to_le_bytes());
    buf.extend_from_slice(&(N_COEFF as u32).to_le_bytes());
    for v in p.norm.lo.iter().chain(&p.norm.hi) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    put_matrix(&mut buf, &w.enc_w);
    w.enc_b.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
    put_matrix(&mut buf, &w.w_x);
    put_matrix(&mut buf, &w.w_h);
    w.b.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
    put_matrix(&mut buf, &w.readout);
    buf
}

pub fn read_predictor(bytes: &[u8]) -> Result<DynPredictor> {
    if bytes.len() < 12 {
        return Err(Error::Format("checkpoint header truncated".into()));
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != PREDICTOR_MAGIC {
        return Err(Error::BadMagic {
            expected: PREDICTOR_MAGIC,
            found: magic,
        });
    }
    let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if d != N_COEFF {
        return Err(Error::Dimension(format!("checkpoint coefficient width {d}, expected {N_COEFF}")));
    }
    if h == 0 {
        return Err(Error::Dimension("checkpoint hidden size is zero".into()));
    }
    let n_f64 = 2 * N_COEFF + h * N_COEFF + h + 2 * 4 * h * h + 4 * h + N_COEFF * h;
    if bytes.len() != 12 + 8 * n_f64 {
        return Err(Error::Dimension(format!(
            "checkpoint holds {} bytes but h={h} needs {}",
            bytes.len(),
            12 + 8 * n_f64
        )));
    }
    let mut vals = bytes[12..].chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap()));
    let mut take = |n: usize| -> Vec<f64> { vals.by_ref().take(n).collect() };
    let lo: [f64; N_COEFF] = take(N_COEFF).try_into().unwrap();
    let hi: [f64; N_COEFF] = take(N_COEFF).try_into().unwrap();
    let norm = Normalization::new(lo, hi)?;
    let weights = Weights {
        enc_w: DMatrix::from_row_slice(h, N_COEFF, &take(h * N_COEFF)),
        enc_b: take(h).into(),
        w_x: DMatrix::from_row_slice(4 * h, h, &take(4 * h * h)),
        w_h: DMatrix::from_row_slice(4 * h, h, &take(4 * h * h)),
        b: take(4 * h).into(),
        readout: DMatrix::from_row_slice(N_COEFF, h, &take(N_COEFF * h)),
    };
    if !weights.is_finite() {
        return Err(Error::Format("checkpoint contains non-finite weights".into()));
    }
    Ok(DynPredictor::new(weights, norm))
}

pub fn save_predictor(path: &Path, p: &DynPredictor) -> Result<()> {
    fs::write(path, write_predictor(p))?;
    Ok(())
}

pub fn load_predictor(path: &Path) -> Result<DynPredictor> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    read_predictor(&fs::read(path)?)
}
