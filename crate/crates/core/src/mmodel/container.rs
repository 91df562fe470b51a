//! `.fmm` model container.
//!
//! Little-endian layout: magic `FMM1`, `u32 N`, `u32 K`, `f32 mean[3N]`,
//! `f32 shape_basis[3N×40]` row-major, `f32 expr_basis[3N×10]` row-major,
//! `u32 triangles[3K]` (one triple per triangle), `u32 landmarks[68]`.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{MorphableModel, N_EXPR, N_LANDMARKS, N_SHAPE};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: [u8; 4] = *b"FMM1";

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> &'a [u8] {
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        s
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take(4).try_into().unwrap())
    }

    fn f32s(&mut self, n: usize) -> Vec<f64> {
        self.take(4 * n)
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect()
    }

    fn u32s(&mut self, n: usize) -> Vec<u32> {
        self.take(4 * n)
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
            .collect()
    }
}

fn expected_len(n: usize, k: usize) -> Option<usize> {
    let rows = n.checked_mul(3)?;
    let floats = rows.checked_mul(1 + N_SHAPE + N_EXPR)?;
    let ints = k.checked_mul(3)?.checked_add(N_LANDMARKS)?;
    floats.checked_add(ints)?.checked_mul(4)?.checked_add(12)
}

/// Decodes a model from an in-memory container.
pub fn read_model(bytes: &[u8]) -> Result<MorphableModel> {
    if bytes.len() < 4 {
        return Err(Error::Format("container shorter than its magic".into()));
    }
    let found: [u8; 4] = bytes[..4].try_into().unwrap();
    if found != MODEL_MAGIC {
        return Err(Error::BadMagic {
            expected: MODEL_MAGIC,
            found,
        });
    }
    if bytes.len() < 12 {
        return Err(Error::Dimension("container header truncated".into()));
    }
    let mut cur = Cursor { buf: bytes, pos: 4 };
    let n = cur.u32() as usize;
    let k = cur.u32() as usize;
    let want = expected_len(n, k).ok_or_else(|| Error::Dimension("header sizes overflow".into()))?;
    if bytes.len() != want {
        return Err(Error::Dimension(format!(
            "container holds {} bytes but N={n}, K={k} needs {want}",
            bytes.len()
        )));
    }
    let rows = 3 * n;
    let mean = DVector::from_vec(cur.f32s(rows));
    let shape = DMatrix::from_row_slice(rows, N_SHAPE, &cur.f32s(rows * N_SHAPE));
    let expr = DMatrix::from_row_slice(rows, N_EXPR, &cur.f32s(rows * N_EXPR));
    let triangles = cur.u32s(3 * k).chunks_exact(3).map(|t| [t[0], t[1], t[2]]).collect();
    let landmarks = cur.u32s(N_LANDMARKS);
    MorphableModel::new(mean, shape, expr, triangles, landmarks)
}

pub fn load_model(path: &Path) -> Result<MorphableModel> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    read_model(&fs::read(path)?)
}

/// Encodes a model. Values are narrowed to `f32`.
pub fn write_model(mut w: impl Write, m: &MorphableModel) -> Result<()> {
    let mut buf = Vec::with_capacity(expected_len(m.n_vertices(), m.n_triangles()).unwrap_or(0));
    buf.extend_from_slice(&MODEL_MAGIC);
    buf.extend_from_slice(&(m.n_vertices() as u32).to_le_bytes());
    buf.extend_from_slice(&(m.n_triangles() as u32).to_le_bytes());
    let mut put = |x: f64| buf.extend_from_slice(&(x as f32).to_le_bytes());
    m.mean_shape().iter().for_each(|&x| put(x));
    for basis in [m.shape_basis(), m.expr_basis()] {
        for r in 0..basis.nrows() {
            basis.row(r).iter().for_each(|&x| put(x));
        }
    }
    for &v in m.triangles().iter().flatten().chain(m.landmark_indices()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn save_model(path: &Path, m: &MorphableModel) -> Result<()> {
    let mut f = fs::File::create(path)?;
    write_model(&mut f, m)?;
    f.flush()?;
    Ok(())
}
