use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{Matrix3, Matrix3x4, SVector, Vector3};
use serde::{Deserialize, Serialize};

use super::{N_EXPR, N_SHAPE};
use crate::error::{Error, Result};

/// Number of pose entries (3×4 block, row-major).
pub const N_POSE: usize = 12;
/// Flattened coefficient length: pose, shape, expression.
pub const N_COEFF: usize = N_POSE + N_SHAPE + N_EXPR;

/// A 62-entry morphable model coefficient vector.
///
/// The pose block holds the scaled rotation `f·R` in its left 3×3 block and the
/// translation in the last column. Flattened order is the pose row-major, then
/// `alpha_s`, then `alpha_exp`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoeffVector {
    pub pose: Matrix3x4<f64>,
    pub alpha_s: SVector<f64, N_SHAPE>,
    pub alpha_exp: SVector<f64, N_EXPR>,
}

impl Default for CoeffVector {
    fn default() -> Self {
        Self::identity()
    }
}

impl CoeffVector {
    /// Identity pose, zero shape and expression.
    pub fn identity() -> Self {
        Self {
            pose: Matrix3x4::identity(),
            alpha_s: SVector::zeros(),
            alpha_exp: SVector::zeros(),
        }
    }

    pub fn zeros() -> Self {
        Self {
            pose: Matrix3x4::zeros(),
            alpha_s: SVector::zeros(),
            alpha_exp: SVector::zeros(),
        }
    }

    /// Builds a pose block from scale, rotation and translation.
    pub fn with_pose(mut self, scale: f64, rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Self {
        self.pose.fixed_view_mut::<3, 3>(0, 0).copy_from(&(rotation * scale));
        self.pose.set_column(3, translation);
        self
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.pose.column(3).into()
    }

    pub fn to_array(&self) -> [f64; N_COEFF] {
        let mut out = [0.0; N_COEFF];
        for r in 0..3 {
            for c in 0..4 {
                out[r * 4 + c] = self.pose[(r, c)];
            }
        }
        out[N_POSE..N_POSE + N_SHAPE].copy_from_slice(self.alpha_s.as_slice());
        out[N_POSE + N_SHAPE..].copy_from_slice(self.alpha_exp.as_slice());
        out
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != N_COEFF {
            return Err(Error::Dimension(format!(
                "coefficient vector has {} entries, expected {N_COEFF}",
                v.len()
            )));
        }
        let pose = Matrix3x4::from_row_slice(&v[..N_POSE]);
        let alpha_s = SVector::from_column_slice(&v[N_POSE..N_POSE + N_SHAPE]);
        let alpha_exp = SVector::from_column_slice(&v[N_POSE + N_SHAPE..]);
        Ok(Self {
            pose,
            alpha_s,
            alpha_exp,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }

    /// Returns `self` with the flagged blocks taken from `donor`.
    pub fn recombine(&self, donor: &CoeffVector, parts: Blocks) -> CoeffVector {
        CoeffVector {
            pose: if parts.pose { donor.pose } else { self.pose },
            alpha_s: if parts.shape { donor.alpha_s } else { self.alpha_s },
            alpha_exp: if parts.expr { donor.alpha_exp } else { self.alpha_exp },
        }
    }
}

/// Which coefficient blocks to transfer in [`CoeffVector::recombine`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Blocks {
    pub pose: bool,
    pub shape: bool,
    pub expr: bool,
}

impl Blocks {
    pub const NONE: Blocks = Blocks {
        pose: false,
        shape: false,
        expr: false,
    };
    /// Expression retargeting: pose and shape stay with the source face.
    pub const EXPRESSION: Blocks = Blocks {
        pose: false,
        shape: false,
        expr: true,
    };
    /// Head talking: pose and expression follow the reference, shape stays.
    pub const TALKING: Blocks = Blocks {
        pose: true,
        shape: false,
        expr: true,
    };
}

pub fn recombine(base: &CoeffVector, donor: &CoeffVector, take_pose: bool, take_shape: bool, take_expr: bool) -> CoeffVector {
    base.recombine(
        donor,
        Blocks {
            pose: take_pose,
            shape: take_shape,
            expr: take_expr,
        },
    )
}

#[derive(Serialize, Deserialize)]
struct CoeffRecord {
    pose: Vec<f64>,
    alpha_s: Vec<f64>,
    alpha_exp: Vec<f64>,
}

impl From<&CoeffVector> for CoeffRecord {
    fn from(c: &CoeffVector) -> Self {
        let a = c.to_array();
        CoeffRecord {
            pose: a[..N_POSE].to_vec(),
            alpha_s: a[N_POSE..N_POSE + N_SHAPE].to_vec(),
            alpha_exp: a[N_POSE + N_SHAPE..].to_vec(),
        }
    }
}

impl TryFrom<CoeffRecord> for CoeffVector {
    type Error = Error;

    fn try_from(r: CoeffRecord) -> Result<Self> {
        if r.pose.len() != N_POSE || r.alpha_s.len() != N_SHAPE || r.alpha_exp.len() != N_EXPR {
            return Err(Error::Dimension(format!(
                "coefficient record has block sizes {}/{}/{}, expected {N_POSE}/{N_SHAPE}/{N_EXPR}",
                r.pose.len(),
                r.alpha_s.len(),
                r.alpha_exp.len()
            )));
        }
        let mut flat = r.pose;
        flat.extend(r.alpha_s);
        flat.extend(r.alpha_exp);
        let c = CoeffVector::from_slice(&flat)?;
        if !c.is_finite() {
            return Err(Error::InvalidInput("non-finite coefficient".into()));
        }
        Ok(c)
    }
}

/// Parses a JSON-lines coefficient sequence. Blank lines are skipped.
pub fn parse_coeff_sequence(reader: impl BufRead) -> Result<Vec<CoeffVector>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CoeffRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
        out.push(CoeffVector::try_from(rec)?);
    }
    Ok(out)
}

pub fn read_coeff_sequence(path: &Path) -> Result<Vec<CoeffVector>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    parse_coeff_sequence(BufReader::new(File::open(path)?))
}

pub fn write_coeff_sequence(path: &Path, seq: &[CoeffVector]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for c in seq {
        serde_json::to_writer(&mut w, &CoeffRecord::from(c))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
