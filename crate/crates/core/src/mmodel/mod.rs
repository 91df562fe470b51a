//! Linear 3D morphable face model: evaluation, scaled-orthographic projection,
//! landmark fitting and coefficient recombination.
//!
//! Vertex data is stored interleaved: entry `3*i + k` of a `3N` vector is
//! coordinate `k` (x, y, z) of vertex `i`. Triangle and landmark indices are
//! 0-based everywhere, including on disk; only OBJ export converts to 1-based.

mod coeffs;
mod container;
mod fit;
mod obj;
pub mod synth;

use nalgebra::{DMatrix, DVector, Matrix2xX, Matrix3xX, SVector};

pub use coeffs::{
    parse_coeff_sequence, read_coeff_sequence, recombine, write_coeff_sequence, Blocks, CoeffVector, N_COEFF,
    N_POSE,
};
pub use container::{load_model, read_model, save_model, write_model, MODEL_MAGIC};
pub use fit::{fit_landmarks, fit_objective, FitOptions, FitResult};
pub use obj::{write_obj, write_obj_file};

use crate::error::{Error, Result};

/// Shape basis width.
pub const N_SHAPE: usize = 40;
/// Expression basis width.
pub const N_EXPR: usize = 10;
/// Size of the 2D landmark set.
pub const N_LANDMARKS: usize = 68;

/// Immutable morphable model. Construct through [`MorphableModel::new`] so the
/// invariants hold.
#[derive(Debug, Clone, PartialEq)]
pub struct MorphableModel {
    mean_shape: DVector<f64>,
    shape_basis: DMatrix<f64>,
    expr_basis: DMatrix<f64>,
    triangles: Vec<[u32; 3]>,
    landmark_indices: Vec<u32>,
}

impl MorphableModel {
    /// Validates and assembles a model.
    ///
    /// Landmark indices must be distinct whenever the mesh has at least 68
    /// vertices; tiny test meshes may repeat them.
    pub fn new(
        mean_shape: DVector<f64>,
        shape_basis: DMatrix<f64>,
        expr_basis: DMatrix<f64>,
        triangles: Vec<[u32; 3]>,
        landmark_indices: Vec<u32>,
    ) -> Result<Self> {
        let rows = mean_shape.len();
        if rows == 0 || !rows.is_multiple_of(3) {
            return Err(Error::Dimension(format!("mean shape length {rows} is not a positive multiple of 3")));
        }
        let n = rows / 3;
        if shape_basis.ncols() != N_SHAPE || expr_basis.ncols() != N_EXPR {
            return Err(Error::Dimension(format!(
                "basis widths {}/{} (expected {N_SHAPE}/{N_EXPR})",
                shape_basis.ncols(),
                expr_basis.ncols()
            )));
        }
        if shape_basis.nrows() != rows || expr_basis.nrows() != rows {
            return Err(Error::Dimension(format!(
                "basis row counts {}/{} do not match 3N = {rows}",
                shape_basis.nrows(),
                expr_basis.nrows()
            )));
        }
        if let Some(bad) = triangles.iter().flatten().find(|&&v| v as usize >= n) {
            return Err(Error::Dimension(format!("triangle index {bad} out of range for {n} vertices")));
        }
        if landmark_indices.len() != N_LANDMARKS {
            return Err(Error::Dimension(format!(
                "{} landmark indices, expected {N_LANDMARKS}",
                landmark_indices.len()
            )));
        }
        if let Some(bad) = landmark_indices.iter().find(|&&v| v as usize >= n) {
            return Err(Error::Dimension(format!("landmark index {bad} out of range for {n} vertices")));
        }
        if n >= N_LANDMARKS {
            let mut sorted = landmark_indices.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Dimension("landmark indices are not distinct".into()));
            }
        }
        let finite = mean_shape.iter().chain(shape_basis.iter()).chain(expr_basis.iter()).all(|x| x.is_finite());
        if !finite {
            return Err(Error::InvalidInput("model contains non-finite values".into()));
        }
        Ok(Self {
            mean_shape,
            shape_basis,
            expr_basis,
            triangles,
            landmark_indices,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.mean_shape.len() / 3
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn mean_shape(&self) -> &DVector<f64> {
        &self.mean_shape
    }

    pub fn shape_basis(&self) -> &DMatrix<f64> {
        &self.shape_basis
    }

    pub fn expr_basis(&self) -> &DMatrix<f64> {
        &self.expr_basis
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn landmark_indices(&self) -> &[u32] {
        &self.landmark_indices
    }

    /// `mean + A_s·α_s + A_exp·α_exp` as a flat `3N` vector.
    pub fn evaluate_flat(&self, alpha_s: &SVector<f64, N_SHAPE>, alpha_exp: &SVector<f64, N_EXPR>) -> DVector<f64> {
        let mut v = self.mean_shape.clone();
        v.gemv(1.0, &self.shape_basis, alpha_s, 1.0);
        v.gemv(1.0, &self.expr_basis, alpha_exp, 1.0);
        v
    }

    pub fn evaluate_shape(&self, c: &CoeffVector) -> Shape3D {
        let flat = self.evaluate_flat(&c.alpha_s, &c.alpha_exp);
        Shape3D {
            vertices: Matrix3xX::from_column_slice(flat.as_slice()),
        }
    }

    /// Projected landmark positions, 2×68.
    pub fn landmarks_from_coeffs(&self, c: &CoeffVector) -> Matrix2xX<f64> {
        // Only the landmark rows of the bases are needed.
        let mut out = Matrix2xX::zeros(N_LANDMARKS);
        for (j, &vi) in self.landmark_indices.iter().enumerate() {
            let s = self.vertex(vi as usize, c);
            let p = c.pose.fixed_view::<2, 3>(0, 0) * s + c.pose.fixed_view::<2, 1>(0, 3);
            out.set_column(j, &p);
        }
        out
    }

    /// Model-space position of one vertex under the given shape/expression.
    pub(crate) fn vertex(&self, i: usize, c: &CoeffVector) -> nalgebra::Vector3<f64> {
        let mut s = nalgebra::Vector3::zeros();
        for k in 0..3 {
            let row = 3 * i + k;
            s[k] = self.mean_shape[row]
                + self.shape_basis.row(row).dot(&c.alpha_s.transpose())
                + self.expr_basis.row(row).dot(&c.alpha_exp.transpose());
        }
        s
    }
}

/// Model-space vertices, 3×N.
#[derive(Debug, Clone, PartialEq)]
pub struct Shape3D {
    pub vertices: Matrix3xX<f64>,
}

impl Shape3D {
    pub fn n_vertices(&self) -> usize {
        self.vertices.ncols()
    }

    /// Camera-space points `pose · [s; 1]`, 3×N.
    pub fn camera_points(&self, c: &CoeffVector) -> Matrix3xX<f64> {
        let rot = c.pose.fixed_view::<3, 3>(0, 0);
        let t = c.pose.column(3);
        let mut out = rot * &self.vertices;
        for mut col in out.column_iter_mut() {
            col += t;
        }
        out
    }
}

/// Image-plane positions with retained depth.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedVerts {
    pub xy: Matrix2xX<f64>,
    pub depth: DVector<f64>,
}

impl ProjectedVerts {
    pub fn n_vertices(&self) -> usize {
        self.xy.ncols()
    }
}

pub fn evaluate_shape(model: &MorphableModel, c: &CoeffVector) -> Shape3D {
    model.evaluate_shape(c)
}

/// Scaled orthographic projection. The first two camera rows give pixel
/// coordinates, the third is kept as depth.
pub fn project(shape: &Shape3D, c: &CoeffVector) -> ProjectedVerts {
    let cam = shape.camera_points(c);
    ProjectedVerts {
        xy: cam.fixed_rows::<2>(0).into_owned(),
        depth: cam.row(2).transpose(),
    }
}

pub fn landmarks_from_coeffs(model: &MorphableModel, c: &CoeffVector) -> Matrix2xX<f64> {
    model.landmarks_from_coeffs(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};

    fn tiny() -> MorphableModel {
        synth::tiny_model()
    }

    #[test]
    fn zero_coefficients_give_mean_shape() {
        let m = tiny();
        let s = m.evaluate_shape(&CoeffVector::identity());
        assert_eq!(s.vertices.as_slice(), m.mean_shape().as_slice());
    }

    #[test]
    fn unit_alpha_selects_basis_column() {
        let m = synth::synthetic_model(&synth::SynthModelSpec::grid(6, 6), 3);
        for i in [0, 17, 39] {
            let mut c = CoeffVector::identity();
            c.alpha_s[i] = 1.0;
            let s = m.evaluate_shape(&c);
            let expect = m.mean_shape() + m.shape_basis().column(i);
            assert_eq!(s.vertices.as_slice(), expect.as_slice());
        }
    }

    #[test]
    fn identity_projection_selects_rows() {
        let m = tiny();
        let s = m.evaluate_shape(&CoeffVector::identity());
        let p = project(&s, &CoeffVector::identity());
        assert_eq!(p.xy.row(0), s.vertices.row(0));
        assert_eq!(p.xy.row(1), s.vertices.row(1));
        assert_eq!(p.depth.transpose(), s.vertices.row(2));
    }

    #[test]
    fn scaled_pose_doubles_xy() {
        let m = tiny();
        let s = m.evaluate_shape(&CoeffVector::identity());
        let c = CoeffVector::identity().with_pose(2.0, &Matrix3::identity(), &Vector3::zeros());
        let p1 = project(&s, &CoeffVector::identity());
        let p2 = project(&s, &c);
        assert_eq!(p2.xy, p1.xy * 2.0);
    }

    #[test]
    fn quarter_turn_about_z() {
        let s = Shape3D {
            vertices: Matrix3xX::from_column_slice(&[1.0, 0.0, 5.0]),
        };
        let rot = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let c = CoeffVector::identity().with_pose(1.0, &rot, &Vector3::zeros());
        let p = project(&s, &c);
        assert_eq!((p.xy[(0, 0)], p.xy[(1, 0)], p.depth[0]), (0.0, 1.0, 5.0));
    }

    #[test]
    fn landmarks_match_full_projection_and_translate() {
        let m = synth::synthetic_model(&synth::SynthModelSpec::grid(12, 12), 5);
        let c = synth::random_coeffs(&mut synth::rng(9), 1.0);
        let lm = m.landmarks_from_coeffs(&c);
        let full = project(&m.evaluate_shape(&c), &c);
        for (j, &vi) in m.landmark_indices().iter().enumerate() {
            let d = (lm.column(j) - full.xy.column(vi as usize)).norm();
            assert!(d < 1e-10, "landmark {j} off by {d}");
        }
        let mut shifted = c;
        shifted.pose[(0, 3)] += 5.0;
        shifted.pose[(1, 3)] += 7.0;
        let lm2 = m.landmarks_from_coeffs(&shifted);
        for j in 0..N_LANDMARKS {
            assert!((lm2[(0, j)] - lm[(0, j)] - 5.0).abs() < 1e-9);
            assert!((lm2[(1, j)] - lm[(1, j)] - 7.0).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_bad_triangle_index() {
        let m = tiny();
        let mut tris = m.triangles().to_vec();
        tris[1][2] = m.n_vertices() as u32;
        let r = MorphableModel::new(
            m.mean_shape().clone(),
            m.shape_basis().clone(),
            m.expr_basis().clone(),
            tris,
            m.landmark_indices().to_vec(),
        );
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn rejects_duplicate_landmarks_on_full_mesh() {
        let m = synth::synthetic_model(&synth::SynthModelSpec::grid(10, 10), 1);
        let mut lm = m.landmark_indices().to_vec();
        lm[5] = lm[4];
        let r = MorphableModel::new(
            m.mean_shape().clone(),
            m.shape_basis().clone(),
            m.expr_basis().clone(),
            m.triangles().to_vec(),
            lm,
        );
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn rejects_wrong_basis_width() {
        let m = tiny();
        let r = MorphableModel::new(
            m.mean_shape().clone(),
            DMatrix::zeros(12, 39),
            m.expr_basis().clone(),
            m.triangles().to_vec(),
            m.landmark_indices().to_vec(),
        );
        assert!(matches!(r, Err(Error::Dimension(_))));
    }
}
