use nalgebra::{DMatrix, DVector, Matrix3x4, SVector};

use crate::error::{Error, Result};
use crate::mmodel::{CoeffVector, MorphableModel, N_COEFF, N_EXPR, N_POSE, N_SHAPE};

/// Default weight of the coefficient term.
pub const DEFAULT_LAMBDA1: f64 = 1e3;

const N_ALPHA: usize = N_SHAPE + N_EXPR;

/// Which vertices the vertex loss compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VertexSpace {
    /// Model-space shape and expression geometry; pose is ignored.
    #[default]
    Model,
    /// Camera-space points after applying each frame's pose.
    Camera,
}

fn check_lengths(pred: &[CoeffVector], truth: &[CoeffVector]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "sequence lengths differ: {} vs {}",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InvalidInput("empty sequence".into()));
    }
    Ok(())
}

/// Mean squared Euclidean distance between flattened coefficient vectors.
pub fn loss_3dc(pred: &[CoeffVector], truth: &[CoeffVector]) -> Result<f64> {
    check_lengths(pred, truth)?;
    let total: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| p.to_array().iter().zip(t.to_array()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum();
    Ok(total / pred.len() as f64)
}

fn vertices(model: &MorphableModel, c: &CoeffVector, space: VertexSpace) -> DVector<f64> {
    let shape = model.evaluate_shape(c);
    match space {
        VertexSpace::Model => DVector::from_column_slice(shape.vertices.as_slice()),
        VertexSpace::Camera => DVector::from_column_slice(shape.camera_points(c).as_slice()),
    }
}

/// Mean squared distance between the reconstructed vertex sets.
pub fn loss_3dv(model: &MorphableModel, pred: &[CoeffVector], truth: &[CoeffVector], space: VertexSpace) -> Result<f64> {
    check_lengths(pred, truth)?;
    let total: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (vertices(model, p, space) - vertices(model, t, space)).norm_squared())
        .sum();
    Ok(total / pred.len() as f64)
}

/// `loss_3dv + lambda1 · loss_3dc`.
pub fn loss_pred(
    model: &MorphableModel,
    pred: &[CoeffVector],
    truth: &[CoeffVector],
    lambda1: f64,
    space: VertexSpace,
) -> Result<f64> {
    Ok(loss_3dv(model, pred, truth, space)? + lambda1 * loss_3dc(pred, truth)?)
}

/// Per-frame vertex loss with its gradient, precomputed for training.
///
/// In model space the loss is the quadratic form `δαᵀ·G·δα` with the Gram
/// matrix `G = AᵀA` of the stacked bases, which makes it independent of the
/// vertex count.
#[derive(Debug, Clone)]
pub enum VertexLoss {
    Model { gram: DMatrix<f64> },
    Camera { mean: DVector<f64>, basis: DMatrix<f64> },
}

impl VertexLoss {
    pub fn new(model: &MorphableModel, space: VertexSpace) -> Self {
        let rows = model.mean_shape().len();
        let mut basis = DMatrix::zeros(rows, N_ALPHA);
        basis.columns_mut(0, N_SHAPE).copy_from(model.shape_basis());
        basis.columns_mut(N_SHAPE, N_EXPR).copy_from(model.expr_basis());
        match space {
            VertexSpace::Model => VertexLoss::Model { gram: basis.tr_mul(&basis) },
            VertexSpace::Camera => VertexLoss::Camera {
                mean: model.mean_shape().clone(),
                basis,
            },
        }
    }

    /// Loss for one frame and its gradient with respect to the 62 predicted
    /// coefficients.
    pub fn value_and_grad(&self, pred: &CoeffVector, truth: &CoeffVector) -> (f64, [f64; N_COEFF]) {
        let mut grad = [0.0; N_COEFF];
        let alpha = |c: &CoeffVector| {
            let mut a = SVector::<f64, N_ALPHA>::zeros();
            a.fixed_rows_mut::<N_SHAPE>(0).copy_from(&c.alpha_s);
            a.fixed_rows_mut::<N_EXPR>(N_SHAPE).copy_from(&c.alpha_exp);
            DVector::from_column_slice(a.as_slice())
        };
        match self {
            VertexLoss::Model { gram } => {
                let d = alpha(pred) - alpha(truth);
                let gd = gram * &d;
                grad[N_POSE..].copy_from_slice((gd * 2.0).as_slice());
                (d.dot(&(gram * &d)), grad)
            }
            VertexLoss::Camera { mean, basis } => {
                let sp = mean + basis * alpha(pred);
                let st = mean + basis * alpha(truth);
                let n = mean.len() / 3;
                let (pp, pt): (&Matrix3x4<f64>, &Matrix3x4<f64>) = (&pred.pose, &truth.pose);
                let mut value = 0.0;
                let mut d_pose = Matrix3x4::<f64>::zeros();
                let mut q = DVector::<f64>::zeros(3 * n);
                for i in 0..n {
                    let a = sp.fixed_rows::<3>(3 * i);
                    let b = st.fixed_rows::<3>(3 * i);
                    let r = pp.fixed_view::<3, 3>(0, 0) * a + pp.column(3) - pt.fixed_view::<3, 3>(0, 0) * b - pt.column(3);
                    value += r.norm_squared();
                    for row in 0..3 {
                        for col in 0..3 {
                            d_pose[(row, col)] += 2.0 * r[row] * a[col];
                        }
                        d_pose[(row, 3)] += 2.0 * r[row];
                    }
                    q.fixed_rows_mut::<3>(3 * i).copy_from(&(pp.fixed_view::<3, 3>(0, 0).transpose() * r * 2.0));
                }
                for row in 0..3 {
                    for col in 0..4 {
                        grad[row * 4 + col] = d_pose[(row, col)];
                    }
                }
                grad[N_POSE..].copy_from_slice(basis.tr_mul(&q).as_slice());
                (value, grad)
            }
        }
    }
}
