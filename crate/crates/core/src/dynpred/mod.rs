//! Coefficient-sequence prediction with an encoder, a single LSTM cell and a
//! `tanh` readout, trained by backpropagation through time.
//!
//! Coefficients are affine-normalised per entry into `[-1, 1]` with bounds
//! stored alongside the weights, so the bounded readout can reach them.

mod bptt;
mod checkpoint;
pub mod data;
mod loss;
mod train;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::mmodel::{CoeffVector, N_COEFF};

pub use bptt::{backward, unroll, Unrolled, UnrollSpec};
pub use checkpoint::{load_predictor, read_predictor, save_predictor, write_predictor, PREDICTOR_MAGIC};
pub use data::TrajectoryDataset;
pub use loss::{loss_3dc, loss_3dv, loss_pred, VertexLoss, VertexSpace, DEFAULT_LAMBDA1};
pub use train::{
    clip_global_norm, evaluate_loss, train_predictor, train_predictor_with, window_gradient, Adam, Supervision,
    TrainConfig, TrainMode, TrainReport, WindowLoss,
};

/// Default hidden width.
pub const DEFAULT_HIDDEN: usize = 128;
/// Default prediction length.
pub const DEFAULT_SEQ_LEN: usize = 24;

/// Per-entry affine map between raw coefficients and `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub lo: [f64; N_COEFF],
    pub hi: [f64; N_COEFF],
}

impl Default for Normalization {
    /// The identity map: bounds `[-1, 1]` everywhere.
    fn default() -> Self {
        Self {
            lo: [-1.0; N_COEFF],
            hi: [1.0; N_COEFF],
        }
    }
}

impl Normalization {
    /// Bounds from the min/max of `frames`, widened by `margin` of the span on
    /// each side. Constant entries get a unit half-width.
    pub fn fit<'a>(frames: impl IntoIterator<Item = &'a CoeffVector>, margin: f64) -> Result<Self> {
        let mut lo = [f64::INFINITY; N_COEFF];
        let mut hi = [f64::NEG_INFINITY; N_COEFF];
        let mut any = false;
        for c in frames {
            any = true;
            for (k, v) in c.to_array().into_iter().enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
        if !any {
            return Err(Error::InvalidInput("cannot normalise an empty dataset".into()));
        }
        for k in 0..N_COEFF {
            let span = hi[k] - lo[k];
            if span > 0.0 {
                lo[k] -= margin * span;
                hi[k] += margin * span;
            } else {
                lo[k] -= 1.0;
                hi[k] += 1.0;
            }
        }
        Self::new(lo, hi)
    }

    pub fn new(lo: [f64; N_COEFF], hi: [f64; N_COEFF]) -> Result<Self> {
        if lo.iter().zip(&hi).any(|(l, h)| !(l.is_finite() && h.is_finite() && h > l)) {
            return Err(Error::InvalidInput("normalisation bounds must be finite with hi > lo".into()));
        }
        Ok(Self { lo, hi })
    }

    /// Half-width of entry `k`; the derivative of `decode`.
    pub fn half_span(&self, k: usize) -> f64 {
        0.5 * (self.hi[k] - self.lo[k])
    }

    pub fn encode(&self, c: &CoeffVector) -> DVector<f64> {
        let a = c.to_array();
        DVector::from_fn(N_COEFF, |k, _| (a[k] - self.lo[k]) / self.half_span(k) - 1.0)
    }

    pub fn decode(&self, y: &DVector<f64>) -> CoeffVector {
        let raw: Vec<f64> = (0..N_COEFF).map(|k| self.lo[k] + (y[k] + 1.0) * self.half_span(k)).collect();
        CoeffVector::from_slice(&raw).expect("62 entries")
    }

    /// Coefficients decoded from the readout value 0.
    pub fn midpoint(&self) -> CoeffVector {
        self.decode(&DVector::zeros(N_COEFF))
    }

    /// RMS difference of two coefficient vectors in normalised units.
    pub fn distance(&self, a: &CoeffVector, b: &CoeffVector) -> f64 {
        let (ea, eb) = (self.encode(a), self.encode(b));
        ((ea - eb).norm_squared() / N_COEFF as f64).sqrt()
    }
}

/// How the encoded target enters the cell in target-driven prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TargetConditioning {
    /// The incoming cell state is `(t/T)·Enc(d_T)`; the previous cell state
    /// is dropped.
    #[default]
    ReplaceCell,
    /// The incoming cell state is `c_{t-1} + (t/T)·Enc(d_T)`.
    AddToCell,
}

/// Weight of the encoded target at step `t` of `t_len`.
pub fn counter_weight(t: usize, t_len: usize) -> f64 {
    t as f64 / t_len as f64
}

/// The trainable tensors. Gate blocks are stacked in the order input, forget,
/// output, candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    /// `h × 62`
    pub enc_w: DMatrix<f64>,
    pub enc_b: DVector<f64>,
    /// `4h × h`, applied to the encoded input.
    pub w_x: DMatrix<f64>,
    /// `4h × h`, applied to the previous hidden state.
    pub w_h: DMatrix<f64>,
    pub b: DVector<f64>,
    /// `62 × h`
    pub readout: DMatrix<f64>,
}

pub const TENSOR_NAMES: [&str; 6] = ["enc_w", "enc_b", "w_x", "w_h", "b", "readout"];

impl Weights {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            enc_w: DMatrix::zeros(hidden, N_COEFF),
            enc_b: DVector::zeros(hidden),
            w_x: DMatrix::zeros(4 * hidden, hidden),
            w_h: DMatrix::zeros(4 * hidden, hidden),
            b: DVector::zeros(4 * hidden),
            readout: DMatrix::zeros(N_COEFF, hidden),
        }
    }

    pub fn uniform(hidden: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let mut w = Self::zeros(hidden);
        for t in w.tensors_mut() {
            t.iter_mut().for_each(|v| *v = rng.random_range(-scale..scale));
        }
        w
    }

    pub fn hidden(&self) -> usize {
        self.enc_b.len()
    }

    pub fn tensors(&self) -> [&[f64]; 6] {
        [
            self.enc_w.as_slice(),
            self.enc_b.as_slice(),
            self.w_x.as_slice(),
            self.w_h.as_slice(),
            self.b.as_slice(),
            self.readout.as_slice(),
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 6] {
        [
            self.enc_w.as_mut_slice(),
            self.enc_b.as_mut_slice(),
            self.w_x.as_mut_slice(),
            self.w_h.as_mut_slice(),
            self.b.as_mut_slice(),
            self.readout.as_mut_slice(),
        ]
    }

    pub fn norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn encode(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.enc_w * y + &self.enc_b
    }
}

/// Recurrent state.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: DVector<f64>,
    pub c: DVector<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: DVector::zeros(hidden),
            c: DVector::zeros(hidden),
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gate activations of one step, kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct Gates {
    pub i: DVector<f64>,
    pub f: DVector<f64>,
    pub o: DVector<f64>,
    pub g: DVector<f64>,
}

pub(crate) fn lstm_step_gates(w: &Weights, x_enc: &DVector<f64>, s: &LstmState) -> (LstmState, Gates) {
    let h = w.hidden();
    let mut a = &w.b + &w.w_x * x_enc;
    a.gemv(1.0, &w.w_h, &s.h, 1.0);
    let gates = Gates {
        i: a.rows(0, h).map(sigmoid),
        f: a.rows(h, h).map(sigmoid),
        o: a.rows(2 * h, h).map(sigmoid),
        g: a.rows(3 * h, h).map(f64::tanh),
    };
    let c = gates.f.component_mul(&s.c) + gates.i.component_mul(&gates.g);
    let hn = gates.o.component_mul(&c.map(f64::tanh));
    (LstmState { h: hn, c }, gates)
}

/// One gated update: `c' = f⊙c + i⊙g`, `h' = o⊙tanh(c')`.
pub fn lstm_step(p: &DynPredictor, x_enc: &DVector<f64>, s: &LstmState) -> Result<LstmState> {
    let h = p.hidden();
    if x_enc.len() != h || s.h.len() != h || s.c.len() != h {
        return Err(Error::Dimension(format!("lstm_step expects vectors of length {h}")));
    }
    Ok(lstm_step_gates(&p.weights, x_enc, s).0)
}

/// Encoder, LSTM and readout weights plus the coefficient normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct DynPredictor {
    pub weights: Weights,
    pub norm: Normalization,
    pub conditioning: TargetConditioning,
}

impl DynPredictor {
    /// All-zero weights with identity normalisation.
    pub fn zeros(hidden: usize) -> Self {
        Self::new(Weights::zeros(hidden), Normalization::default())
    }

    pub fn new(weights: Weights, norm: Normalization) -> Self {
        Self {
            weights,
            norm,
            conditioning: TargetConditioning::default(),
        }
    }

    /// Weights drawn from `uniform(-0.08, 0.08)`.
    pub fn seeded(hidden: usize, norm: Normalization, seed: u64) -> Self {
        let mut rng = crate::mmodel::synth::rng(seed);
        Self::new(Weights::uniform(hidden, 0.08, &mut rng), norm)
    }

    pub fn hidden(&self) -> usize {
        self.weights.hidden()
    }

    pub fn with_conditioning(mut self, c: TargetConditioning) -> Self {
        self.conditioning = c;
        self
    }

    /// Free-running prediction of `t_len` frames after `d0`.
    pub fn predict_sequence(&self, d0: &CoeffVector, t_len: usize) -> Result<Vec<CoeffVector>> {
        if t_len < 1 {
            return Err(Error::InvalidInput("prediction length must be >= 1".into()));
        }
        let spec = UnrollSpec::free_running(self.norm.encode(d0), t_len);
        Ok(self.decode_all(&unroll(self, &spec)))
    }

    /// Prediction of `t_len` frames from `d0` towards `d_target`.
    pub fn predict_target_driven(&self, d0: &CoeffVector, d_target: &CoeffVector, t_len: usize) -> Result<Vec<CoeffVector>> {
        Ok(self.decode_all(&self.trace_target_driven(d0, d_target, t_len)?))
    }

    /// Like [`predict_target_driven`](Self::predict_target_driven) but returns
    /// the full unrolled trace, including the per-step counter weights.
    pub fn trace_target_driven(&self, d0: &CoeffVector, d_target: &CoeffVector, t_len: usize) -> Result<Unrolled> {
        if t_len < 1 {
            return Err(Error::InvalidInput("prediction length must be >= 1".into()));
        }
        let mut spec = UnrollSpec::free_running(self.norm.encode(d0), t_len);
        spec.target = Some(self.norm.encode(d_target));
        Ok(unroll(self, &spec))
    }

    fn decode_all(&self, u: &Unrolled) -> Vec<CoeffVector> {
        u.outputs.iter().map(|y| self.norm.decode(y)).collect()
    }
}

/// Straight-line baseline: `d_t = d0 + (t/T)(d_T − d0)` for `t = 1..=T`.
pub fn interpolate_sequence(d0: &CoeffVector, d_target: &CoeffVector, t_len: usize) -> Result<Vec<CoeffVector>> {
    if t_len < 1 {
        return Err(Error::InvalidInput("interpolation length must be >= 1".into()));
    }
    let (a, b) = (d0.to_array(), d_target.to_array());
    Ok((1..=t_len)
        .map(|t| {
            if t == t_len {
                return *d_target;
            }
            let w = counter_weight(t, t_len);
            let v: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + w * (y - x)).collect();
            CoeffVector::from_slice(&v).unwrap()
        })
        .collect())
}
