//! Unrolled forward pass with cached activations, and its exact reverse.

use nalgebra::DVector;

use super::{counter_weight, lstm_step_gates, DynPredictor, Gates, LstmState, TargetConditioning, Weights};

/// What to unroll: a start frame, a length, optional ground truth for teacher
/// forcing and an optional target for target-driven prediction. All vectors
/// are in normalised units.
#[derive(Debug, Clone)]
pub struct UnrollSpec {
    pub y0: DVector<f64>,
    pub t_len: usize,
    /// Ground truth `y_0..=y_T`; required when `teacher_steps > 1`.
    pub truth: Option<Vec<DVector<f64>>>,
    /// Inputs `u_1..=u_k` taken from ground truth; later inputs are the
    /// model's own previous outputs. `u_1` is always `y0`.
    pub teacher_steps: usize,
    pub target: Option<DVector<f64>>,
}

impl UnrollSpec {
    pub fn free_running(y0: DVector<f64>, t_len: usize) -> Self {
        Self {
            y0,
            t_len,
            truth: None,
            teacher_steps: 1,
            target: None,
        }
    }

    /// Teacher forcing on the first `teacher_steps` inputs of `truth`.
    pub fn teacher_forced(truth: Vec<DVector<f64>>, teacher_steps: usize, target: Option<DVector<f64>>) -> Self {
        let t_len = truth.len() - 1;
        Self {
            y0: truth[0].clone(),
            t_len,
            truth: Some(truth),
            teacher_steps: teacher_steps.max(1),
            target,
        }
    }
}

/// Cached activations of one unrolled sequence.
#[derive(Debug, Clone)]
pub struct Unrolled {
    /// Normalised readouts `ŷ_1..=ŷ_T`.
    pub outputs: Vec<DVector<f64>>,
    /// Counter weight applied to the encoded target at each step (all zero in
    /// free-running mode).
    pub counter: Vec<f64>,
    inputs: Vec<DVector<f64>>,
    fed_back: Vec<bool>,
    encoded: Vec<DVector<f64>>,
    h_prev: Vec<DVector<f64>>,
    c_in: Vec<DVector<f64>>,
    c_out: Vec<DVector<f64>>,
    h_out: Vec<DVector<f64>>,
    gates: Vec<Gates>,
    target_y: Option<DVector<f64>>,
}

pub fn unroll(p: &DynPredictor, spec: &UnrollSpec) -> Unrolled {
    let w = &p.weights;
    let hidden = w.hidden();
    let t_len = spec.t_len;
    let enc_target = spec.target.as_ref().map(|y| w.encode(y));

    let mut u = Unrolled {
        outputs: Vec::with_capacity(t_len),
        counter: Vec::with_capacity(t_len),
        inputs: Vec::with_capacity(t_len),
        fed_back: Vec::with_capacity(t_len),
        encoded: Vec::with_capacity(t_len),
        h_prev: Vec::with_capacity(t_len),
        c_in: Vec::with_capacity(t_len),
        c_out: Vec::with_capacity(t_len),
        h_out: Vec::with_capacity(t_len),
        gates: Vec::with_capacity(t_len),
        target_y: spec.target.clone(),
    };
    let mut state = LstmState::zeros(hidden);
    for t in 1..=t_len {
        let (input, fed_back) = if t == 1 {
            (spec.y0.clone(), false)
        } else if t <= spec.teacher_steps {
            let truth = spec.truth.as_ref().expect("teacher forcing needs ground truth");
            (truth[t - 1].clone(), false)
        } else {
            (u.outputs[t - 2].clone(), true)
        };
        let x = w.encode(&input);
        let kappa = if enc_target.is_some() { counter_weight(t, t_len) } else { 0.0 };
        let c_in = match (&enc_target, p.conditioning) {
            (None, _) => state.c.clone(),
            (Some(e), TargetConditioning::ReplaceCell) => e * kappa,
            (Some(e), TargetConditioning::AddToCell) => &state.c + e * kappa,
        };
        let h_prev = state.h.clone();
        let (next, gates) = lstm_step_gates(w, &x, &LstmState { h: h_prev.clone(), c: c_in.clone() });
        let y = (&w.readout * &next.h).map(f64::tanh);

        u.inputs.push(input);
        u.fed_back.push(fed_back);
        u.encoded.push(x);
        u.h_prev.push(h_prev);
        u.c_in.push(c_in);
        u.c_out.push(next.c.clone());
        u.h_out.push(next.h.clone());
        u.gates.push(gates);
        u.counter.push(kappa);
        u.outputs.push(y);
        state = next;
    }
    u
}

/// Gradients of a loss with respect to every weight, given `dl_dy[t]`, the
/// gradient with respect to the normalised readout `ŷ_{t+1}`. Gradients are
/// accumulated into `grads`.
pub fn backward(p: &DynPredictor, u: &Unrolled, dl_dy: &[DVector<f64>], grads: &mut Weights) {
    let w = &p.weights;
    let hidden = w.hidden();
    let t_len = u.outputs.len();
    assert_eq!(dl_dy.len(), t_len);

    let mut dy: Vec<DVector<f64>> = dl_dy.to_vec();
    let mut dh_next = DVector::<f64>::zeros(hidden);
    let mut dc_next = DVector::<f64>::zeros(hidden);
    let mut d_enc_target = DVector::<f64>::zeros(hidden);
    let mut da = DVector::<f64>::zeros(4 * hidden);

    for t in (0..t_len).rev() {
        let y = &u.outputs[t];
        let dz = dy[t].zip_map(y, |g, y| g * (1.0 - y * y));
        grads.readout.ger(1.0, &dz, &u.h_out[t], 1.0);
        let mut dh = w.readout.tr_mul(&dz);
        dh += &dh_next;

        let g = &u.gates[t];
        let c = &u.c_out[t];
        let tc = c.map(f64::tanh);
        let mut dc = dc_next.clone();
        for k in 0..hidden {
            dc[k] += dh[k] * g.o[k] * (1.0 - tc[k] * tc[k]);
        }
        for k in 0..hidden {
            let d_o = dh[k] * tc[k];
            let d_i = dc[k] * g.g[k];
            let d_g = dc[k] * g.i[k];
            let d_f = dc[k] * u.c_in[t][k];
            da[k] = d_i * g.i[k] * (1.0 - g.i[k]);
            da[hidden + k] = d_f * g.f[k] * (1.0 - g.f[k]);
            da[2 * hidden + k] = d_o * g.o[k] * (1.0 - g.o[k]);
            da[3 * hidden + k] = d_g * (1.0 - g.g[k] * g.g[k]);
        }
        let dc_in = dc.component_mul(&g.f);

        grads.w_x.ger(1.0, &da, &u.encoded[t], 1.0);
        grads.w_h.ger(1.0, &da, &u.h_prev[t], 1.0);
        grads.b += &da;
        let dx = w.w_x.tr_mul(&da);
        dh_next = w.w_h.tr_mul(&da);

        let kappa = u.counter[t];
        dc_next = match (&u.target_y, p.conditioning) {
            (None, _) => dc_in,
            (Some(_), TargetConditioning::ReplaceCell) => {
                d_enc_target.axpy(kappa, &dc_in, 1.0);
                DVector::zeros(hidden)
            }
            (Some(_), TargetConditioning::AddToCell) => {
                d_enc_target.axpy(kappa, &dc_in, 1.0);
                dc_in
            }
        };

        grads.enc_w.ger(1.0, &dx, &u.inputs[t], 1.0);
        grads.enc_b += &dx;
        if u.fed_back[t] {
            let du = w.enc_w.tr_mul(&dx);
            dy[t - 1] += du;
        }
    }
    if let Some(ty) = &u.target_y {
        grads.enc_w.ger(1.0, &d_enc_target, ty, 1.0);
        grads.enc_b += &d_enc_target;
    }
}
