//! Backpropagation-through-time training with Adam and global-norm clipping.

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::bptt::{backward, unroll, UnrollSpec};
use super::data::TrajectoryDataset;
use super::loss::{VertexLoss, VertexSpace, DEFAULT_LAMBDA1};
use super::{interpolate_sequence, DynPredictor, Normalization, TargetConditioning, Weights, DEFAULT_HIDDEN, DEFAULT_SEQ_LEN};
use crate::error::{Error, Result};
use crate::mmodel::{synth, CoeffVector, MorphableModel, N_COEFF};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    FreeRunning,
    TargetDriven,
}

/// What the predictor is asked to reproduce between the window endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Supervision {
    #[default]
    GroundTruth,
    /// The straight line between the window's first and last frame.
    Interpolation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda1: f64,
    /// Prediction length `T`; windows hold `T + 1` frames.
    pub seq_len: usize,
    pub learn_rate: f64,
    pub epochs: usize,
    pub grad_clip: f64,
    pub seed: u64,
    /// Adds the randomly placed fixed-point penalty (target-driven mode).
    pub fixed_point: bool,
    pub fixed_point_weight: f64,
    pub hidden: usize,
    pub batch_size: usize,
    /// Leading inputs taken from ground truth. The first input is always
    /// `d_0`; later steps feed back the prediction.
    pub teacher_steps: usize,
    pub vertex_space: VertexSpace,
    pub conditioning: TargetConditioning,
    pub supervision: Supervision,
    /// Relative widening of the per-entry min/max normalisation bounds.
    pub norm_margin: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: DEFAULT_LAMBDA1,
            seq_len: DEFAULT_SEQ_LEN,
            learn_rate: 1e-4,
            epochs: 100,
            grad_clip: 5.0,
            seed: 0,
            fixed_point: true,
            fixed_point_weight: 1.0,
            hidden: DEFAULT_HIDDEN,
            batch_size: 1,
            teacher_steps: 1,
            vertex_space: VertexSpace::Model,
            conditioning: TargetConditioning::ReplaceCell,
            supervision: Supervision::GroundTruth,
            norm_margin: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seq_len < 1 {
            return Err(Error::InvalidInput("seq_len must be >= 1".into()));
        }
        if self.learn_rate.is_nan() || self.learn_rate <= 0.0 {
            return Err(Error::InvalidInput("learn_rate must be > 0".into()));
        }
        if self.lambda1.is_nan() || self.lambda1 < 0.0 {
            return Err(Error::InvalidInput("lambda1 must be >= 0".into()));
        }
        if self.teacher_steps > self.seq_len {
            return Err(Error::InvalidInput("teacher_steps must not exceed seq_len".into()));
        }
        if self.hidden < 1 || self.batch_size < 1 {
            return Err(Error::InvalidInput("hidden and batch_size must be >= 1".into()));
        }
        Ok(())
    }

}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training `loss_pred` per epoch, before each update.
    pub history: Vec<f64>,
    pub steps: usize,
    /// `loss_pred` over every sequence's first window, before training.
    pub initial_loss: f64,
    pub final_loss: f64,
}

/// Adam with the usual `β1 = 0.9`, `β2 = 0.999`, `ε = 1e-8`.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Weights,
    v: Weights,
    t: i32,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(hidden: usize) -> Self {
        Self {
            m: Weights::zeros(hidden),
            v: Weights::zeros(hidden),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut Weights, grads: &Weights, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
        {
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                p[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
            }
        }
    }
}

/// Scales `grads` so its global L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut Weights, max_norm: f64) -> f64 {
    let norm = grads.norm();
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for t in grads.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// Value of one training window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowLoss {
    /// `loss_pred` over the window.
    pub loss_pred: f64,
    /// `loss_pred` plus the fixed-point term; this is what gradients follow.
    pub objective: f64,
}

/// Loss of one window `d_0..=d_T` and its gradient, accumulated into
/// `grads`. `fixed_step` is the step `t*` that gets the extra fixed-point
/// weight.
pub fn window_gradient(
    p: &DynPredictor,
    vloss: &VertexLoss,
    cfg: &TrainConfig,
    mode: TrainMode,
    frames: &[CoeffVector],
    fixed_step: Option<usize>,
    grads: &mut Weights,
) -> WindowLoss {
    let t_len = frames.len() - 1;
    let truth: Vec<DVector<f64>> = frames.iter().map(|c| p.norm.encode(c)).collect();
    let target = (mode == TrainMode::TargetDriven).then(|| truth[t_len].clone());
    let spec = UnrollSpec::teacher_forced(truth, cfg.teacher_steps, target);
    let u = unroll(p, &spec);

    let mut out = WindowLoss {
        loss_pred: 0.0,
        objective: 0.0,
    };
    let mut dl_dy = Vec::with_capacity(t_len);
    for t in 1..=t_len {
        let pred = p.norm.decode(&u.outputs[t - 1]);
        let gt = &frames[t];
        let (v, gv) = vloss.value_and_grad(&pred, gt);
        let (pa, ga) = (pred.to_array(), gt.to_array());
        let c: f64 = pa.iter().zip(&ga).map(|(a, b)| (a - b) * (a - b)).sum();
        let step_loss = v + cfg.lambda1 * c;
        let mut weight = 1.0 / t_len as f64;
        out.loss_pred += weight * step_loss;
        if fixed_step == Some(t) {
            weight += cfg.fixed_point_weight / t_len as f64;
        }
        out.objective += weight * step_loss;
        let dy = DVector::from_fn(N_COEFF, |k, _| weight * (gv[k] + 2.0 * cfg.lambda1 * (pa[k] - ga[k])) * p.norm.half_span(k));
        dl_dy.push(dy);
    }
    backward(p, &u, &dl_dy, grads);
    out
}

fn supervised_window(frames: &[CoeffVector], sup: Supervision) -> std::borrow::Cow<'_, [CoeffVector]> {
    match sup {
        Supervision::GroundTruth => std::borrow::Cow::Borrowed(frames),
        Supervision::Interpolation => {
            let t_len = frames.len() - 1;
            let mut v = vec![frames[0]];
            v.extend(interpolate_sequence(&frames[0], &frames[t_len], t_len).unwrap());
            std::borrow::Cow::Owned(v)
        }
    }
}

/// Mean `loss_pred` over the first window of every sequence, with the same
/// teacher forcing and supervision as training.
pub fn evaluate_loss(p: &DynPredictor, model: &MorphableModel, data: &TrajectoryDataset, cfg: &TrainConfig, mode: TrainMode) -> Result<f64> {
    data.check_min_len(cfg.seq_len + 1)?;
    let vloss = VertexLoss::new(model, cfg.vertex_space);
    let mut scratch = Weights::zeros(p.hidden());
    let total: f64 = data
        .sequences
        .iter()
        .map(|s| {
            let frames = supervised_window(&s[..=cfg.seq_len], cfg.supervision);
            window_gradient(p, &vloss, cfg, mode, &frames, None, &mut scratch).loss_pred
        })
        .sum();
    Ok(total / data.len() as f64)
}

pub fn train_predictor(model: &MorphableModel, data: &TrajectoryDataset, cfg: &TrainConfig, mode: TrainMode) -> Result<(DynPredictor, TrainReport)> {
    train_predictor_with(model, data, cfg, mode, None, |_, _| {})
}

/// Full training entry point. `init` overrides the seeded initial predictor;
/// `on_step` is called after every update with the step count.
pub fn train_predictor_with(
    model: &MorphableModel,
    data: &TrajectoryDataset,
    cfg: &TrainConfig,
    mode: TrainMode,
    init: Option<DynPredictor>,
    mut on_step: impl FnMut(usize, &DynPredictor),
) -> Result<(DynPredictor, TrainReport)> {
    cfg.validate()?;
    data.check_min_len(cfg.seq_len + 1)?;
    let mut rng: ChaCha8Rng = synth::rng(cfg.seed);
    let mut p = match init {
        Some(p) => p,
        None => {
            let norm = Normalization::fit(data.frames(), cfg.norm_margin)?;
            let mut rng_init = synth::rng(cfg.seed ^ 0x5eed_1a17);
            DynPredictor::new(Weights::uniform(cfg.hidden, 0.08, &mut rng_init), norm)
        }
    };
    p.conditioning = cfg.conditioning;
    let initial_loss = evaluate_loss(&p, model, data, cfg, mode)?;
    let vloss = VertexLoss::new(model, cfg.vertex_space);
    let mut adam = Adam::new(p.hidden());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut steps = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Weights::zeros(p.hidden());
            let mut batch_loss = 0.0;
            for &si in batch {
                let seq = &data.sequences[si];
                let start = rng.random_range(0..=seq.len() - cfg.seq_len - 1);
                let fixed_step = (mode == TrainMode::TargetDriven && cfg.fixed_point).then(|| rng.random_range(1..=cfg.seq_len));
                let frames = supervised_window(&seq[start..=start + cfg.seq_len], cfg.supervision);
                batch_loss += window_gradient(&p, &vloss, cfg, mode, &frames, fixed_step, &mut grads).loss_pred;
            }
            let scale = 1.0 / batch.len() as f64;
            for t in grads.tensors_mut() {
                t.iter_mut().for_each(|v| *v *= scale);
            }
            batch_loss *= scale;
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    param_norm: p.weights.norm(),
                });
            }
            clip_global_norm(&mut grads, cfg.grad_clip);
            adam.step(&mut p.weights, &grads, cfg.learn_rate);
            steps += 1;
            epoch_loss += batch_loss * batch.len() as f64;
            on_step(steps, &p);
        }
        history.push(epoch_loss / data.len() as f64);
    }
    let final_loss = evaluate_loss(&p, model, data, cfg, mode)?;
    Ok((
        p,
        TrainReport {
            history,
            steps,
            initial_loss,
            final_loss,
        },
    ))
}
