//! Local update increments for forward and feedback weights, update
//! buffering, optimizers, and gradient clipping.
//!
//! Sign convention: buffers hold increments that are ADDED to the
//! parameters after multiplication by the learning rate. The baselines use
//! the same convention (their buffers hold negative loss gradients).

use crate::error::{Error, Result};
use crate::network::{ActivationKind, NetworkParams};
use crate::numerics::Matrix;

/// Accumulated parameter increments over a simulation window.
#[derive(Debug, Clone)]
pub struct UpdateBuffer {
    pub delta_w: Vec<Matrix>,
    pub delta_b: Vec<Vec<f64>>,
    pub delta_q: Vec<Matrix>,
    pub step_count: usize,
}

impl UpdateBuffer {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        let delta_w = params
            .layers
            .iter()
            .map(|l| Matrix::zeros(l.weight.rows(), l.weight.cols()))
            .collect();
        let delta_b = params.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect();
        let delta_q = params
            .feedback
            .iter()
            .map(|q| Matrix::zeros(q.rows(), q.cols()))
            .collect();
        Self { delta_w, delta_b, delta_q, step_count: 0 }
    }

    pub fn add_forward(&mut self, layer: usize, dw: &Matrix, db: &[f64]) {
        self.delta_w[layer] = self.delta_w[layer].add(dw);
        for (acc, d) in self.delta_b[layer].iter_mut().zip(db) {
            *acc += d;
        }
    }

    pub fn add_feedback(&mut self, layer: usize, dq: &Matrix) {
        self.delta_q[layer] = self.delta_q[layer].add(dq);
    }

    /// Divides every entry by `step_count` (no-op when zero steps).
    pub fn averaged(mut self) -> Self {
        if self.step_count > 1 {
            let inv = 1.0 / self.step_count as f64;
            for m in &mut self.delta_w {
                *m = m.scale(inv);
            }
            for b in &mut self.delta_b {
                for x in b.iter_mut() {
                    *x *= inv;
                }
            }
            for m in &mut self.delta_q {
                *m = m.scale(inv);
            }
        }
        self.step_count = 1;
        self
    }

    /// Element-wise sum of buffers (e.g. across a minibatch).
    pub fn merge(&mut self, other: &UpdateBuffer) {
        for (a, b) in self.delta_w.iter_mut().zip(&other.delta_w) {
            *a = a.add(b);
        }
        for (a, b) in self.delta_b.iter_mut().zip(&other.delta_b) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.delta_q.iter_mut().zip(&other.delta_q) {
            *a = a.add(b);
        }
        self.step_count += other.step_count;
    }

    pub fn scale(&mut self, s: f64) {
        for m in &mut self.delta_w {
            *m = m.scale(s);
        }
        for b in &mut self.delta_b {
            for x in b.iter_mut() {
                *x *= s;
            }
        }
        for m in &mut self.delta_q {
            *m = m.scale(s);
        }
    }

    /// Scales layer `i`'s forward increments by `eta / ‖r_{i-1}‖²`, the
    /// layer-specific rate that turns steady-state increments into
    /// weighted minimum-norm updates. `prev_norms` are the feedforward
    /// (uncontrolled) activation norms `‖r_{i-1}⁻‖`.
    pub fn apply_layer_rates(&mut self, eta: f64, prev_norms: &[f64]) {
        assert_eq!(prev_norms.len(), self.delta_w.len());
        for (i, n) in prev_norms.iter().enumerate() {
            let f = eta / (n * n);
            self.delta_w[i] = self.delta_w[i].scale(f);
            for x in self.delta_b[i].iter_mut() {
                *x *= f;
            }
        }
    }

    /// Flattens the forward increments: per layer, `vec(ΔW_i)`
    /// column-major, then `Δb_i` when `include_bias`.
    pub fn flatten_forward(&self, include_bias: bool) -> Vec<f64> {
        let mut out = Vec::new();
        for (dw, db) in self.delta_w.iter().zip(&self.delta_b) {
            for c in 0..dw.cols() {
                for r in 0..dw.rows() {
                    out.push(dw.get(r, c));
                }
            }
            if include_bias {
                out.extend_from_slice(db);
            }
        }
        out
    }

    pub fn flatten_feedback(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for dq in &self.delta_q {
            for c in 0..dq.cols() {
                for r in 0..dq.rows() {
                    out.push(dq.get(r, c));
                }
            }
        }
        out
    }

    pub fn global_forward_norm(&self) -> f64 {
        let mut sq = 0.0;
        for m in &self.delta_w {
            sq += m.data().iter().map(|x| x * x).sum::<f64>();
        }
        for b in &self.delta_b {
            sq += b.iter().map(|x| x * x).sum::<f64>();
        }
        sq.sqrt()
    }

    pub fn global_feedback_norm(&self) -> f64 {
        self.delta_q
            .iter()
            .map(|m| m.data().iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

/// Per-step forward increment: the post-nonlinearity gap between the
/// controlled and the feedforward compartment, outer-multiplied with the
/// presynaptic rate.
pub fn forward_increment(
    v_i: &[f64],
    v_ff_i: &[f64],
    r_prev: &[f64],
    activation: ActivationKind,
) -> (Matrix, Vec<f64>) {
    assert_eq!(v_i.len(), v_ff_i.len());
    let gap: Vec<f64> = v_i
        .iter()
        .zip(v_ff_i)
        .map(|(v, vf)| activation.apply(*v) - activation.apply(*vf))
        .collect();
    (Matrix::outer(&gap, r_prev), gap)
}

/// Anti-Hebbian feedback increment with weight decay:
/// `−v_fb uᵀ − β Q`.
pub fn feedback_increment(v_fb_i: &[f64], u: &[f64], beta: f64, q_i: &Matrix) -> Matrix {
    Matrix::outer(v_fb_i, u).scale(-1.0).sub(&q_i.scale(beta))
}

/// Steady-state weight update in both forms: the plain voltage-gap form
/// used by the optimization theory, and the nonlinearity-wrapped form the
/// trainer applies (saturated units stop updating).
#[derive(Debug, Clone)]
pub struct SteadyStateUpdate {
    pub linear: Matrix,
    pub phi: Matrix,
}

pub fn steady_state_update(
    v_ss: &[f64],
    v_ff_ss: &[f64],
    r_prev_ss: &[f64],
    activation: ActivationKind,
    eta: f64,
) -> SteadyStateUpdate {
    let raw_gap: Vec<f64> = v_ss.iter().zip(v_ff_ss).map(|(v, vf)| v - vf).collect();
    let phi_gap: Vec<f64> = v_ss
        .iter()
        .zip(v_ff_ss)
        .map(|(v, vf)| activation.apply(*v) - activation.apply(*vf))
        .collect();
    SteadyStateUpdate {
        linear: Matrix::outer(&raw_gap, r_prev_ss).scale(eta),
        phi: Matrix::outer(&phi_gap, r_prev_ss).scale(eta),
    }
}

/// Which parameter group an optimizer instance drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamGroup {
    Forward,
    Feedback,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    pub fn adam(epsilon: f64) -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, epsilon }
    }
}

/// Optimizer with optional global-norm clipping. Holds first/second moment
/// accumulators when running Adam.
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub group: ParamGroup,
    pub learning_rate: f64,
    pub clip_threshold: Option<f64>,
    pub step: u64,
    pub moments: Option<AdamMoments>,
}

#[derive(Debug, Clone)]
pub struct AdamMoments {
    pub m_w: Vec<Matrix>,
    pub v_w: Vec<Matrix>,
    pub m_b: Vec<Vec<f64>>,
    pub v_b: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, group: ParamGroup, learning_rate: f64, clip_threshold: Option<f64>) -> Self {
        Self { kind, group, learning_rate, clip_threshold, step: 0, moments: None }
    }

    fn ensure_moments(&mut self, params: &NetworkParams) {
        if self.moments.is_some() || matches!(self.kind, OptimizerKind::Sgd) {
            return;
        }
        let (m_w, v_w, m_b, v_b) = match self.group {
            ParamGroup::Forward => {
                let zw: Vec<Matrix> = params
                    .layers
                    .iter()
                    .map(|l| Matrix::zeros(l.weight.rows(), l.weight.cols()))
                    .collect();
                let zb: Vec<Vec<f64>> = params.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect();
                (zw.clone(), zw, zb.clone(), zb)
            }
            ParamGroup::Feedback => {
                let zq: Vec<Matrix> = params
                    .feedback
                    .iter()
                    .map(|q| Matrix::zeros(q.rows(), q.cols()))
                    .collect();
                (zq.clone(), zq, Vec::new(), Vec::new())
            }
        };
        self.moments = Some(AdamMoments { m_w, v_w, m_b, v_b });
    }
}

/// Applies an averaged buffer to the optimizer's parameter group,
/// clipping the global increment norm first when a threshold is set.
pub fn apply_update(params: &mut NetworkParams, buffer: &UpdateBuffer, opt: &mut Optimizer) -> Result<()> {
    if buffer.delta_w.len() != params.layers.len() || buffer.delta_q.len() != params.feedback.len() {
        return Err(Error::Shape {
            op: "apply_update",
            details: format!(
                "buffer covers {} layers / {} feedback, params have {} / {}",
                buffer.delta_w.len(),
                buffer.delta_q.len(),
                params.layers.len(),
                params.feedback.len()
            ),
        });
    }
    for (i, layer) in params.layers.iter().enumerate() {
        let dw = &buffer.delta_w[i];
        if dw.rows() != layer.weight.rows() || dw.cols() != layer.weight.cols() {
            return Err(Error::Shape {
                op: "apply_update",
                details: format!("layer {} increment shape mismatch", i + 1),
            });
        }
    }

    let mut buf = buffer.clone();
    if let Some(clip) = opt.clip_threshold {
        let norm = match opt.group {
            ParamGroup::Forward => buf.global_forward_norm(),
            ParamGroup::Feedback => buf.global_feedback_norm(),
        };
        if norm > clip && norm > 0.0 {
            buf.scale(clip / norm);
        }
    }

    opt.ensure_moments(params);
    opt.step += 1;
    match (opt.kind, opt.group) {
        (OptimizerKind::Sgd, ParamGroup::Forward) => {
            for (i, layer) in params.layers.iter_mut().enumerate() {
                layer.weight = layer.weight.add(&buf.delta_w[i].scale(opt.learning_rate));
                for (b, d) in layer.bias.iter_mut().zip(&buf.delta_b[i]) {
                    *b += opt.learning_rate * d;
                }
            }
        }
        (OptimizerKind::Sgd, ParamGroup::Feedback) => {
            for (i, q) in params.feedback.iter_mut().enumerate() {
                *q = q.add(&buf.delta_q[i].scale(opt.learning_rate));
            }
        }
        (OptimizerKind::Adam { beta1, beta2, epsilon }, group) => {
            let t = opt.step as i32;
            let bc1 = 1.0 - beta1.powi(t);
            let bc2 = 1.0 - beta2.powi(t);
            let moments = opt.moments.as_mut().expect("moments allocated");
            let adam_step = |param: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *param += opt.learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            };
            match group {
                ParamGroup::Forward => {
                    for (i, layer) in params.layers.iter_mut().enumerate() {
                        let rows = layer.weight.rows();
                        let cols = layer.weight.cols();
                        for r in 0..rows {
                            for c in 0..cols {
                                let mut p = layer.weight.get(r, c);
                                let mut m = moments.m_w[i].get(r, c);
                                let mut v = moments.v_w[i].get(r, c);
                                adam_step(&mut p, buf.delta_w[i].get(r, c), &mut m, &mut v);
                                layer.weight.set(r, c, p);
                                moments.m_w[i].set(r, c, m);
                                moments.v_w[i].set(r, c, v);
                            }
                        }
                        for k in 0..layer.bias.len() {
                            let mut p = layer.bias[k];
                            adam_step(&mut p, buf.delta_b[i][k], &mut moments.m_b[i][k], &mut moments.v_b[i][k]);
                            layer.bias[k] = p;
                        }
                    }
                }
                ParamGroup::Feedback => {
                    for (i, q) in params.feedback.iter_mut().enumerate() {
                        let rows = q.rows();
                        let cols = q.cols();
                        for r in 0..rows {
                            for c in 0..cols {
                                let mut p = q.get(r, c);
                                let mut m = moments.m_w[i].get(r, c);
                                let mut v = moments.v_w[i].get(r, c);
                                adam_step(&mut p, buf.delta_q[i].get(r, c), &mut m, &mut v);
                                q.set(r, c, p);
                                moments.m_w[i].set(r, c, m);
                                moments.v_w[i].set(r, c, v);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(())
}
