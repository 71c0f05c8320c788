//! Output-target computation and the proportional-integral controller.
//!
//! The controller carries a leaky integral of the control error plus a
//! proportional term. The leakage acts on the combined signal `u` rather
//! than on the integral state, so the damping constant is a direct
//! hyperparameter independent of the proportional gain.

use crate::error::{Error, Result};

/// Task loss whose output gradient drives the target.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// `L = ‖r − y‖²`
    SquaredError,
    /// `L = −Σ y_j log softmax(r)_j` — softmax absorbed into the loss, the
    /// network output stays linear.
    CrossEntropySoftmax,
}

impl LossKind {
    pub fn value(self, output: &[f64], label: &[f64]) -> f64 {
        assert_eq!(output.len(), label.len());
        match self {
            LossKind::SquaredError => output
                .iter()
                .zip(label)
                .map(|(r, y)| (r - y) * (r - y))
                .sum(),
            LossKind::CrossEntropySoftmax => {
                let p = softmax(output);
                -label
                    .iter()
                    .zip(&p)
                    .map(|(y, pi)| y * pi.max(1e-300).ln())
                    .sum::<f64>()
            }
        }
    }

    /// `∂L/∂r` evaluated at `output`.
    pub fn gradient(self, output: &[f64], label: &[f64]) -> Vec<f64> {
        assert_eq!(output.len(), label.len());
        match self {
            LossKind::SquaredError => output.iter().zip(label).map(|(r, y)| 2.0 * (r - y)).collect(),
            LossKind::CrossEntropySoftmax => {
                let p = softmax(output);
                p.iter().zip(label).map(|(pi, y)| pi - y).collect()
            }
        }
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|e| e / sum).collect()
}

/// Controller state: combined signal `u` and its integral part.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub u: Vec<f64>,
    pub u_int: Vec<f64>,
}

impl ControllerState {
    pub fn zeros(n: usize) -> Self {
        Self { u: vec![0.0; n], u_int: vec![0.0; n] }
    }
}

/// Proportional gain, damping constant, and integrator time constant.
#[derive(Debug, Clone, Copy)]
pub struct ControlGains {
    pub k_p: f64,
    pub alpha_tilde: f64,
    pub tau_u: f64,
}

/// Output target: the feedforward output nudged one loss-gradient step of
/// size `lambda` downhill. Returns `(target, delta_l)` with
/// `delta_l = target − output`.
pub fn compute_target(
    r_l_minus: &[f64],
    label: &[f64],
    lambda: f64,
    loss: LossKind,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if r_l_minus.len() != label.len() {
        return Err(Error::Shape {
            op: "compute_target",
            details: format!("output has {} entries, label {}", r_l_minus.len(), label.len()),
        });
    }
    if lambda < 0.0 {
        return Err(Error::Config(format!("negative target stepsize {lambda}")));
    }
    let grad = loss.gradient(r_l_minus, label);
    let delta_l: Vec<f64> = grad.iter().map(|g| -lambda * g).collect();
    let target: Vec<f64> = r_l_minus.iter().zip(&delta_l).map(|(r, d)| r + d).collect();
    Ok((target, delta_l))
}

/// One Euler step of the controller. The same error sample feeds both the
/// integral and proportional parts, so the proportional path reacts
/// without a one-step delay.
pub fn controller_step(state: &ControllerState, e: &[f64], gains: &ControlGains, dt: f64) -> ControllerState {
    assert!(dt > 0.0, "controller_step needs dt > 0");
    assert_eq!(state.u.len(), e.len());
    let k = dt / gains.tau_u;
    let u_int: Vec<f64> = state
        .u_int
        .iter()
        .zip(e)
        .zip(&state.u)
        .map(|((ui, ei), u_old)| ui + k * (ei - gains.alpha_tilde * u_old))
        .collect();
    let u: Vec<f64> = u_int.iter().zip(e).map(|(ui, ei)| ui + gains.k_p * ei).collect();
    ControllerState { u, u_int }
}
