//! Backprop and direct-feedback-alignment trainers over the same network
//! model, used as controls.

use crate::controller::LossKind;
use crate::error::Result;
use crate::network::{forward_pass, Activations, NetworkParams};
use crate::numerics::Matrix;
use crate::plasticity::UpdateBuffer;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Fixed random direct-feedback matrices for the hidden layers, drawn once
/// at init. The output layer always uses the true error.
#[derive(Debug, Clone)]
pub struct DfaFeedback {
    pub b: Vec<Matrix>,
}

impl DfaFeedback {
    /// Zero-mean normal entries scaled by `1/√n_L`, which keeps the hidden
    /// update magnitudes comparable to backprop's at init.
    pub fn init(params: &NetworkParams, rng: &mut impl Rng) -> Self {
        let n_l = params.output_size();
        let normal = Normal::new(0.0, 1.0 / (n_l as f64).sqrt()).expect("valid std");
        let b = params
            .layers
            .iter()
            .take(params.num_layers() - 1)
            .map(|l| Matrix::from_fn(l.weight.rows(), n_l, |_, _| normal.sample(rng)))
            .collect();
        Self { b }
    }
}

/// Exact reverse-mode gradients, stored as descent increments
/// (`−∂L/∂θ`), so the same optimizer convention applies everywhere.
pub fn bp_gradients(params: &NetworkParams, r0: &[f64], label: &[f64], loss: LossKind) -> Result<UpdateBuffer> {
    let acts = forward_pass(params, r0)?;
    let grad = loss.gradient(acts.output(), label);
    let delta_l: Vec<f64> = grad.iter().map(|g| -g).collect();
    Ok(backprop_from_delta(params, &acts, &delta_l))
}

fn backprop_from_delta(params: &NetworkParams, acts: &Activations, delta_l: &[f64]) -> UpdateBuffer {
    let l = params.num_layers();
    let mut buffer = UpdateBuffer::zeros_like(params);
    // e_L = D_L δ, then e_i = D_i W_{i+1}ᵀ e_{i+1}.
    let mut e: Vec<f64> = acts.pre[l - 1]
        .iter()
        .zip(delta_l)
        .map(|(v, d)| params.layers[l - 1].activation.derivative(*v) * d)
        .collect();
    for i in (0..l).rev() {
        let r_prev = acts.post_before(i + 1);
        buffer.delta_w[i] = Matrix::outer(&e, r_prev);
        buffer.delta_b[i] = e.clone();
        if i > 0 {
            let back = params.layers[i].weight.matvec_transposed(&e);
            e = acts.pre[i - 1]
                .iter()
                .zip(&back)
                .map(|(v, x)| params.layers[i - 1].activation.derivative(*v) * x)
                .collect();
        }
    }
    buffer.step_count = 1;
    buffer
}

/// Direct feedback alignment: each hidden layer receives the output error
/// through its own fixed random matrix; the output layer uses the true
/// error. No information flows backward through the forward weights.
pub fn dfa_update(
    params: &NetworkParams,
    feedback: &DfaFeedback,
    r0: &[f64],
    label: &[f64],
    loss: LossKind,
) -> Result<UpdateBuffer> {
    let acts = forward_pass(params, r0)?;
    let grad = loss.gradient(acts.output(), label);
    let delta_l: Vec<f64> = grad.iter().map(|g| -g).collect();
    Ok(dfa_from_delta(params, feedback, &acts, &delta_l))
}

/// DFA increments for a fixed output error; exposed so tests can hold
/// `δ_L` constant while perturbing downstream weights.
pub fn dfa_from_delta(
    params: &NetworkParams,
    feedback: &DfaFeedback,
    acts: &Activations,
    delta_l: &[f64],
) -> UpdateBuffer {
    let l = params.num_layers();
    let mut buffer = UpdateBuffer::zeros_like(params);
    for i in 0..l {
        let projected: Vec<f64> = if i == l - 1 {
            delta_l.to_vec()
        } else {
            feedback.b[i].matvec(delta_l)
        };
        let e: Vec<f64> = acts.pre[i]
            .iter()
            .zip(&projected)
            .map(|(v, d)| params.layers[i].activation.derivative(*v) * d)
            .collect();
        buffer.delta_w[i] = Matrix::outer(&e, acts.post_before(i + 1));
        buffer.delta_b[i] = e;
    }
    buffer.step_count = 1;
    buffer
}
