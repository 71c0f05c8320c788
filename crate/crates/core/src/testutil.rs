//! Test support: random model generators and finite-difference oracles.
//!
//! The oracles here recompute Jacobians by central differences only, with
//! no shared code path with the analytic routines they are used to check.

use crate::network::{forward_pass, ActivationKind, Layer, NetworkParams};
use crate::numerics::Matrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};

pub fn glorot_normal(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix {
    let std = (2.0 / (rows + cols) as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("valid std");
    Matrix::from_fn(rows, cols, |_, _| normal.sample(rng))
}

/// Random network with Glorot-normal weights and a random input in
/// [-1, 1]^n0. `sizes` is `[n_0, n_1, ..., n_L]`; hidden layers are tanh
/// when `tanh_hidden`, the output layer is always linear. Feedback
/// matrices are zero-initialized.
pub fn random_network(
    rng: &mut impl Rng,
    sizes: &[usize],
    tanh_hidden: bool,
    with_bias: bool,
) -> (NetworkParams, Vec<f64>) {
    assert!(sizes.len() >= 2);
    let l = sizes.len() - 1;
    let n_l = sizes[l];
    let mut layers = Vec::with_capacity(l);
    let mut feedback = Vec::with_capacity(l);
    for i in 0..l {
        let weight = glorot_normal(rng, sizes[i + 1], sizes[i]);
        let bias = if with_bias {
            (0..sizes[i + 1]).map(|_| rng.random_range(-0.1..0.1)).collect()
        } else {
            vec![0.0; sizes[i + 1]]
        };
        let activation = if i + 1 == l {
            ActivationKind::Linear
        } else if tanh_hidden {
            ActivationKind::Tanh
        } else {
            ActivationKind::Linear
        };
        layers.push(Layer { weight, bias, activation });
        feedback.push(Matrix::zeros(sizes[i + 1], n_l));
    }
    let r0: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
    (NetworkParams { layers, feedback }, r0)
}

/// Output of the network when layer `li`'s pre-activation entry `k` is
/// shifted by `h` and everything downstream is recomputed.
fn output_with_state_shift(params: &NetworkParams, r0: &[f64], li: usize, k: usize, h: f64) -> Vec<f64> {
    let acts = forward_pass(params, r0).expect("consistent shapes");
    let mut v = acts.pre[li].clone();
    v[k] += h;
    let mut r = params.layers[li].activation.apply_vec(&v);
    for layer in &params.layers[li + 1..] {
        let mut vj = layer.weight.matvec(&r);
        for (x, b) in vj.iter_mut().zip(&layer.bias) {
            *x += b;
        }
        r = layer.activation.apply_vec(&vj);
    }
    r
}

/// Central-difference oracle for `∂r_L/∂v` (h = 1e-6).
pub fn finite_diff_network_jacobian(params: &NetworkParams, r0: &[f64]) -> Matrix {
    let h = 1e-6;
    let n_l = params.output_size();
    let mut j = Matrix::zeros(n_l, params.state_size());
    let mut col = 0;
    for li in 0..params.num_layers() {
        for k in 0..params.layers[li].weight.rows() {
            let plus = output_with_state_shift(params, r0, li, k, h);
            let minus = output_with_state_shift(params, r0, li, k, -h);
            for row in 0..n_l {
                j.set(row, col, (plus[row] - minus[row]) / (2.0 * h));
            }
            col += 1;
        }
    }
    j
}

/// Least-squares slope of `y` against `x`, e.g. for fitting exponential
/// decay rates from log-norm trajectories.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len());
    assert!(x.len() >= 2);
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}

/// Central-difference oracle for `∂r_L/∂vec(W)` in column-major layer
/// order (h = 1e-6).
pub fn finite_diff_weight_jacobian(params: &NetworkParams, r0: &[f64]) -> Matrix {
    let h = 1e-6;
    let n_l = params.output_size();
    let total: usize = params
        .layers
        .iter()
        .map(|l| l.weight.rows() * l.weight.cols())
        .sum();
    let mut j = Matrix::zeros(n_l, total);
    let mut col = 0;
    for li in 0..params.num_layers() {
        let (rows, cols) = (params.layers[li].weight.rows(), params.layers[li].weight.cols());
        for c in 0..cols {
            for r in 0..rows {
                let mut plus = params.clone();
                let w = plus.layers[li].weight.get(r, c);
                plus.layers[li].weight.set(r, c, w + h);
                let out_plus = forward_pass(&plus, r0).unwrap().output().to_vec();
                let mut minus = params.clone();
                minus.layers[li].weight.set(r, c, w - h);
                let out_minus = forward_pass(&minus, r0).unwrap().output().to_vec();
                for row in 0..n_l {
                    j.set(row, col, (out_plus[row] - out_minus[row]) / (2.0 * h));
                }
                col += 1;
            }
        }
    }
    j
}
