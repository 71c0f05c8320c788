//! The static feedforward model: parameters, activations, the feedforward
//! equilibrium pass, and the Jacobian/structural matrices consumed by the
//! steady-state solver and the diagnostics.

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Pointwise nonlinearity of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Tanh,
    Linear,
}

impl ActivationKind {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            ActivationKind::Tanh => x.tanh(),
            ActivationKind::Linear => x,
        }
    }

    /// Analytic derivative at pre-activation `x`.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            ActivationKind::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            ActivationKind::Linear => 1.0,
        }
    }

    pub fn apply_vec(self, v: &[f64]) -> Vec<f64> {
        v.iter().map(|&x| self.apply(x)).collect()
    }
}

/// One fully connected layer.
#[derive(Debug, Clone)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: ActivationKind,
}

/// Trainable state: forward weights/biases per layer plus the direct
/// feedback matrices (one per layer, each mapping the control signal of
/// width `n_L` into that layer).
#[derive(Debug, Clone)]
pub struct NetworkParams {
    pub layers: Vec<Layer>,
    pub feedback: Vec<Matrix>,
}

impl NetworkParams {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].weight.cols()
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().expect("at least one layer").weight.rows()
    }

    /// Widths `n_1, ..., n_L`.
    pub fn layer_widths(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.weight.rows()).collect()
    }

    /// Total state dimension `Σ n_i`.
    pub fn state_size(&self) -> usize {
        self.layer_widths().iter().sum()
    }

    /// Checks the dimension chain, the feedback shapes, and finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        if self.feedback.len() != self.layers.len() {
            return Err(Error::Config(format!(
                "{} layers but {} feedback matrices",
                self.layers.len(),
                self.feedback.len()
            )));
        }
        let n_l = self.output_size();
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.weight.rows() {
                return Err(Error::Config(format!(
                    "layer {}: weight is {}x{} but bias has length {}",
                    i + 1,
                    layer.weight.rows(),
                    layer.weight.cols(),
                    layer.bias.len()
                )));
            }
            if i > 0 && layer.weight.cols() != self.layers[i - 1].weight.rows() {
                return Err(Error::Config(format!(
                    "layer {} expects {} inputs but layer {} outputs {}",
                    i + 1,
                    layer.weight.cols(),
                    i,
                    self.layers[i - 1].weight.rows()
                )));
            }
            let q = &self.feedback[i];
            if q.rows() != layer.weight.rows() || q.cols() != n_l {
                return Err(Error::Config(format!(
                    "feedback matrix {} is {}x{}, expected {}x{}",
                    i + 1,
                    q.rows(),
                    q.cols(),
                    layer.weight.rows(),
                    n_l
                )));
            }
            if !layer.weight.is_finite() || !q.is_finite() || layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::Config(format!("layer {}: non-finite parameter", i + 1)));
            }
        }
        Ok(())
    }

    /// Vertically stacked feedback matrix `Q` of shape `(Σ n_i) × n_L`.
    pub fn stacked_feedback(&self) -> Matrix {
        let n_l = self.output_size();
        let mut q = Matrix::zeros(self.state_size(), n_l);
        let mut row = 0;
        for qi in &self.feedback {
            q.set_block(row, 0, qi);
            row += qi.rows();
        }
        q
    }

    /// Splits a concatenated state vector into per-layer vectors.
    pub fn split_state(&self, v: &[f64]) -> Vec<Vec<f64>> {
        assert_eq!(v.len(), self.state_size());
        let mut out = Vec::with_capacity(self.layers.len());
        let mut offset = 0;
        for w in self.layer_widths() {
            out.push(v[offset..offset + w].to_vec());
            offset += w;
        }
        out
    }

    /// Splits a stacked `(Σ n_i) × n_L` matrix into per-layer blocks, the
    /// inverse of [`NetworkParams::stacked_feedback`].
    pub fn split_state_rows(&self, stacked: &Matrix) -> Vec<Matrix> {
        assert_eq!(stacked.rows(), self.state_size());
        let mut out = Vec::with_capacity(self.layers.len());
        let mut row = 0;
        for w in self.layer_widths() {
            out.push(Matrix::from_fn(w, stacked.cols(), |r, c| stacked.get(row + r, c)));
            row += w;
        }
        out
    }
}

/// Per-layer pre- and post-nonlinearity vectors of a feedforward pass,
/// together with the input they were computed from.
#[derive(Debug, Clone)]
pub struct Activations {
    pub input: Vec<f64>,
    /// Pre-nonlinearity `v_i` per layer.
    pub pre: Vec<Vec<f64>>,
    /// Post-nonlinearity `r_i = φ(v_i)` per layer.
    pub post: Vec<Vec<f64>>,
}

impl Activations {
    pub fn output(&self) -> &[f64] {
        self.post.last().expect("at least one layer")
    }

    /// Post-nonlinearity activation feeding layer `i` (1-based), i.e.
    /// `r_{i-1}` with `r_0` the input.
    pub fn post_before(&self, i: usize) -> &[f64] {
        if i == 1 {
            &self.input
        } else {
            &self.post[i - 2]
        }
    }

    /// `‖r_i‖₂` for i = 0..L-1 (output excluded).
    pub fn non_output_layer_norms(&self) -> Vec<f64> {
        let mut norms = vec![crate::numerics::norm(&self.input)];
        for r in &self.post[..self.post.len() - 1] {
            norms.push(crate::numerics::norm(r));
        }
        norms
    }
}

/// Feedforward equilibrium: `v_i = W_i r_{i-1} + b_i`, `r_i = φ_i(v_i)`.
pub fn forward_pass(params: &NetworkParams, r0: &[f64]) -> Result<Activations> {
    if r0.len() != params.input_size() {
        return Err(Error::Shape {
            op: "forward_pass",
            details: format!("input has {} entries, network expects {}", r0.len(), params.input_size()),
        });
    }
    let mut pre = Vec::with_capacity(params.num_layers());
    let mut post = Vec::with_capacity(params.num_layers());
    let mut current = r0.to_vec();
    for layer in &params.layers {
        let mut v = layer.weight.matvec(&current);
        for (vi, bi) in v.iter_mut().zip(&layer.bias) {
            *vi += bi;
        }
        let r = layer.activation.apply_vec(&v);
        pre.push(v);
        post.push(r.clone());
        current = r;
    }
    Ok(Activations { input: r0.to_vec(), pre, post })
}

/// Jacobian of the network output w.r.t. the concatenated pre-nonlinearity
/// state: `J = [J_1 ... J_L]` with `J_i = ∂r_L/∂v_i`, evaluated at `acts`.
pub fn network_jacobian(params: &NetworkParams, acts: &Activations) -> Matrix {
    let l = params.num_layers();
    let n_l = params.output_size();
    // Backward accumulation: J_L = D_L, then J_i = J_{i+1} W_{i+1} D_i.
    let mut blocks: Vec<Matrix> = Vec::with_capacity(l);
    let mut acc = activation_jacobian(params.layers[l - 1].activation, &acts.pre[l - 1]);
    blocks.push(acc.clone());
    for i in (0..l - 1).rev() {
        acc = acc.matmul(&params.layers[i + 1].weight);
        scale_columns(&mut acc, params.layers[i].activation, &acts.pre[i]);
        blocks.push(acc.clone());
    }
    blocks.reverse();
    let mut j = Matrix::zeros(n_l, params.state_size());
    let mut col = 0;
    for b in blocks {
        let w = b.cols();
        j.set_block(0, col, &b);
        col += w;
    }
    j
}

fn activation_jacobian(kind: ActivationKind, v: &[f64]) -> Matrix {
    let n = v.len();
    let mut d = Matrix::zeros(n, n);
    for (i, &x) in v.iter().enumerate() {
        d.set(i, i, kind.derivative(x));
    }
    d
}

/// Right-multiplies `m` by the activation-derivative diagonal `D(v)`.
fn scale_columns(m: &mut Matrix, kind: ActivationKind, v: &[f64]) {
    assert_eq!(m.cols(), v.len());
    let derivs: Vec<f64> = v.iter().map(|&x| kind.derivative(x)).collect();
    for r in 0..m.rows() {
        for (c, d) in derivs.iter().enumerate() {
            let x = m.get(r, c) * d;
            m.set(r, c, x);
        }
    }
}

/// Block-diagonal structure matrix `R` relating flattened weight updates to
/// state updates: column-major `vec(ΔW_i) = (r_{i-1} ⊗ I) Δv_i`, so that
/// the weight Jacobian factors as `J_W = J Rᵀ`.
///
/// Shape: `(Σ n_i·n_{i-1}) × (Σ n_i)`.
pub fn r_matrix(acts: &Activations) -> Matrix {
    build_r(acts, false)
}

/// `R` extended with a bias row block per layer (`r` augmented with a
/// constant 1), matching flattened updates ordered `[vec(W_i); b_i]` per
/// layer. Used by runtime diagnostics where biases are trained alongside
/// weights.
pub fn r_matrix_augmented(acts: &Activations) -> Matrix {
    build_r(acts, true)
}

fn build_r(acts: &Activations, with_bias: bool) -> Matrix {
    let l = acts.pre.len();
    let widths: Vec<usize> = acts.pre.iter().map(Vec::len).collect();
    let mut in_sizes = vec![acts.input.len()];
    for r in &acts.post[..l - 1] {
        in_sizes.push(r.len());
    }
    let bias_cols = usize::from(with_bias);
    let total_rows: usize = (0..l).map(|i| widths[i] * (in_sizes[i] + bias_cols)).sum();
    let total_cols: usize = widths.iter().sum();
    let mut r = Matrix::zeros(total_rows, total_cols);
    let mut row0 = 0;
    let mut col0 = 0;
    for i in 0..l {
        let n_i = widths[i];
        let r_prev: &[f64] = if i == 0 { &acts.input } else { &acts.post[i - 1] };
        // Block (r_{i-1} ⊗ I): entry [c·n_i + a, a] = r_prev[c].
        for (c, &rc) in r_prev.iter().enumerate() {
            for a in 0..n_i {
                r.set(row0 + c * n_i + a, col0 + a, rc);
            }
        }
        if with_bias {
            let bias_row0 = row0 + in_sizes[i] * n_i;
            for a in 0..n_i {
                r.set(bias_row0 + a, col0 + a, 1.0);
            }
        }
        row0 += n_i * (in_sizes[i] + bias_cols);
        col0 += n_i;
    }
    r
}

/// Jacobian of the output w.r.t. the flattened weights: `J_W = J Rᵀ`.
pub fn weight_jacobian(params: &NetworkParams, acts: &Activations) -> Matrix {
    network_jacobian(params, acts).matmul(&r_matrix(acts).transpose())
}

/// As [`weight_jacobian`] but over `[vec(W_i); b_i]` per layer.
pub fn weight_jacobian_augmented(params: &NetworkParams, acts: &Activations) -> Matrix {
    network_jacobian(params, acts).matmul(&r_matrix_augmented(acts).transpose())
}
