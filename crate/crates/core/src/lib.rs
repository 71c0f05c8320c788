//! Feedback-controller-driven learning for deep networks.
//!
//! A controller drives a dynamical multilayer network toward an output
//! target; the gap between each neuron's controlled and feedforward
//! activity yields local weight updates that approximate Gauss-Newton /
//! minimum-norm optimization. Feedback weights are themselves learned from
//! noise correlations in a separate phase.
//!
//! Module map:
//! - [`numerics`] — dense matrices, damped pseudoinverses, projections,
//!   eigenvalues, angles
//! - [`network`] — feedforward model, Jacobians, structure matrices
//! - [`controller`] — output targets and the PI control law
//! - [`dynamics`] — forward/steady-state/noisy integrators and the
//!   analytic steady-state solver
//! - [`plasticity`] — local increments, buffers, SGD/Adam, clipping
//! - [`analysis`] — alignment ratios, oracle updates, stability spectra
//! - [`baselines`] — backprop and direct feedback alignment controls
//! - [`data`] — synthetic regression/image data and IDX files
//! - [`experiment`] — config, wake-sleep training loop, metrics,
//!   checkpoints

pub mod analysis;
pub mod baselines;
pub mod controller;
pub mod data;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod network;
pub mod numerics;
pub mod plasticity;
pub mod testutil;

pub use error::{Error, Result};
