//! Time-domain simulation of the coupled network-controller system and the
//! analytic steady-state solver, plus the noisy integration phase used for
//! feedback-weight learning.
//!
//! The forward-Euler scheme carries two discretization choices throughout:
//! layerwise instantaneous transmission (`v_ff_i[k+1]` reads
//! `v_{i-1}[k+1]`) and a proactive feedback path (`v_fb_i[k+1]` reads
//! `u[k+1]`). Both reduce the discretization error at moderate step sizes
//! without moving the fixed points.

use crate::controller::{controller_step, ControlGains, ControllerState};
use crate::error::{Error, Result};
use crate::network::{forward_pass, network_jacobian, Activations, NetworkParams};
use crate::numerics::{solve_linear, Matrix};
use crate::plasticity::{feedback_increment, forward_increment, UpdateBuffer};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Time constants, gains, step sizes and counts for both simulation phases.
#[derive(Debug, Clone, Copy)]
pub struct SimConfig {
    // Forward (noiseless) phase.
    pub dt: f64,
    pub k_max: usize,
    pub tau_v: f64,
    pub tau_u: f64,
    pub k_p: f64,
    pub alpha_tilde: f64,

    // Feedback (noisy) phase.
    pub dt_fb: f64,
    pub t_max_fb: usize,
    /// Time constant of the feedback compartment.
    pub tau_v_fb: f64,
    /// Network time constant during the noisy phase.
    pub tau_v_noise_phase: f64,
    pub sigma: f64,
    pub beta: f64,
    pub alpha_tilde_fb: f64,
    pub k_p_fb: f64,

    /// Abort when any state entry exceeds this magnitude.
    pub divergence_threshold: f64,
    /// Keep the output-layer feedback fixed: no noise in the output layer
    /// and no update for its feedback matrix during the noisy phase.
    pub freeze_output_feedback: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.02,
            k_max: 1000,
            tau_v: 0.2,
            tau_u: 1.0,
            k_p: 2.0,
            alpha_tilde: 0.001,
            dt_fb: 0.001,
            t_max_fb: 300,
            tau_v_fb: 0.3,
            tau_v_noise_phase: 0.005,
            sigma: 0.01,
            beta: 0.01,
            alpha_tilde_fb: 0.5,
            k_p_fb: 0.0,
            divergence_threshold: 1e6,
            freeze_output_feedback: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positives = [
            ("dt", self.dt),
            ("tau_v", self.tau_v),
            ("tau_u", self.tau_u),
            ("dt_fb", self.dt_fb),
            ("tau_v_fb", self.tau_v_fb),
            ("tau_v_noise_phase", self.tau_v_noise_phase),
            ("divergence_threshold", self.divergence_threshold),
        ];
        for (name, v) in positives {
            // `v <= 0.0` alone would wave NaNs through.
            if v <= 0.0 || v.is_nan() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let nonnegatives = [
            ("k_p", self.k_p),
            ("alpha_tilde", self.alpha_tilde),
            ("sigma", self.sigma),
            ("beta", self.beta),
            ("alpha_tilde_fb", self.alpha_tilde_fb),
            ("k_p_fb", self.k_p_fb),
        ];
        for (name, v) in nonnegatives {
            if v < 0.0 {
                return Err(Error::Config(format!("{name} must be nonnegative, got {v}")));
            }
        }
        if self.k_max == 0 {
            return Err(Error::Config("k_max must be at least 1".into()));
        }
        if self.t_max_fb == 0 {
            return Err(Error::Config("t_max_fb must be at least 1".into()));
        }
        if self.dt > self.tau_v.min(self.tau_u) {
            return Err(Error::Config(format!(
                "dt = {} exceeds min(tau_v, tau_u) = {}",
                self.dt,
                self.tau_v.min(self.tau_u)
            )));
        }
        if self.dt_fb > self.tau_v_fb.min(self.tau_v_noise_phase) {
            return Err(Error::Config(format!(
                "dt_fb = {} exceeds min(tau_v_fb, tau_v_noise_phase) = {}",
                self.dt_fb,
                self.tau_v_fb.min(self.tau_v_noise_phase)
            )));
        }
        Ok(())
    }

    pub fn forward_gains(&self) -> ControlGains {
        ControlGains { k_p: self.k_p, alpha_tilde: self.alpha_tilde, tau_u: self.tau_u }
    }

    pub fn feedback_gains(&self) -> ControlGains {
        ControlGains { k_p: self.k_p_fb, alpha_tilde: self.alpha_tilde_fb, tau_u: self.tau_u }
    }
}

/// One simulation step: per-layer central, feedforward, and feedback
/// compartments plus the controller state.
#[derive(Debug, Clone, PartialEq)]
pub struct StepSnapshot {
    pub v: Vec<Vec<f64>>,
    pub v_ff: Vec<Vec<f64>>,
    pub v_fb: Vec<Vec<f64>>,
    pub controller: ControllerState,
}

/// Ordered state snapshots; `step_count + 1` entries including the
/// initial condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub snapshots: Vec<StepSnapshot>,
}

impl Trajectory {
    pub fn last(&self) -> &StepSnapshot {
        self.snapshots.last().expect("at least the initial snapshot")
    }
}

fn check_finite(v: &[f64], threshold: f64, step: usize, what: &str) -> Result<()> {
    for &x in v {
        if !x.is_finite() || x.abs() > threshold {
            return Err(Error::Divergence {
                step,
                details: format!("{what} reached {x:.3e}"),
            });
        }
    }
    Ok(())
}

fn feedforward_drive(params: &NetworkParams, layer: usize, r_prev: &[f64]) -> Vec<f64> {
    let mut v = params.layers[layer].weight.matvec(r_prev);
    for (x, b) in v.iter_mut().zip(&params.layers[layer].bias) {
        *x += b;
    }
    v
}

/// Shared noiseless integrator for the controlled phase.
///
/// Accumulates the forward-plasticity buffer every step when
/// `accumulate_every_step`, otherwise only the final step contributes.
fn integrate_controlled(
    params: &NetworkParams,
    r0: &[f64],
    target: &[f64],
    config: &SimConfig,
    accumulate_every_step: bool,
) -> Result<(Trajectory, UpdateBuffer)> {
    config.validate()?;
    let acts = forward_pass(params, r0)?;
    let l = params.num_layers();
    let gains = config.forward_gains();

    let mut v: Vec<Vec<f64>> = acts.pre.clone();
    let mut r: Vec<Vec<f64>> = acts.post.clone();
    let mut ctrl = ControllerState::zeros(params.output_size());
    let mut buffer = UpdateBuffer::zeros_like(params);

    let mut snapshots = Vec::with_capacity(config.k_max + 1);
    snapshots.push(StepSnapshot {
        v: v.clone(),
        v_ff: acts.pre.clone(),
        v_fb: params.layer_widths().iter().map(|&w| vec![0.0; w]).collect(),
        controller: ctrl.clone(),
    });

    // The first layer's feedforward drive only depends on the clamped input.
    let v_ff_first = feedforward_drive(params, 0, r0);

    let leak = config.dt / config.tau_v;
    for k in 0..config.k_max {
        let e: Vec<f64> = target.iter().zip(&r[l - 1]).map(|(t, o)| t - o).collect();
        ctrl = controller_step(&ctrl, &e, &gains, config.dt);

        let mut v_ff_snap = Vec::with_capacity(l);
        let mut v_fb_snap = Vec::with_capacity(l);
        for i in 0..l {
            let v_ff = if i == 0 { v_ff_first.clone() } else { feedforward_drive(params, i, &r[i - 1]) };
            let v_fb = params.feedback[i].matvec(&ctrl.u);
            for (idx, x) in v[i].iter_mut().enumerate() {
                *x += leak * (-*x + v_ff[idx] + v_fb[idx]);
            }
            check_finite(&v[i], config.divergence_threshold, k + 1, "layer state")?;
            r[i] = params.layers[i].activation.apply_vec(&v[i]);

            if accumulate_every_step {
                let r_prev: &[f64] = if i == 0 { r0 } else { &r[i - 1] };
                let (dw, db) = forward_increment(&v[i], &v_ff, r_prev, params.layers[i].activation);
                buffer.add_forward(i, &dw, &db);
            }
            v_ff_snap.push(v_ff);
            v_fb_snap.push(v_fb);
        }
        check_finite(&ctrl.u, config.divergence_threshold, k + 1, "control signal")?;
        snapshots.push(StepSnapshot {
            v: v.clone(),
            v_ff: v_ff_snap,
            v_fb: v_fb_snap,
            controller: ctrl.clone(),
        });
    }

    if accumulate_every_step {
        buffer.step_count = config.k_max;
        buffer = buffer.averaged();
    } else {
        let last = snapshots.last().expect("snapshots non-empty");
        for i in 0..l {
            let r_prev: &[f64] = if i == 0 { r0 } else { &r[i - 1] };
            let (dw, db) = forward_increment(&last.v[i], &last.v_ff[i], r_prev, params.layers[i].activation);
            buffer.add_forward(i, &dw, &db);
        }
        buffer.step_count = 1;
    }

    Ok((Trajectory { snapshots }, buffer))
}

/// Controlled simulation with the plasticity buffer accumulated every step
/// and averaged over the window.
pub fn simulate_forward_phase(
    params: &NetworkParams,
    r0: &[f64],
    target: &[f64],
    config: &SimConfig,
) -> Result<(Trajectory, UpdateBuffer)> {
    integrate_controlled(params, r0, target, config, true)
}

/// Controlled simulation where only the final step's activations feed the
/// buffer.
pub fn simulate_ss_phase(
    params: &NetworkParams,
    r0: &[f64],
    target: &[f64],
    config: &SimConfig,
) -> Result<UpdateBuffer> {
    integrate_controlled(params, r0, target, config, false).map(|(_, buffer)| buffer)
}

/// Closed-form steady state of the controlled dynamics (first order in the
/// target stepsize).
#[derive(Debug, Clone)]
pub struct SteadyState {
    pub input: Vec<f64>,
    pub u_ss: Vec<f64>,
    pub delta_v: Vec<Vec<f64>>,
    pub v_ss: Vec<Vec<f64>>,
    pub v_ff_ss: Vec<Vec<f64>>,
    pub r_ss: Vec<Vec<f64>>,
    pub buffer: UpdateBuffer,
}

impl SteadyState {
    /// Steady-state activations, e.g. for evaluating the Jacobian there.
    pub fn activations(&self) -> Activations {
        Activations {
            input: self.input.clone(),
            pre: self.v_ss.clone(),
            post: self.r_ss.clone(),
        }
    }
}

/// Solves the linearized steady state directly:
/// `u_ss = (JQ + α̃I)⁻¹ δ_L`, `Δv = Q u_ss`, then one forward sweep with
/// the per-layer offsets to obtain the steady-state activations and the
/// plasticity buffer.
pub fn analytic_steady_state(
    params: &NetworkParams,
    r0: &[f64],
    target: &[f64],
    alpha_tilde: f64,
) -> Result<SteadyState> {
    let acts = forward_pass(params, r0)?;
    let j = network_jacobian(params, &acts);
    let q = params.stacked_feedback();
    let delta_l: Vec<f64> = target.iter().zip(acts.output()).map(|(t, o)| t - o).collect();

    let system = j.matmul(&q).add_diagonal(alpha_tilde);
    let u_ss = match solve_linear(&system, &Matrix::column(&delta_l), "analytic_steady_state") {
        Ok(m) => m.data().to_vec(),
        Err(Error::Singular { .. }) => {
            return Err(Error::Singular {
                op: "analytic_steady_state",
                details: "JQ + α̃I is singular; increase the damping constant alpha_tilde".into(),
            })
        }
        Err(e) => return Err(e),
    };

    let delta_v = params.split_state(&q.matvec(&u_ss));
    let l = params.num_layers();
    let mut v_ss = Vec::with_capacity(l);
    let mut v_ff_ss = Vec::with_capacity(l);
    let mut r_ss: Vec<Vec<f64>> = Vec::with_capacity(l);
    let mut buffer = UpdateBuffer::zeros_like(params);
    let mut r_prev = r0.to_vec();
    for (i, dv) in delta_v.iter().enumerate() {
        let v_ff = feedforward_drive(params, i, &r_prev);
        let v: Vec<f64> = v_ff.iter().zip(dv).map(|(a, d)| a + d).collect();
        let r = params.layers[i].activation.apply_vec(&v);
        let (dw, db) = forward_increment(&v, &v_ff, &r_prev, params.layers[i].activation);
        buffer.add_forward(i, &dw, &db);
        v_ff_ss.push(v_ff);
        v_ss.push(v.clone());
        r_prev = r.clone();
        r_ss.push(r);
    }
    buffer.step_count = 1;

    Ok(SteadyState {
        input: r0.to_vec(),
        u_ss,
        delta_v,
        v_ss,
        v_ff_ss,
        r_ss,
        buffer,
    })
}

/// Noisy integration phase for feedback-weight learning. The target is the
/// unperturbed feedforward output, noise enters the feedback compartment
/// only, and the anti-Hebbian buffer pairs the previous step's feedback
/// compartment with the fresh control signal.
pub fn simulate_feedback_phase<R: Rng>(
    params: &NetworkParams,
    r0: &[f64],
    config: &SimConfig,
    rng: &mut R,
) -> Result<(Trajectory, UpdateBuffer)> {
    config.validate()?;
    let acts = forward_pass(params, r0)?;
    let l = params.num_layers();
    let target = acts.output().to_vec();
    let gains = config.feedback_gains();

    let mut v: Vec<Vec<f64>> = acts.pre.clone();
    let mut r: Vec<Vec<f64>> = acts.post.clone();
    let mut v_fb: Vec<Vec<f64>> = params.layer_widths().iter().map(|&w| vec![0.0; w]).collect();
    let mut ctrl = ControllerState::zeros(params.output_size());
    let mut buffer = UpdateBuffer::zeros_like(params);

    let mut snapshots = Vec::with_capacity(config.t_max_fb + 1);
    snapshots.push(StepSnapshot {
        v: v.clone(),
        v_ff: acts.pre.clone(),
        v_fb: v_fb.clone(),
        controller: ctrl.clone(),
    });

    let v_ff_first = feedforward_drive(params, 0, r0);
    let fb_leak = config.dt_fb / config.tau_v_fb;
    let noise_scale = config.dt_fb.sqrt() / config.tau_v_fb * config.sigma;
    let net_leak = config.dt_fb / config.tau_v_noise_phase;

    for k in 0..config.t_max_fb {
        let e: Vec<f64> = target.iter().zip(&r[l - 1]).map(|(t, o)| t - o).collect();
        ctrl = controller_step(&ctrl, &e, &gains, config.dt_fb);

        let mut v_ff_snap = Vec::with_capacity(l);
        for i in 0..l {
            let frozen_output = config.freeze_output_feedback && i == l - 1;
            let v_ff = if i == 0 { v_ff_first.clone() } else { feedforward_drive(params, i, &r[i - 1]) };
            let drive = params.feedback[i].matvec(&ctrl.u);

            let old_v_fb = v_fb[i].clone();
            for (idx, x) in v_fb[i].iter_mut().enumerate() {
                let noise: f64 = if frozen_output {
                    0.0
                } else {
                    StandardNormal.sample(rng)
                };
                *x += fb_leak * (-*x + drive[idx]) + noise_scale * noise;
            }
            for (idx, x) in v[i].iter_mut().enumerate() {
                *x += net_leak * (-*x + v_ff[idx] + v_fb[i][idx]);
            }
            check_finite(&v[i], config.divergence_threshold, k + 1, "layer state")?;
            r[i] = params.layers[i].activation.apply_vec(&v[i]);

            if !frozen_output {
                let dq = feedback_increment(&old_v_fb, &ctrl.u, config.beta, &params.feedback[i]);
                buffer.add_feedback(i, &dq);
            }
            v_ff_snap.push(v_ff);
        }
        check_finite(&ctrl.u, config.divergence_threshold, k + 1, "control signal")?;
        snapshots.push(StepSnapshot {
            v: v.clone(),
            v_ff: v_ff_snap,
            v_fb: v_fb.clone(),
            controller: ctrl.clone(),
        });
    }

    buffer.step_count = config.t_max_fb;
    Ok((Trajectory { snapshots }, buffer.averaged()))
}

/// Draws a random feedback matrix whose columns stay in the row space of
/// `J` (resampling until the spectrum of `JQ` sits strictly in the right
/// half-plane), normalized to unit Frobenius norm.
pub fn sample_admissible_feedback<R: Rng>(j: &Matrix, rng: &mut R) -> Result<Matrix> {
    const BUDGET: usize = 100;
    let n_l = j.rows();
    let jt = j.transpose();
    for _ in 0..BUDGET {
        let m = Matrix::from_fn(n_l, n_l, |_, _| StandardNormal.sample(rng));
        let q = jt.matmul(&m);
        let spectrum = crate::numerics::eigenvalues(&j.matmul(&q))?;
        if spectrum.min_real() > 0.0 {
            let norm = q.frobenius_norm();
            return Ok(q.scale(1.0 / norm));
        }
    }
    Err(Error::SamplingFailure { attempts: BUDGET })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::con2_ratio;
    use crate::network::{ActivationKind, Layer};
    use crate::numerics::{damped_pinv, eigenvalues, norm, relative_error};
    use crate::testutil::random_network;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar_net(w: f64, q: f64) -> NetworkParams {
        NetworkParams {
            layers: vec![Layer {
                weight: Matrix::new(1, 1, vec![w]).unwrap(),
                bias: vec![0.0],
                activation: ActivationKind::Linear,
            }],
            feedback: vec![Matrix::new(1, 1, vec![q]).unwrap()],
        }
    }

    fn test_config() -> SimConfig {
        SimConfig { dt: 0.01, k_max: 2000, tau_v: 0.2, tau_u: 1.0, k_p: 0.0, alpha_tilde: 0.0, ..SimConfig::default() }
    }

    #[test]
    fn unforced_system_stays_at_equilibrium() {
        let params = scalar_net(2.0, 1.0);
        let acts = forward_pass(&params, &[1.0]).unwrap();
        let target = acts.output().to_vec();
        let config = test_config();
        let (traj, buffer) = simulate_forward_phase(&params, &[1.0], &target, &config).unwrap();
        assert_eq!(traj.snapshots.len(), config.k_max + 1);
        let last = traj.last();
        assert!(norm(&last.controller.u) < 1e-14);
        assert!((last.v[0][0] - acts.pre[0][0]).abs() < 1e-14);
        assert!(buffer.global_forward_norm() < 1e-14);
    }

    #[test]
    fn derivative_expressions_vanish_at_analytic_steady_state() {
        // On linear networks the first-order solution is the exact fixed
        // point: plugging it back into the time-derivative expressions
        // must leave no residual.
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let (mut params, r0) = random_network(&mut rng, &[5, 4, 3], false, false);
        let acts = forward_pass(&params, &r0).unwrap();
        let j = network_jacobian(&params, &acts);
        params.feedback = params.split_state_rows(&sample_admissible_feedback(&j, &mut rng).unwrap());
        let target: Vec<f64> = acts.output().iter().map(|x| x + 1e-3).collect();
        let alpha_tilde = 1e-4;
        let ss = analytic_steady_state(&params, &r0, &target, alpha_tilde).unwrap();

        // Layer residuals: -v_i + W_i φ(v_{i-1}) + b_i + Q_i u.
        let delta_norm = norm(&target.iter().zip(acts.output()).map(|(t, o)| t - o).collect::<Vec<_>>());
        let mut r_prev = r0.to_vec();
        for i in 0..params.num_layers() {
            let drive = params.layers[i].weight.matvec(&r_prev);
            let fb = params.feedback[i].matvec(&ss.u_ss);
            let residual: Vec<f64> = ss.v_ss[i]
                .iter()
                .zip(&drive)
                .zip(&fb)
                .map(|((v, d), f)| -v + d + f)
                .collect();
            assert!(norm(&residual) < 1e-6 * delta_norm, "layer {i} residual");
            r_prev = ss.r_ss[i].clone();
        }
        // Controller residual: e - α̃ u.
        let output = ss.r_ss.last().unwrap();
        let e: Vec<f64> = target.iter().zip(output).map(|(t, o)| t - o).collect();
        let residual: Vec<f64> = e.iter().zip(&ss.u_ss).map(|(ei, ui)| ei - alpha_tilde * ui).collect();
        assert!(norm(&residual) < 1e-6 * delta_norm, "controller residual {}", norm(&residual));
    }

    #[test]
    fn scalar_controller_converges_to_analytic_fixed_point() {
        // J = 1 for a single linear layer, so u_ss = δ_L at α̃ = 0.
        let params = scalar_net(2.0, 1.0);
        let acts = forward_pass(&params, &[1.0]).unwrap();
        let target = vec![acts.output()[0] + 0.1];
        let (traj, _) = simulate_forward_phase(&params, &[1.0], &target, &test_config()).unwrap();
        assert!((traj.last().controller.u[0] - 0.1).abs() < 1e-4);
    }

    #[test]
    fn toy_figure_config_runs_stably() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (mut params, r0) = random_network(&mut rng, &[15, 10, 10, 5], true, false);
        let acts = forward_pass(&params, &r0).unwrap();
        let j = network_jacobian(&params, &acts);
        params.feedback = params.split_state_rows(&sample_admissible_feedback(&j, &mut rng).unwrap());
        let (target, _) =
            crate::controller::compute_target(acts.output(), &[0.0; 5], 0.01, crate::controller::LossKind::SquaredError)
                .unwrap();
        let config = SimConfig {
            dt: 0.02,
            k_max: 1000,
            tau_v: 0.2,
            tau_u: 1.0,
            k_p: 1.5,
            alpha_tilde: 0.0015,
            ..SimConfig::default()
        };
        let (traj, buffer) = simulate_forward_phase(&params, &r0, &target, &config).unwrap();
        assert!(traj.last().v.iter().flatten().all(|x| x.is_finite()));
        assert!(buffer.global_forward_norm().is_finite());
    }

    #[test]
    fn ss_phase_zero_error_gives_zero_buffer() {
        let params = scalar_net(2.0, 1.0);
        let acts = forward_pass(&params, &[1.0]).unwrap();
        let buffer = simulate_ss_phase(&params, &[1.0], acts.output(), &test_config()).unwrap();
        assert!(buffer.global_forward_norm() < 1e-14);
    }

    #[test]
    fn ss_phase_matches_analytic_update_on_scalar_net() {
        let params = scalar_net(2.0, 1.0);
        let acts = forward_pass(&params, &[1.0]).unwrap();
        let target = vec![acts.output()[0] + 0.1];
        let buffer = simulate_ss_phase(&params, &[1.0], &target, &test_config()).unwrap();
        let ss = analytic_steady_state(&params, &[1.0], &target, 0.0).unwrap();
        assert!((buffer.delta_w[0].get(0, 0) - ss.buffer.delta_w[0].get(0, 0)).abs() < 1e-4);
    }

    #[test]
    fn windowed_and_last_step_buffers_agree_after_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (mut params, r0) = random_network(&mut rng, &[15, 10, 10, 5], true, false);
        let acts = forward_pass(&params, &r0).unwrap();
        let j = network_jacobian(&params, &acts);
        // Transpose feedback keeps the loop spectrum solidly damped.
        params.feedback = params.split_state_rows(&j.transpose());
        let (target, _) =
            crate::controller::compute_target(acts.output(), &[0.0; 5], 0.005, crate::controller::LossKind::SquaredError)
                .unwrap();
        let config = SimConfig {
            dt: 0.01,
            k_max: 6000,
            tau_v: 0.2,
            tau_u: 1.0,
            k_p: 1.5,
            alpha_tilde: 0.0015,
            ..SimConfig::default()
        };
        let (_, windowed) = simulate_forward_phase(&params, &r0, &target, &config).unwrap();
        let last_step = simulate_ss_phase(&params, &r0, &target, &config).unwrap();
        let a = windowed.flatten_forward(false);
        let b = last_step.flatten_forward(false);
        assert!(relative_error(&a, &b) < 0.05, "rel = {}", relative_error(&a, &b));
    }

    #[test]
    fn analytic_steady_state_zero_error() {
        let params = scalar_net(2.0, 1.0);
        let acts = forward_pass(&params, &[1.0]).unwrap();
        let ss = analytic_steady_state(&params, &[1.0], acts.output(), 0.0).unwrap();
        assert!(norm(&ss.u_ss) < 1e-14);
        assert!(ss.buffer.global_forward_norm() < 1e-14);
        assert!((ss.v_ss[0][0] - acts.pre[0][0]).abs() < 1e-14);
    }

    #[test]
    fn analytic_steady_state_scalar_case() {
        let params = scalar_net(2.0, 1.0);
        let acts = forward_pass(&params, &[1.0]).unwrap();
        let target = vec![acts.output()[0] + 0.1];
        let ss = analytic_steady_state(&params, &[1.0], &target, 0.0).unwrap();
        assert!((ss.u_ss[0] - 0.1).abs() < 1e-14);
        assert!((ss.delta_v[0][0] - 0.1).abs() < 1e-14);
    }

    #[test]
    fn simulation_matches_analytic_steady_state_on_linear_nets() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let (mut params, r0) = random_network(&mut rng, &[4, 3, 2], false, false);
        let acts = forward_pass(&params, &r0).unwrap();
        let j = network_jacobian(&params, &acts);
        params.feedback = params.split_state_rows(&sample_admissible_feedback(&j, &mut rng).unwrap());
        let target: Vec<f64> = acts.output().iter().map(|x| x + 1e-3).collect();
        let config = SimConfig {
            dt: 0.005,
            k_max: 8000,
            tau_v: 0.2,
            tau_u: 1.0,
            k_p: 1.5,
            alpha_tilde: 1e-4,
            ..SimConfig::default()
        };
        let (traj, _) = simulate_forward_phase(&params, &r0, &target, &config).unwrap();
        let ss = analytic_steady_state(&params, &r0, &target, config.alpha_tilde).unwrap();
        let last = traj.last();
        assert!(relative_error(&last.controller.u, &ss.u_ss) < 1e-4);
        let sim_v: Vec<f64> = last.v.iter().flatten().copied().collect();
        let ss_v: Vec<f64> = ss.v_ss.iter().flatten().copied().collect();
        assert!(relative_error(&sim_v, &ss_v) < 1e-4);
    }

    #[test]
    fn steady_state_residual_shrinks_quadratically_in_stepsize() {
        // tanh network: the linearized solution is off by O(λ²), so a 10×
        // smaller λ must shrink the residual by ~100×.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (mut params, r0) = random_network(&mut rng, &[4, 3, 2], true, false);
        let acts = forward_pass(&params, &r0).unwrap();
        let j = network_jacobian(&params, &acts);
        params.feedback = params.split_state_rows(&j.transpose());
        let config = SimConfig {
            dt: 0.005,
            k_max: 12000,
            tau_v: 0.2,
            tau_u: 1.0,
            k_p: 1.5,
            alpha_tilde: 1e-4,
            ..SimConfig::default()
        };
        let residual = |lambda: f64| -> f64 {
            let target: Vec<f64> = acts.output().iter().map(|x| x + lambda).collect();
            let (traj, _) = simulate_forward_phase(&params, &r0, &target, &config).unwrap();
            let ss = analytic_steady_state(&params, &r0, &target, config.alpha_tilde).unwrap();
            let sim_v: Vec<f64> = traj.last().v.iter().flatten().copied().collect();
            let ss_v: Vec<f64> = ss.v_ss.iter().flatten().copied().collect();
            sim_v.iter().zip(&ss_v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
        };
        let r1 = residual(3e-2);
        let r2 = residual(3e-3);
        let factor = r1 / r2;
        assert!((50.0..=200.0).contains(&factor), "order-of-convergence factor {factor}");
    }

    #[test]
    fn feedback_phase_without_noise_or_decay_is_inert() {
        let params = scalar_net(2.0, 1.0);
        let config = SimConfig { sigma: 0.0, beta: 0.0, t_max_fb: 100, ..SimConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (traj, buffer) = simulate_feedback_phase(&params, &[1.0], &config, &mut rng).unwrap();
        assert!(norm(&traj.last().controller.u) < 1e-14);
        assert!(buffer.global_feedback_norm() < 1e-14);
    }

    #[test]
    fn feedback_phase_pure_decay() {
        let params = scalar_net(2.0, 1.0);
        let config = SimConfig { sigma: 0.0, beta: 0.1, t_max_fb: 50, ..SimConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, buffer) = simulate_feedback_phase(&params, &[1.0], &config, &mut rng).unwrap();
        // −β Q with Q = 1.
        assert!((buffer.delta_q[0].get(0, 0) + 0.1).abs() < 1e-14);
    }

    #[test]
    fn feedback_phase_aligns_q_with_rowspace() {
        // Linear 20-10-5 net: repeated noisy episodes push the feedback
        // weights toward the row space of J.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut params, r0) = random_network(&mut rng, &[20, 10, 5], false, false);
        params.feedback = vec![
            crate::testutil::glorot_normal(&mut rng, 10, 5),
            crate::testutil::glorot_normal(&mut rng, 5, 5),
        ];
        let acts = forward_pass(&params, &r0).unwrap();
        let j = network_jacobian(&params, &acts);
        let config = SimConfig {
            dt_fb: 0.001,
            t_max_fb: 300,
            tau_v_fb: 0.3,
            tau_v_noise_phase: 0.005,
            sigma: 0.05,
            beta: 0.01,
            alpha_tilde_fb: 0.5,
            k_p_fb: 0.0,
            ..SimConfig::default()
        };
        let before = con2_ratio(&params.stacked_feedback(), &j).unwrap();
        let mut opt = crate::plasticity::Optimizer::new(
            crate::plasticity::OptimizerKind::Sgd,
            crate::plasticity::ParamGroup::Feedback,
            2.0,
            None,
        );
        for _ in 0..400 {
            let (_, buffer) = simulate_feedback_phase(&params, &r0, &config, &mut rng).unwrap();
            crate::plasticity::apply_update(&mut params, &buffer, &mut opt).unwrap();
        }
        let after = con2_ratio(&params.stacked_feedback(), &j).unwrap();
        assert!(after > before, "rowspace ratio did not improve: {before} -> {after}");
        assert!(after > 0.8, "rowspace ratio after training: {after}");
    }

    #[test]
    fn feedback_increment_mean_follows_theory_drift() {
        // Fixed linear network, long noisy run: the mean per-step feedback
        // increment must point along
        // −(1/(τ_u α)) Q JJᵀ + (1/(2 τ_u)) Jᵀ − β Q.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (mut params, r0) = random_network(&mut rng, &[6, 4, 2], false, false);
        params.feedback = vec![
            crate::testutil::glorot_normal(&mut rng, 4, 2).scale(0.3),
            crate::testutil::glorot_normal(&mut rng, 2, 2).scale(0.3),
        ];
        let acts = forward_pass(&params, &r0).unwrap();
        let j = network_jacobian(&params, &acts);
        let q = params.stacked_feedback();
        let config = SimConfig {
            dt_fb: 0.001,
            t_max_fb: 20_000,
            tau_v_fb: 0.3,
            tau_v_noise_phase: 0.005,
            sigma: 0.05,
            beta: 0.0,
            alpha_tilde_fb: 0.5,
            k_p_fb: 0.0,
            ..SimConfig::default()
        };
        let (_, buffer) = simulate_feedback_phase(&params, &r0, &config, &mut rng).unwrap();
        let jjt = j.matmul(&j.transpose());
        let alpha = config.alpha_tilde_fb;
        let drift = q
            .matmul(&jjt)
            .scale(-1.0 / (config.tau_u * alpha))
            .add(&j.transpose().scale(1.0 / (2.0 * config.tau_u)))
            .sub(&q.scale(config.beta));
        let mean_inc = {
            let mut stacked = Matrix::zeros(q.rows(), q.cols());
            let mut row = 0;
            for dq in &buffer.delta_q {
                stacked.set_block(row, 0, dq);
                row += dq.rows();
            }
            stacked
        };
        let inner: f64 = mean_inc
            .data()
            .iter()
            .zip(drift.data())
            .map(|(a, b)| a * b)
            .sum();
        assert!(inner > 0.0, "inner product with theoretical drift: {inner}");
    }

    #[test]
    fn divergence_is_detected_with_step_index() {
        // Anti-aligned feedback destabilizes the loop.
        let params = scalar_net(1.0, -1.0);
        let acts = forward_pass(&params, &[1.0]).unwrap();
        let target = vec![acts.output()[0] + 0.5];
        let config = SimConfig {
            dt: 0.01,
            k_max: 100_000,
            tau_v: 0.2,
            tau_u: 1.0,
            k_p: 0.0,
            alpha_tilde: 0.0,
            divergence_threshold: 1e4,
            ..SimConfig::default()
        };
        match simulate_forward_phase(&params, &[1.0], &target, &config) {
            Err(Error::Divergence { step, .. }) => assert!(step > 0),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn trajectories_are_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut params, r0) = random_network(&mut rng, &[5, 4, 3], true, false);
        params.feedback = vec![
            crate::testutil::glorot_normal(&mut rng, 4, 3),
            crate::testutil::glorot_normal(&mut rng, 3, 3),
        ];
        let config = SimConfig { t_max_fb: 50, ..SimConfig::default() };
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            simulate_feedback_phase(&params, &r0, &config, &mut rng).unwrap()
        };
        let (t1, b1) = run(99);
        let (t2, b2) = run(99);
        assert_eq!(t1, t2);
        assert_eq!(b1.flatten_feedback(), b2.flatten_feedback());
    }

    #[test]
    fn admissible_samples_live_in_rowspace_with_stable_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (params, r0) = random_network(&mut rng, &[6, 5, 3], true, false);
        let acts = forward_pass(&params, &r0).unwrap();
        let j = network_jacobian(&params, &acts);

        // Known admissible instances first.
        let pinv = damped_pinv(&j, 0.0).unwrap();
        assert!(eigenvalues(&j.matmul(&pinv)).unwrap().min_real() > 0.9);
        let jt = j.transpose();
        assert!(eigenvalues(&j.matmul(&jt)).unwrap().min_real() > 0.0);

        for _ in 0..5 {
            let q = sample_admissible_feedback(&j, &mut rng).unwrap();
            assert!((q.frobenius_norm() - 1.0).abs() < 1e-12);
            assert!((con2_ratio(&q, &j).unwrap() - 1.0).abs() < 1e-10);
            assert!(eigenvalues(&j.matmul(&q)).unwrap().min_real() > 0.0);
        }
    }
}
