//! Configuration, the wake-sleep training loop, metrics emission,
//! checkpointing, and diagnostics assembly.

pub mod checkpoint;
pub mod config;
pub mod metrics;

pub use checkpoint::{Checkpoint, OptimizerCheckpoint};
pub use config::{DatasetSpec, ExperimentConfig, FeedbackMode, OptimizerChoice, Variant};

use crate::analysis::{
    a_pi_matrix, con1_ratio, con2_ratio, oracle_bp_update, oracle_gn_update, oracle_mn_update,
    oracle_ssa_update, DiagnosticsRecord,
};
use crate::baselines::{bp_gradients, dfa_update, DfaFeedback};
use crate::controller::{compute_target, LossKind};
use crate::data::{
    epoch_batches, generate_student_teacher, generate_synthetic_images, load_idx, split_validation,
    Dataset, DatasetKind, TeacherSpec,
};
use crate::dynamics::{
    analytic_steady_state, simulate_feedback_phase, simulate_forward_phase, simulate_ss_phase,
};
use crate::error::{Error, Result};
use crate::network::{
    forward_pass, network_jacobian, r_matrix_augmented, ActivationKind, Layer, NetworkParams,
};
use crate::numerics::{angle_degrees, eigenvalues, Matrix};
use crate::plasticity::{apply_update, Optimizer, OptimizerKind, ParamGroup, UpdateBuffer};
use crate::testutil::glorot_normal;
use metrics::MetricsWriter;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Outcome of a training run, also written to `summary.txt`.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub initial_train_loss: f64,
    pub final_train_loss: f64,
    pub final_train_accuracy: Option<f64>,
    pub best_val_epoch: Option<usize>,
    pub best_val_loss: Option<f64>,
    pub best_val_accuracy: Option<f64>,
    pub epochs_run: usize,
    pub metrics_path: PathBuf,
    pub final_checkpoint: PathBuf,
}

// Stream tags keep the per-purpose RNG streams independent of each other
// and of scheduling.
const TAG_INIT: u64 = 1;
const TAG_PRETRAIN: u64 = 2;
const TAG_FEEDBACK: u64 = 3;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn stream_seed(master: u64, tag: u64, epoch: u64, sample: u64) -> u64 {
    splitmix(splitmix(splitmix(master ^ splitmix(tag)) ^ splitmix(epoch)) ^ splitmix(sample))
}

/// Glorot-normal student with tanh hidden layers, a linear output, zero
/// biases, and Glorot-normal feedback matrices.
pub fn init_params(sizes: &[usize], rng: &mut ChaCha8Rng) -> NetworkParams {
    let l = sizes.len() - 1;
    let n_l = sizes[l];
    let layers = (0..l)
        .map(|i| Layer {
            weight: glorot_normal(rng, sizes[i + 1], sizes[i]),
            bias: vec![0.0; sizes[i + 1]],
            activation: if i + 1 == l { ActivationKind::Linear } else { ActivationKind::Tanh },
        })
        .collect();
    let feedback = (0..l).map(|i| glorot_normal(rng, sizes[i + 1], n_l)).collect();
    NetworkParams { layers, feedback }
}

/// Fixed-feedback initialization: each layer's feedback matrix becomes the
/// transposed product of the downstream forward weights, and the output
/// layer's becomes the identity. In the linear regime this stacks up to
/// (approximately) the transposed network Jacobian.
pub fn init_fixed_feedback(params: &NetworkParams) -> NetworkParams {
    let l = params.num_layers();
    let n_l = params.output_size();
    let mut out = params.clone();
    for i in 0..l {
        let mut q = Matrix::identity(n_l);
        for k in (i + 1..l).rev() {
            q = params.layers[k].weight.transpose().matmul(&q);
        }
        out.feedback[i] = q;
    }
    out
}

/// Mean loss (and accuracy for classification) over a dataset.
pub fn evaluate(params: &NetworkParams, ds: &Dataset, loss: LossKind) -> Result<(f64, Option<f64>)> {
    if ds.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty dataset".into()));
    }
    let per_sample: Vec<Result<(f64, bool)>> = (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let acts = forward_pass(params, ds.input(i))?;
            let l = loss.value(acts.output(), ds.target(i));
            let correct = if ds.kind == DatasetKind::Classification {
                argmax(acts.output()) == argmax(ds.target(i))
            } else {
                false
            };
            Ok((l, correct))
        })
        .collect();
    let mut total = 0.0;
    let mut hits = 0usize;
    for r in per_sample {
        let (l, c) = r?;
        total += l;
        hits += usize::from(c);
    }
    let mean = total / ds.len() as f64;
    let accuracy = (ds.kind == DatasetKind::Classification).then(|| hits as f64 / ds.len() as f64);
    Ok((mean, accuracy))
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    match &config.dataset {
        DatasetSpec::StudentTeacher { teacher_sizes, n_train, data_seed, .. } => {
            let spec = TeacherSpec { layer_sizes: teacher_sizes.clone(), seed: *data_seed };
            let (train, _) = generate_student_teacher(&spec, *n_train, 0)?;
            Ok(train)
        }
        DatasetSpec::Idx { images, labels, limit } => load_idx(images, labels, *limit),
        DatasetSpec::SyntheticImages { n_train, data_seed } => {
            Ok(generate_synthetic_images(*n_train, *data_seed))
        }
    }
}

fn check_dims(config: &ExperimentConfig, ds: &Dataset) -> Result<()> {
    let sizes = &config.student_sizes;
    if ds.inputs.cols() != sizes[0] {
        return Err(Error::Config(format!(
            "dataset inputs have {} features but student_sizes starts with {}",
            ds.inputs.cols(),
            sizes[0]
        )));
    }
    if ds.targets.cols() != *sizes.last().unwrap() {
        return Err(Error::Config(format!(
            "dataset targets have {} entries but student_sizes ends with {}",
            ds.targets.cols(),
            sizes.last().unwrap()
        )));
    }
    Ok(())
}

/// Per-sample forward-phase work: the variant's update buffer plus the
/// feedforward loss.
fn sample_forward_update(
    params: &NetworkParams,
    dfa: Option<&DfaFeedback>,
    x: &[f64],
    y: &[f64],
    config: &ExperimentConfig,
) -> Result<(UpdateBuffer, f64)> {
    let acts = forward_pass(params, x)?;
    let loss_value = config.loss.value(acts.output(), y);
    let buffer = match config.variant {
        Variant::Bp => bp_gradients(params, x, y, config.loss)?,
        Variant::Dfa => {
            let fb = dfa.expect("DFA feedback initialized for the dfa variant");
            dfa_update(params, fb, x, y, config.loss)?
        }
        Variant::Dfc | Variant::DfcSs | Variant::DfcSsa => {
            let (target, _) = compute_target(acts.output(), y, config.lambda, config.loss)?;
            match config.variant {
                Variant::Dfc => simulate_forward_phase(params, x, &target, &config.sim)?.1,
                Variant::DfcSs => simulate_ss_phase(params, x, &target, &config.sim)?,
                Variant::DfcSsa => {
                    analytic_steady_state(params, x, &target, config.sim.alpha_tilde)?.buffer
                }
                _ => unreachable!(),
            }
        }
    };
    Ok((buffer, loss_value))
}

fn batch_forward_update(
    params: &NetworkParams,
    dfa: Option<&DfaFeedback>,
    ds: &Dataset,
    batch: &[usize],
    config: &ExperimentConfig,
) -> Result<(UpdateBuffer, f64)> {
    let results: Vec<Result<(UpdateBuffer, f64)>> = batch
        .par_iter()
        .map(|&i| sample_forward_update(params, dfa, ds.input(i), ds.target(i), config))
        .collect();
    let mut merged = UpdateBuffer::zeros_like(params);
    let mut loss_sum = 0.0;
    for r in results {
        let (buffer, loss) = r?;
        merged.merge(&buffer);
        loss_sum += loss;
    }
    Ok((merged.averaged(), loss_sum / batch.len() as f64))
}

fn batch_feedback_update(
    params: &NetworkParams,
    ds: &Dataset,
    batch: &[usize],
    config: &ExperimentConfig,
    epoch_counter: u64,
    tag: u64,
) -> Result<UpdateBuffer> {
    let results: Vec<Result<UpdateBuffer>> = batch
        .par_iter()
        .map(|&i| {
            let seed = stream_seed(config.seed, tag, epoch_counter, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            simulate_feedback_phase(params, ds.input(i), &config.sim, &mut rng).map(|(_, b)| b)
        })
        .collect();
    let mut merged = UpdateBuffer::zeros_like(params);
    for r in results {
        merged.merge(&r?);
    }
    Ok(merged.averaged())
}

/// Assembles one diagnostics record over a batch: alignment ratios,
/// angles between the actual batch-mean update and the batch-mean oracle
/// updates, and worst-case stability eigenvalues.
pub fn batch_diagnostics(
    params: &NetworkParams,
    ds: &Dataset,
    batch: &[usize],
    actual: &UpdateBuffer,
    config: &ExperimentConfig,
    iteration: usize,
    train_loss: f64,
) -> Result<DiagnosticsRecord> {
    let take = batch.len();
    let q = params.stacked_feedback();
    let per_sample: Vec<Result<SampleDiag>> = batch
        .par_iter()
        .map(|&i| sample_diagnostics(params, &q, ds.input(i), ds.target(i), config))
        .collect();

    let mut con1 = 0.0;
    let mut con2 = 0.0;
    let mut api = f64::NEG_INFINITY;
    let mut jq = f64::NEG_INFINITY;
    let mut mn = None;
    let mut gn = None;
    let mut bp = None;
    let mut ssa = None;
    let add = |acc: &mut Option<Vec<f64>>, v: Vec<f64>| match acc {
        None => *acc = Some(v),
        Some(a) => a.iter_mut().zip(&v).for_each(|(x, y)| *x += y),
    };
    for r in per_sample {
        let d = r?;
        con1 += d.con1;
        con2 += d.con2;
        // Stability is a worst-case property over the batch.
        api = api.max(d.max_real_api);
        jq = jq.max(d.max_real_jq);
        add(&mut mn, d.mn);
        add(&mut gn, d.gn);
        add(&mut bp, d.bp);
        add(&mut ssa, d.ssa);
    }
    let n = take as f64;
    let actual_flat = actual.flatten_forward(true);
    let angle = |oracle: &Option<Vec<f64>>| -> Option<f64> {
        oracle
            .as_ref()
            .and_then(|o| angle_degrees(&actual_flat, o).ok())
    };
    Ok(DiagnosticsRecord {
        iteration,
        con1_ratio: con1 / n,
        con2_ratio: con2 / n,
        angle_mn_deg: angle(&mn),
        angle_gn_deg: angle(&gn),
        angle_bp_deg: angle(&bp),
        angle_ssa_deg: angle(&ssa),
        max_real_eig_api: api,
        max_real_eig_jq: jq,
        train_loss,
    })
}

struct SampleDiag {
    con1: f64,
    con2: f64,
    max_real_api: f64,
    max_real_jq: f64,
    mn: Vec<f64>,
    gn: Vec<f64>,
    bp: Vec<f64>,
    ssa: Vec<f64>,
}

fn sample_diagnostics(
    params: &NetworkParams,
    q: &Matrix,
    x: &[f64],
    y: &[f64],
    config: &ExperimentConfig,
) -> Result<SampleDiag> {
    let acts = forward_pass(params, x)?;
    let (target, delta_l) = compute_target(acts.output(), y, config.lambda, config.loss)?;
    let j = network_jacobian(params, &acts);
    let con2 = con2_ratio(q, &j)?;
    let con1 = con1_ratio(&acts)?;

    let ss_acts = if config.jacobian_at_equilibrium {
        acts.clone()
    } else {
        analytic_steady_state(params, x, &target, config.sim.alpha_tilde)?.activations()
    };
    let j_ss = network_jacobian(params, &ss_acts);
    let max_real_api = eigenvalues(&a_pi_matrix(params, &ss_acts, &config.sim))?.max_real();
    let max_real_jq = eigenvalues(&j_ss.matmul(q))?.max_real();

    let r_aug = r_matrix_augmented(&acts);
    let j_w_aug = j.matmul(&r_aug.transpose());
    let r_ss_aug = r_matrix_augmented(&ss_acts);
    let mn = oracle_mn_update(&j, &r_aug, &delta_l, config.gamma_mn)?;
    let gn = oracle_gn_update(&j_w_aug, &delta_l, config.gamma_mn)?;
    let bp = oracle_bp_update(&j_w_aug, &delta_l);
    let ssa = oracle_ssa_update(&j, q, &r_ss_aug, &delta_l, config.sim.alpha_tilde)?;
    Ok(SampleDiag { con1, con2, max_real_api, max_real_jq, mn, gn, bp, ssa })
}

fn make_optimizer(config: &ExperimentConfig, group: ParamGroup, lr: f64, epsilon: f64) -> Optimizer {
    let kind = match config.optimizer {
        OptimizerChoice::Sgd => OptimizerKind::Sgd,
        OptimizerChoice::Adam => OptimizerKind::adam(epsilon),
    };
    let clip = if group == ParamGroup::Forward { config.clip() } else { None };
    Optimizer::new(kind, group, lr, clip)
}

/// Runs pretraining, the alternating wake-sleep loop, per-epoch validation
/// and checkpoints, and writes metrics plus a summary. With `epochs = 0`
/// only pretraining runs and the initial metrics row is written.
pub fn run_training(config: &ExperimentConfig) -> Result<RunSummary> {
    config.validate()?;
    std::fs::create_dir_all(&config.out_dir)?;

    let full = load_dataset(config)?;
    check_dims(config, &full)?;
    let (train, val) = split_validation(&full, config.val_count)?;
    if train.is_empty() {
        return Err(Error::Config("no training samples left after the validation split".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, TAG_INIT, 0, 0));
    let mut params = init_params(&config.student_sizes, &mut rng);
    if config.feedback_mode == FeedbackMode::Fixed {
        params = init_fixed_feedback(&params);
    }
    if config.freeze_ql {
        let last = params.num_layers() - 1;
        params.feedback[last] = Matrix::identity(params.output_size());
    }
    let mut sim_config = config.sim;
    sim_config.freeze_output_feedback = config.freeze_ql;
    let config = &ExperimentConfig { sim: sim_config, ..config.clone() };

    let dfa = (config.variant == Variant::Dfa).then(|| DfaFeedback::init(&params, &mut rng));

    let mut forward_opt =
        make_optimizer(config, ParamGroup::Forward, config.lr_forward, config.adam_epsilon_forward);
    let mut feedback_opt =
        make_optimizer(config, ParamGroup::Feedback, config.lr_feedback, config.adam_epsilon_feedback);
    let mut pretrain_opt =
        make_optimizer(config, ParamGroup::Feedback, config.lr_fb_pretrain, config.adam_epsilon_feedback);

    let metrics_path = config.out_dir.join("metrics.csv");
    let mut metrics = MetricsWriter::create(&metrics_path)?;

    let trains_feedback = config.variant.uses_feedback() && config.feedback_mode == FeedbackMode::Learned;

    // Feedback pretraining from the random initialization.
    if trains_feedback {
        for epoch in 0..config.fb_pretrain_epochs {
            for batch in epoch_batches(train.len(), config.batch_size, config.seed ^ 0x5052, epoch) {
                let buffer =
                    batch_feedback_update(&params, &train, &batch, config, epoch as u64, TAG_PRETRAIN)?;
                apply_update(&mut params, &buffer, &mut pretrain_opt)?;
            }
        }
    }

    let (initial_train_loss, initial_acc) = evaluate(&params, &train, config.loss)?;
    metrics.write_row("init", 0, 0, initial_train_loss, initial_acc, None)?;

    let mut iteration = 0usize;
    let mut best_val: Option<(usize, f64, Option<f64>)> = None;
    let mut fb_epoch_counter = config.fb_pretrain_epochs as u64;

    for epoch in 0..config.epochs {
        // Wake phase: one epoch of forward-weight training.
        for batch in epoch_batches(train.len(), config.batch_size, config.seed ^ 0x464f, epoch) {
            let (buffer, batch_loss) = batch_forward_update(&params, dfa.as_ref(), &train, &batch, config)?;
            iteration += 1;
            let diag = if config.diag_every > 0 && iteration.is_multiple_of(config.diag_every) {
                Some(batch_diagnostics(&params, &train, &batch, &buffer, config, iteration, batch_loss)?)
            } else {
                None
            };
            apply_update(&mut params, &buffer, &mut forward_opt)?;
            metrics.write_row("train", epoch, iteration, batch_loss, None, diag.as_ref())?;
        }

        // Sleep phase: X epochs of feedback-weight training.
        if trains_feedback {
            for _ in 0..config.fb_epochs_per_fwd {
                for batch in
                    epoch_batches(train.len(), config.batch_size, config.seed ^ 0x4642, fb_epoch_counter as usize)
                {
                    let buffer =
                        batch_feedback_update(&params, &train, &batch, config, fb_epoch_counter, TAG_FEEDBACK)?;
                    apply_update(&mut params, &buffer, &mut feedback_opt)?;
                }
                fb_epoch_counter += 1;
            }
        }

        if !val.is_empty() {
            let (val_loss, val_acc) = evaluate(&params, &val, config.loss)?;
            metrics.write_row("val", epoch, iteration, val_loss, val_acc, None)?;
            let better = best_val.is_none_or(|(_, best, _)| val_loss < best);
            if better {
                best_val = Some((epoch, val_loss, val_acc));
            }
        }

        save_checkpoint(config, &params, &forward_opt, &feedback_opt, epoch)?;
    }

    let final_checkpoint = config.out_dir.join("checkpoint_final.ckpt");
    checkpoint::save(
        &Checkpoint {
            epoch: config.epochs,
            params: params.clone(),
            forward_opt: snapshot_opt(&forward_opt),
            feedback_opt: snapshot_opt(&feedback_opt),
        },
        &final_checkpoint,
    )?;

    let (final_train_loss, final_train_accuracy) = evaluate(&params, &train, config.loss)?;
    let summary = RunSummary {
        initial_train_loss,
        final_train_loss,
        final_train_accuracy,
        best_val_epoch: best_val.map(|(e, _, _)| e),
        best_val_loss: best_val.map(|(_, l, _)| l),
        best_val_accuracy: best_val.and_then(|(_, _, a)| a),
        epochs_run: config.epochs,
        metrics_path,
        final_checkpoint,
    };
    write_summary(&config.out_dir, &summary)?;
    Ok(summary)
}

fn snapshot_opt(opt: &Optimizer) -> OptimizerCheckpoint {
    OptimizerCheckpoint { step: opt.step, moments: opt.moments.clone() }
}

fn save_checkpoint(
    config: &ExperimentConfig,
    params: &NetworkParams,
    forward_opt: &Optimizer,
    feedback_opt: &Optimizer,
    epoch: usize,
) -> Result<()> {
    checkpoint::save(
        &Checkpoint {
            epoch,
            params: params.clone(),
            forward_opt: snapshot_opt(forward_opt),
            feedback_opt: snapshot_opt(feedback_opt),
        },
        &config.out_dir.join(format!("checkpoint_epoch_{epoch}.ckpt")),
    )
}

fn write_summary(out_dir: &Path, summary: &RunSummary) -> Result<()> {
    let mut f = std::fs::File::create(out_dir.join("summary.txt"))?;
    writeln!(f, "initial_train_loss = {}", summary.initial_train_loss)?;
    writeln!(f, "final_train_loss = {}", summary.final_train_loss)?;
    if let Some(a) = summary.final_train_accuracy {
        writeln!(f, "final_train_accuracy = {a}")?;
    }
    if let Some(e) = summary.best_val_epoch {
        writeln!(f, "best_val_epoch = {e}")?;
    }
    if let Some(l) = summary.best_val_loss {
        writeln!(f, "best_val_loss = {l}")?;
    }
    if let Some(a) = summary.best_val_accuracy {
        writeln!(f, "best_val_accuracy = {a}")?;
    }
    writeln!(f, "epochs_run = {}", summary.epochs_run)?;
    Ok(())
}

/// Computes the full diagnostics set for fixed parameters over one batch
/// of the dataset and writes a one-row CSV next to the metrics format.
pub fn analyze(
    params: &NetworkParams,
    ds: &Dataset,
    config: &ExperimentConfig,
    out_path: &Path,
) -> Result<DiagnosticsRecord> {
    config.validate()?;
    check_dims(config, ds)?;
    if ds.is_empty() {
        return Err(Error::Config("cannot analyze an empty dataset".into()));
    }
    let batch: Vec<usize> = (0..ds.len().min(config.batch_size)).collect();
    let dfa = (config.variant == Variant::Dfa).then(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, TAG_INIT, 0, 1));
        DfaFeedback::init(params, &mut rng)
    });
    let (buffer, batch_loss) = batch_forward_update(params, dfa.as_ref(), ds, &batch, config)?;
    let record = batch_diagnostics(params, ds, &batch, &buffer, config, 0, batch_loss)?;
    let mut writer = MetricsWriter::create(out_path)?;
    writer.write_row("analyze", 0, 0, batch_loss, None, Some(&record))?;
    Ok(record)
}
