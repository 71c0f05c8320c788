//! Run configuration: defaults, the flat `key = value` config-file format,
//! and validation. Unknown keys are rejected so typos fail fast.

use crate::controller::LossKind;
use crate::dynamics::SimConfig;
use crate::error::{Error, Result};
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Dfc,
    DfcSs,
    DfcSsa,
    Bp,
    Dfa,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "dfc" => Ok(Variant::Dfc),
            "dfc_ss" => Ok(Variant::DfcSs),
            "dfc_ssa" => Ok(Variant::DfcSsa),
            "bp" => Ok(Variant::Bp),
            "dfa" => Ok(Variant::Dfa),
            other => Err(Error::Config(format!(
                "unknown variant '{other}' (expected dfc, dfc_ss, dfc_ssa, bp, dfa)"
            ))),
        }
    }

    /// Whether this variant drives the network with a feedback controller.
    pub fn uses_feedback(self) -> bool {
        matches!(self, Variant::Dfc | Variant::DfcSs | Variant::DfcSsa)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::Dfc => "dfc",
            Variant::DfcSs => "dfc_ss",
            Variant::DfcSsa => "dfc_ssa",
            Variant::Bp => "bp",
            Variant::Dfa => "dfa",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackMode {
    Learned,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerChoice {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    StudentTeacher {
        teacher_sizes: Vec<usize>,
        n_train: usize,
        n_test: usize,
        data_seed: u64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        limit: usize,
    },
    SyntheticImages {
        n_train: usize,
        data_seed: u64,
    },
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub variant: Variant,
    pub feedback_mode: FeedbackMode,
    pub freeze_ql: bool,
    pub epochs: usize,
    /// Feedback epochs per forward epoch (1..=3).
    pub fb_epochs_per_fwd: usize,
    pub fb_pretrain_epochs: usize,
    pub lambda: f64,
    pub lr_forward: f64,
    pub lr_feedback: f64,
    pub lr_fb_pretrain: f64,
    pub optimizer: OptimizerChoice,
    pub adam_epsilon_forward: f64,
    pub adam_epsilon_feedback: f64,
    /// Global-norm clip for forward increments; 0 disables.
    pub clip_threshold: f64,
    pub batch_size: usize,
    pub loss: LossKind,
    pub sim: SimConfig,
    pub dataset: DatasetSpec,
    /// Student architecture `[n_0, ..., n_L]`.
    pub student_sizes: Vec<usize>,
    pub val_count: usize,
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Damping for the minimum-norm / Gauss-Newton diagnostic oracles.
    pub gamma_mn: f64,
    /// Compute diagnostics every N optimizer steps; 0 disables.
    pub diag_every: usize,
    /// Evaluate the stability Jacobian at the uncontrolled equilibrium
    /// instead of the controlled steady state (cheap approximation).
    pub jacobian_at_equilibrium: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            variant: Variant::DfcSsa,
            feedback_mode: FeedbackMode::Learned,
            freeze_ql: false,
            epochs: 1,
            fb_epochs_per_fwd: 1,
            fb_pretrain_epochs: 10,
            lambda: 0.01,
            lr_forward: 0.01,
            lr_feedback: 1e-3,
            lr_fb_pretrain: 1e-3,
            optimizer: OptimizerChoice::Adam,
            adam_epsilon_forward: 1e-8,
            adam_epsilon_feedback: 1e-8,
            clip_threshold: 0.0,
            batch_size: 32,
            loss: LossKind::SquaredError,
            sim: SimConfig::default(),
            dataset: DatasetSpec::StudentTeacher {
                teacher_sizes: vec![15, 20, 15, 15, 5],
                n_train: 120,
                n_test: 60,
                data_seed: 123,
            },
            student_sizes: vec![15, 10, 10, 5],
            val_count: 0,
            seed: 42,
            out_dir: PathBuf::from("runs/default"),
            gamma_mn: 0.1,
            diag_every: 1,
            jacobian_at_equilibrium: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.fb_epochs_per_fwd) {
            return Err(Error::Config(format!(
                "fb_epochs_per_fwd must be 1, 2, or 3, got {}",
                self.fb_epochs_per_fwd
            )));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("lr_forward", self.lr_forward),
            ("lr_feedback", self.lr_feedback),
            ("lr_fb_pretrain", self.lr_fb_pretrain),
        ] {
            if name == "lambda" {
                if v < 0.0 {
                    return Err(Error::Config(format!("{name} must be nonnegative, got {v}")));
                }
            } else if v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.student_sizes.len() < 2 {
            return Err(Error::Config("student_sizes needs at least input and output".into()));
        }
        if self.clip_threshold < 0.0 {
            return Err(Error::Config("clip_threshold must be nonnegative (0 disables)".into()));
        }
        if let DatasetSpec::StudentTeacher { teacher_sizes, n_train, .. } = &self.dataset {
            if teacher_sizes.len() < 2 {
                return Err(Error::Config("teacher_sizes needs at least input and output".into()));
            }
            if teacher_sizes[0] != self.student_sizes[0]
                || teacher_sizes.last() != self.student_sizes.last()
            {
                return Err(Error::Config(
                    "teacher input/output sizes must match the student's".into(),
                ));
            }
            let teacher_bigger = teacher_sizes.len() > self.student_sizes.len()
                || teacher_sizes[1..teacher_sizes.len() - 1]
                    .iter()
                    .sum::<usize>()
                    > self.student_sizes[1..self.student_sizes.len() - 1].iter().sum::<usize>();
            if !teacher_bigger {
                return Err(Error::Config(
                    "teacher must exceed the student in depth or width".into(),
                ));
            }
            if *n_train == 0 {
                return Err(Error::Config("n_train must be positive".into()));
            }
        }
        self.sim.validate()?;
        Ok(())
    }

    pub fn clip(&self) -> Option<f64> {
        (self.clip_threshold > 0.0).then_some(self.clip_threshold)
    }

    /// Parses a flat `key = value` config file; `#` starts a comment.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_contents(&text)
    }

    pub fn from_str_contents(text: &str) -> Result<Self> {
        let mut config = Self::default();
        // Dataset fields accumulate separately so they can arrive in any order.
        let mut dataset_kind: Option<String> = None;
        let mut teacher_sizes: Option<Vec<usize>> = None;
        let mut n_train: Option<usize> = None;
        let mut n_test: Option<usize> = None;
        let mut data_seed: Option<u64> = None;
        let mut idx_images: Option<PathBuf> = None;
        let mut idx_labels: Option<PathBuf> = None;
        let mut idx_limit: Option<usize> = None;

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value', got '{line}'", lineno + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            let ctx = |what: &str| Error::Config(format!("line {}: bad {what} '{value}'", lineno + 1));

            let parse_f64 = || value.parse::<f64>().map_err(|_| ctx("number"));
            let parse_usize = || value.parse::<usize>().map_err(|_| ctx("count"));
            let parse_u64 = || value.parse::<u64>().map_err(|_| ctx("seed"));
            let parse_bool = || match value {
                "true" | "1" => Ok(true),
                "false" | "0" => Ok(false),
                _ => Err(ctx("flag")),
            };
            let parse_sizes = || -> Result<Vec<usize>> {
                value
                    .split(',')
                    .map(|s| s.trim().parse::<usize>().map_err(|_| ctx("size list")))
                    .collect()
            };

            match key {
                "variant" => config.variant = Variant::parse(value)?,
                "feedback_mode" => {
                    config.feedback_mode = match value {
                        "learned" => FeedbackMode::Learned,
                        "fixed" => FeedbackMode::Fixed,
                        _ => return Err(ctx("feedback_mode")),
                    }
                }
                "freeze_ql" => config.freeze_ql = parse_bool()?,
                "epochs" => config.epochs = parse_usize()?,
                "fb_epochs_per_fwd" => config.fb_epochs_per_fwd = parse_usize()?,
                "fb_pretrain_epochs" => config.fb_pretrain_epochs = parse_usize()?,
                "lambda" => config.lambda = parse_f64()?,
                "lr_forward" => config.lr_forward = parse_f64()?,
                "lr_feedback" => config.lr_feedback = parse_f64()?,
                "lr_fb_pretrain" => config.lr_fb_pretrain = parse_f64()?,
                "optimizer" => {
                    config.optimizer = match value {
                        "sgd" => OptimizerChoice::Sgd,
                        "adam" => OptimizerChoice::Adam,
                        _ => return Err(ctx("optimizer")),
                    }
                }
                "adam_epsilon_forward" => config.adam_epsilon_forward = parse_f64()?,
                "adam_epsilon_feedback" => config.adam_epsilon_feedback = parse_f64()?,
                "clip_threshold" => config.clip_threshold = parse_f64()?,
                "batch_size" => config.batch_size = parse_usize()?,
                "loss" => {
                    config.loss = match value {
                        "squared_error" => LossKind::SquaredError,
                        "cross_entropy_softmax" => LossKind::CrossEntropySoftmax,
                        _ => return Err(ctx("loss")),
                    }
                }
                "student_sizes" => config.student_sizes = parse_sizes()?,
                "val_count" => config.val_count = parse_usize()?,
                "seed" => config.seed = parse_u64()?,
                "out_dir" => config.out_dir = PathBuf::from(value),
                "gamma_mn" => config.gamma_mn = parse_f64()?,
                "diag_every" => config.diag_every = parse_usize()?,
                "jacobian_at_equilibrium" => config.jacobian_at_equilibrium = parse_bool()?,

                "dataset" => dataset_kind = Some(value.to_string()),
                "teacher_sizes" => teacher_sizes = Some(parse_sizes()?),
                "n_train" => n_train = Some(parse_usize()?),
                "n_test" => n_test = Some(parse_usize()?),
                "data_seed" => data_seed = Some(parse_u64()?),
                "idx_images" => idx_images = Some(PathBuf::from(value)),
                "idx_labels" => idx_labels = Some(PathBuf::from(value)),
                "idx_limit" => idx_limit = Some(parse_usize()?),

                "dt" => config.sim.dt = parse_f64()?,
                "k_max" => config.sim.k_max = parse_usize()?,
                "tau_v" => config.sim.tau_v = parse_f64()?,
                "tau_u" => config.sim.tau_u = parse_f64()?,
                "k_p" => config.sim.k_p = parse_f64()?,
                "alpha_tilde" => config.sim.alpha_tilde = parse_f64()?,
                "dt_fb" => config.sim.dt_fb = parse_f64()?,
                "t_max_fb" => config.sim.t_max_fb = parse_usize()?,
                "tau_v_fb" => config.sim.tau_v_fb = parse_f64()?,
                "tau_v_noise_phase" => config.sim.tau_v_noise_phase = parse_f64()?,
                "sigma" => config.sim.sigma = parse_f64()?,
                "beta" => config.sim.beta = parse_f64()?,
                "alpha_tilde_fb" => config.sim.alpha_tilde_fb = parse_f64()?,
                "k_p_fb" => config.sim.k_p_fb = parse_f64()?,
                "divergence_threshold" => config.sim.divergence_threshold = parse_f64()?,

                other => {
                    return Err(Error::Config(format!("line {}: unknown key '{other}'", lineno + 1)))
                }
            }
        }

        let defaults = match Self::default().dataset {
            DatasetSpec::StudentTeacher { teacher_sizes, n_train, n_test, data_seed } => {
                (teacher_sizes, n_train, n_test, data_seed)
            }
            _ => unreachable!(),
        };
        config.dataset = match dataset_kind.as_deref() {
            None | Some("student_teacher") => DatasetSpec::StudentTeacher {
                teacher_sizes: teacher_sizes.unwrap_or(defaults.0),
                n_train: n_train.unwrap_or(defaults.1),
                n_test: n_test.unwrap_or(defaults.2),
                data_seed: data_seed.unwrap_or(defaults.3),
            },
            Some("idx") => DatasetSpec::Idx {
                images: idx_images
                    .ok_or_else(|| Error::Config("dataset = idx requires idx_images".into()))?,
                labels: idx_labels
                    .ok_or_else(|| Error::Config("dataset = idx requires idx_labels".into()))?,
                limit: idx_limit.unwrap_or(usize::MAX),
            },
            Some("synthetic_images") => DatasetSpec::SyntheticImages {
                n_train: n_train.unwrap_or(defaults.1),
                data_seed: data_seed.unwrap_or(defaults.3),
            },
            Some(other) => return Err(Error::Config(format!("unknown dataset kind '{other}'"))),
        };

        Ok(config)
    }
}
