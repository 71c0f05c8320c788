//! Command-line driver: train, pretrain-feedback, analyze, gen-data.
//!
//! Exit codes: 0 success, 2 configuration error, 3 divergence.

use clap::{Args, Parser, Subcommand};
use dfc::data::{generate_student_teacher, write_idx, Dataset, TeacherSpec};
use dfc::error::Error;
use dfc::experiment::{self, DatasetSpec, ExperimentConfig, FeedbackMode, Variant};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dfc", about = "Feedback-controller-driven training and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the configured variant (dfc, dfc_ss, dfc_ssa, bp, dfa).
    #[arg(long)]
    variant: Option<String>,
    /// Keeps the feedback weights at their initialization.
    #[arg(long)]
    fixed_feedback: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full training experiment.
    Train(CommonArgs),
    /// Run only the feedback-weight pretraining phase.
    PretrainFeedback(CommonArgs),
    /// Compute alignment and stability diagnostics for a checkpoint.
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint file to analyze.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Generate the configured dataset and write it to the output directory.
    GenData(CommonArgs),
}

fn build_config(common: &CommonArgs) -> dfc::Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.out_dir = out.clone();
    }
    if let Some(variant) = &common.variant {
        config.variant = Variant::parse(variant)?;
    }
    if common.fixed_feedback {
        config.feedback_mode = FeedbackMode::Fixed;
    }
    Ok(config)
}

fn write_regression_csv(ds: &Dataset, path: &PathBuf) -> dfc::Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let header: Vec<String> = (0..ds.inputs.cols())
        .map(|i| format!("x{i}"))
        .chain((0..ds.targets.cols()).map(|i| format!("y{i}")))
        .collect();
    writeln!(f, "{}", header.join(","))?;
    for i in 0..ds.len() {
        let row: Vec<String> = ds
            .input(i)
            .iter()
            .chain(ds.target(i))
            .map(f64::to_string)
            .collect();
        writeln!(f, "{}", row.join(","))?;
    }
    Ok(())
}

fn gen_data(config: &ExperimentConfig) -> dfc::Result<()> {
    std::fs::create_dir_all(&config.out_dir)?;
    match &config.dataset {
        DatasetSpec::StudentTeacher { teacher_sizes, n_train, n_test, data_seed } => {
            let spec = TeacherSpec { layer_sizes: teacher_sizes.clone(), seed: *data_seed };
            let (train, test) = generate_student_teacher(&spec, *n_train, *n_test)?;
            write_regression_csv(&train, &config.out_dir.join("train.csv"))?;
            write_regression_csv(&test, &config.out_dir.join("test.csv"))?;
            println!(
                "wrote {} train and {} test samples to {}",
                train.len(),
                test.len(),
                config.out_dir.display()
            );
        }
        DatasetSpec::SyntheticImages { n_train, data_seed } => {
            let ds = dfc::data::generate_synthetic_images(*n_train, *data_seed);
            let images = config.out_dir.join("train-images.idx");
            let labels = config.out_dir.join("train-labels.idx");
            write_idx(&ds, 28, 28, &images, &labels)?;
            println!("wrote {} images to {} / {}", ds.len(), images.display(), labels.display());
        }
        DatasetSpec::Idx { .. } => {
            return Err(Error::Config(
                "gen-data needs a generative dataset (student_teacher or synthetic_images)".into(),
            ))
        }
    }
    Ok(())
}

fn run() -> dfc::Result<()> {
    match Cli::parse().command {
        Command::Train(common) => {
            let config = build_config(&common)?;
            let summary = experiment::run_training(&config)?;
            println!(
                "run complete: {} epochs, train loss {} -> {}",
                summary.epochs_run, summary.initial_train_loss, summary.final_train_loss
            );
            if let (Some(e), Some(l)) = (summary.best_val_epoch, summary.best_val_loss) {
                println!("best validation: epoch {e}, loss {l}");
            }
            println!("metrics: {}", summary.metrics_path.display());
        }
        Command::PretrainFeedback(common) => {
            let mut config = build_config(&common)?;
            config.epochs = 0;
            let summary = experiment::run_training(&config)?;
            println!(
                "pretraining complete; checkpoint: {}",
                summary.final_checkpoint.display()
            );
        }
        Command::Analyze { common, checkpoint } => {
            let config = build_config(&common)?;
            let ck = experiment::checkpoint::load(&checkpoint)?;
            let ds = experiment::load_dataset(&config)?;
            std::fs::create_dir_all(&config.out_dir)?;
            let out = config.out_dir.join("analysis.csv");
            let record = experiment::analyze(&ck.params, &ds, &config, &out)?;
            println!(
                "analysis written to {} (con2 {:.4}, max Re eig A_PI {:.4})",
                out.display(),
                record.con2_ratio,
                record.max_real_eig_api
            );
        }
        Command::GenData(common) => {
            let config = build_config(&common)?;
            gen_data(&config)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config(_) | Error::Parse { .. } => ExitCode::from(2),
                Error::Divergence { .. } => ExitCode::from(3),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
