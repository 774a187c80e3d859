//! `advshield` command-line driver.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data or format error,
//! 4 numeric error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "advshield",
    version,
    about = "Adversarial training, detection and risk evaluation for small image classifiers"
)]
pub struct Cli {
    /// Base seed; overrides the seed in any config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Flat `key = value` plan file; each command reads the settings it needs.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate, split or import datasets.
    #[command(subcommand)]
    Data(DataCommand),
    /// Train a classifier under NT, AT or SSAT.
    Train(TrainArgs),
    /// Craft adversarial examples against a model.
    Attack(AttackArgs),
    /// Fit per-class feature mixtures on clean training data.
    FitUad(FitUadArgs),
    /// Set per-class rejection thresholds from held-out clean data.
    Calibrate(CalibrateArgs),
    /// Classify with rejection.
    Infer(InferArgs),
    /// Accuracy, detection AUPRC and risk for one clean/adversarial pair.
    Eval(EvalArgs),
    /// Run a full experiment plan.
    Run,
    /// Write accuracy-vs-strength curves from an experiment summary.
    Curves(CurvesArgs),
    /// 2-D principal-component projection of penultimate features.
    Project(ProjectArgs),
}

#[derive(Subcommand)]
pub enum DataCommand {
    /// Generate a labeled synthetic pool (pool.adtn + manifest.json).
    Gen {
        /// Plan file whose `synth.*` keys describe the images; defaults fill missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
    /// Split a labeled pool into balanced train / unlabeled / test sets.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        train: usize,
        #[arg(long)]
        unlabeled: usize,
        #[arg(long)]
        test: usize,
    },
    /// Import `label,p0,p1,...` CSV rows into a container.
    Import {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long, default_value_t = 1)]
        channels: usize,
        /// Divide integer pixels by 255.
        #[arg(long)]
        scale: bool,
        /// Center crop size.
        #[arg(long)]
        crop: Option<usize>,
    },
}

#[derive(Args)]
pub struct TrainArgs {
    /// nt, at or ssat.
    #[arg(long)]
    pub regime: String,
    /// Directory with train.adtn (and unlabeled.adtn for SSAT).
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Args)]
pub struct AttackArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// fgsm, pgd or cw.
    #[arg(long, default_value = "pgd")]
    pub method: String,
    /// L-infinity budget in pixel units (fgsm, pgd).
    #[arg(long, default_value_t = 0.0)]
    pub eps: f64,
    /// Iterations (pgd, cw); defaults come from the plan.
    #[arg(long)]
    pub steps: Option<usize>,
    /// PGD step size; defaults to eps/4.
    #[arg(long)]
    pub step_size: Option<f64>,
    /// C&W trade-off constant.
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    /// C&W descent learning rate.
    #[arg(long)]
    pub cw_lr: Option<f64>,
    /// Start PGD from a uniform point in the budget ball.
    #[arg(long)]
    pub random_start: bool,
}

#[derive(Args)]
pub struct FitUadArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub components: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub diag_reg: f64,
    /// Treat --diag-reg as an absolute value rather than a multiple of the mean feature variance.
    #[arg(long)]
    pub absolute_reg: bool,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
}

#[derive(Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub detector: PathBuf,
    /// Held-out clean data, disjoint from the detector's fit set.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 5.0)]
    pub percentile: f64,
}

#[derive(Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub detector: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub detector: Option<PathBuf>,
    #[arg(long)]
    pub clean: PathBuf,
    /// Adversarial archive aligned row-by-row with --clean.
    #[arg(long)]
    pub adv: PathBuf,
    /// `successful` keeps only attacks that fool the model; `raw` keeps all.
    #[arg(long, default_value = "successful")]
    pub mode: String,
}

#[derive(Args)]
pub struct CurvesArgs {
    #[arg(long)]
    pub summary: PathBuf,
}

#[derive(Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Optional adversarial archive appended and flagged.
    #[arg(long)]
    pub adv: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("advshield: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
