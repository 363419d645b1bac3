//! `qlsc`: generation, training, evaluation, ablations, and diagnostics for
//! the calibrated extractive reader, driven by one JSON config file.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error. Output files are a
//! pure function of the inputs and the seed; nothing embeds a timestamp.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use qlsc_core::{Result, Stage};

use commands::{ModelOverrides, SplitChoice};
use config::load_run_config;

#[derive(Parser)]
#[command(name = "qlsc", version, about = "Extractive QA with query semantic calibration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paraphrase-QA corpus as JSONL.
    Gen(GenArgs),
    /// Train a model and write a checkpoint plus loss.csv.
    Train(TrainArgs),
    /// Evaluate a checkpoint: EM, F1, consistency, and distance metrics.
    Eval(EvalArgs),
    /// Train and evaluate once per center count K.
    AblateK(AblateKArgs),
    /// Train across seeds and repeats; report mean and spread per metric.
    AblateSeed(AblateSeedArgs),
    /// Compare analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Project query representations to two principal components.
    Pca(PcaArgs),
    /// Convert a SQuAD v1.1 JSON file to the corpus JSONL format.
    ImportSquad(ImportSquadArgs),
}

#[derive(Args)]
struct GenArgs {
    /// JSON run config; defaults apply to every absent field.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output JSONL path.
    #[arg(long)]
    out: PathBuf,
    /// Directory for effective_config.json.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Override the generation seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON run config; defaults apply to every absent field.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training corpus JSONL; only its train split is fitted (the whole
    /// file when no example carries the train split).
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Directory for loss.csv and effective_config.json.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Enable or disable the calibrator regardless of the config.
    #[arg(long, value_enum)]
    qlsc: Option<Toggle>,
    /// Number of pooled center vectors K.
    #[arg(long)]
    k: Option<usize>,
    /// Number of subspace groups m.
    #[arg(long)]
    m: Option<usize>,
    /// Sequence encoder architecture.
    #[arg(long, default_value = "lstm", value_parser = ["lstm"])]
    encoder: String,
    /// Override the training seed (model init and batch order).
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Override the learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Override the batch size.
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint produced by `train`.
    #[arg(long)]
    ckpt: PathBuf,
    /// Corpus JSONL to evaluate on.
    #[arg(long)]
    data: PathBuf,
    /// Metrics CSV path; defaults to <out-dir>/metrics.csv.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Directory for the default report location.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Corpus split to evaluate (a named split falls back to the whole
    /// file when absent).
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    split: SplitArg,
    /// Query representation used for the distance metrics.
    #[arg(long, value_enum, default_value_t = StageArg::Calibrated)]
    stage: StageArg,
}

#[derive(Args)]
struct AblateKArgs {
    /// JSON run config; defaults apply to every absent field.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus JSONL (train split fitted, test split evaluated).
    #[arg(long)]
    data: PathBuf,
    /// Center counts to sweep.
    #[arg(long, value_delimiter = ',', default_values_t = [4usize, 8, 16, 32, 64])]
    ks: Vec<usize>,
    /// Sweep CSV path; defaults to <out-dir>/k_ablation.csv.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Directory for the default report and effective_config.json.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Override the training seed shared by every sweep point.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AblateSeedArgs {
    /// JSON run config; defaults apply to every absent field.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Corpus JSONL (train split fitted, test split evaluated).
    #[arg(long)]
    data: PathBuf,
    /// Seeds to train with.
    #[arg(long, value_delimiter = ',', default_values_t = [40u64, 41, 42])]
    seeds: Vec<u64>,
    /// Independent repeats per seed.
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Ablation CSV path; defaults to <out-dir>/seed_ablation.csv.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Directory for the default report and effective_config.json.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Seed for the checked parameters and example.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    h: f64,
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-3)]
    threshold: f64,
}

#[derive(Args)]
struct PcaArgs {
    /// Checkpoint produced by `train`.
    #[arg(long)]
    ckpt: PathBuf,
    /// Corpus JSONL to project.
    #[arg(long)]
    data: PathBuf,
    /// Directory for pca.csv.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Corpus split to project (a named split falls back to the whole
    /// file when absent).
    #[arg(long, value_enum, default_value_t = SplitArg::All)]
    split: SplitArg,
    /// Query representation to project.
    #[arg(long, value_enum, default_value_t = StageArg::Calibrated)]
    stage: StageArg,
}

#[derive(Args)]
struct ImportSquadArgs {
    /// SQuAD v1.1 JSON input.
    #[arg(long)]
    input: PathBuf,
    /// Output JSONL path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
    All,
}

impl From<SplitArg> for SplitChoice {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => SplitChoice::Train,
            SplitArg::Dev => SplitChoice::Dev,
            SplitArg::Test => SplitChoice::Test,
            SplitArg::All => SplitChoice::All,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StageArg {
    Raw,
    Calibrated,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Raw => Stage::Raw,
            StageArg::Calibrated => Stage::Calibrated,
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen(a) => {
            let mut cfg = load_run_config(a.config.as_deref())?;
            if let Some(seed) = a.seed {
                cfg.gen.seed = seed;
            }
            commands::gen(&cfg, &a.out, &a.out_dir)
        }
        Command::Train(a) => {
            let mut cfg = load_run_config(a.config.as_deref())?;
            if let Some(seed) = a.seed {
                cfg.train.seed = seed;
            }
            if let Some(epochs) = a.epochs {
                cfg.train.epochs = epochs;
            }
            if let Some(lr) = a.lr {
                cfg.train.learning_rate = lr;
            }
            if let Some(batch) = a.batch_size {
                cfg.train.batch_size = batch;
            }
            let overrides = ModelOverrides {
                qlsc_on: a.qlsc.map(|t| t == Toggle::On),
                k: a.k,
                m: a.m,
            };
            overrides.apply(&mut cfg.model)?;
            commands::train_cmd(&mut cfg, &a.data, &a.out, &a.out_dir)
        }
        Command::Eval(a) => commands::eval(
            &a.ckpt,
            &a.data,
            a.report.as_deref(),
            &a.out_dir,
            a.split.into(),
            a.stage.into(),
        ),
        Command::AblateK(a) => {
            let mut cfg = load_run_config(a.config.as_deref())?;
            if let Some(seed) = a.seed {
                cfg.train.seed = seed;
            }
            commands::ablate_k_cmd(&cfg, &a.data, &a.ks, a.report.as_deref(), &a.out_dir)
        }
        Command::AblateSeed(a) => {
            let cfg = load_run_config(a.config.as_deref())?;
            commands::ablate_seed_cmd(
                &cfg,
                &a.data,
                &a.seeds,
                a.repeats,
                a.report.as_deref(),
                &a.out_dir,
            )
        }
        Command::Gradcheck(a) => commands::gradcheck(a.seed, a.h, a.threshold),
        Command::Pca(a) => {
            commands::pca(&a.ckpt, &a.data, &a.out_dir, a.split.into(), a.stage.into())
        }
        Command::ImportSquad(a) => commands::import_squad(&a.input, &a.out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version print to stdout and are not failures;
            // real usage errors print to the error stream.
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
