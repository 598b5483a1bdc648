use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use snap_core::classifier::TrainConfig;
use snap_core::commands::{
    cmd_analyze, cmd_eval, cmd_experiment, cmd_fit, cmd_project, cmd_score, cmd_sweep, cmd_synth, entanglement_text,
    ExperimentArgs, FitArgs, SweepArgs, SynthArgs,
};
use snap_core::metrics::DEFAULT_THRESHOLD;
use snap_core::subspace::DEFAULT_K;
use snap_core::Result;

/// Speaker-subspace nulling for synthetic-speech detection.
#[derive(Parser)]
#[command(name = "snap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct TrainFlags {
    /// Gradient-descent step size.
    #[arg(long, default_value_t = 0.1)]
    lr: f64,
    #[arg(long, default_value_t = 500)]
    epochs: usize,
    /// L2 penalty on the weights.
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    /// Early-stopping patience in epochs on validation loss (0 disables).
    #[arg(long, default_value_t = 20)]
    patience: usize,
}

impl TrainFlags {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            epochs: self.epochs,
            l2_penalty: self.l2,
            seed,
            early_stop_patience: (self.patience > 0).then_some(self.patience),
            ..TrainConfig::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit the speaker subspace and classifier on a labeled set.
    Fit {
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Fraction of each (label, attack) stratum used for training.
        #[arg(long, default_value_t = 0.8)]
        split: f64,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Write the speaker-nulled embeddings of a set.
    Project {
        #[arg(short, long)]
        model: PathBuf,
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Score a set with a fitted model.
    Score {
        #[arg(short, long)]
        model: PathBuf,
        input: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// EER and thresholded metrics of a score table.
    Eval {
        scores: PathBuf,
        /// JSON report path.
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f64,
    },
    /// Generate a synthetic labeled set.
    Synth {
        /// TOML generator config; defaults apply to missing keys.
        #[arg(short, long)]
        config: Option<PathBuf>,
        /// Overrides the config's seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(short, long)]
        out: PathBuf,
        /// Ground-truth JSON (default: <out>.truth.json).
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Speaker and class silhouettes, before and after nulling.
    Analyze {
        input: PathBuf,
        #[arg(short, long)]
        model: Option<PathBuf>,
        /// Data file for plotting.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// EER against the number of training speakers on synthetic data.
    Sweep {
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_delimiter = ',', default_value = "2,4,8,16")]
        counts: Vec<usize>,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Held-out-speaker silhouettes and EERs on synthetic data.
    Experiment {
        #[arg(short, long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[command(flatten)]
        train: TrainFlags,
        #[arg(short, long)]
        out: PathBuf,
    },
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Fit {
            input,
            out,
            k,
            seed,
            split,
            train,
        } => {
            let outcome = cmd_fit(&FitArgs {
                input,
                model_out: out,
                k,
                split,
                seed,
                train: train.config(seed),
            })?;
            print!("{}", outcome.summary());
        }
        Command::Project { model, input, out } => {
            cmd_project(&model, &input, &out)?;
        }
        Command::Score { model, input, out } => {
            let scored = cmd_score(&model, &input, &out)?;
            println!("scored {} records", scored.len());
        }
        Command::Eval { scores, out, threshold } => {
            print!("{}", cmd_eval(&scores, threshold, &out)?.to_text());
        }
        Command::Synth {
            config,
            seed,
            out,
            truth,
        } => {
            let outcome = cmd_synth(&SynthArgs {
                config,
                seed,
                out,
                truth_out: truth,
            })?;
            println!(
                "wrote {} records (seed {}); ground truth in {}",
                outcome.n_records,
                outcome.config.seed,
                outcome.truth_path.display()
            );
        }
        Command::Analyze { input, model, out } => {
            print!("{}", entanglement_text(&cmd_analyze(&input, model.as_deref(), &out)?));
        }
        Command::Sweep {
            config,
            seed,
            counts,
            k,
            train,
            out,
        } => {
            let table = cmd_sweep(&SweepArgs {
                config,
                seed,
                counts,
                k,
                train: train.config(42),
                out,
            })?;
            print!("{}", table.to_text());
        }
        Command::Experiment {
            config,
            seed,
            k,
            train,
            out,
        } => {
            let result = cmd_experiment(&ExperimentArgs {
                config,
                seed,
                k,
                train: train.config(42),
                out,
            })?;
            print!("{}", result.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("snap: {e}");
            ExitCode::FAILURE
        }
    }
}
