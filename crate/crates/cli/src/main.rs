//! `ossod`: config-driven entry points for the open-scene SSOD laboratory.
//!
//! Exit codes: 0 success, 2 configuration error, 1 anything else.

mod chart;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ossod", version, about = "Open-scene semi-supervised detection laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to the experiment config (JSON).
    #[arg(long, short)]
    config: PathBuf,
    /// Config overrides of the form key.path=value (values parsed as JSON).
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> anyhow::Result<ossod_core::config::ExperimentConfig> {
        Ok(ossod_core::config::ExperimentConfig::load(&self.config, &self.overrides)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset directory.
    GenData(ConfigArgs),
    /// Train (or resume) a run; writes metrics.jsonl and state.ckpt.
    Train(ConfigArgs),
    /// Evaluate a checkpoint's teacher on the test pool.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        /// Checkpoint to evaluate (default: <output_dir>/state.ckpt).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Feed ground truth back as detections to validate the metric path.
        #[arg(long)]
        oracle: bool,
    },
    /// Train and evaluate the six component-ablation rows.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Number of seeds per row (seed, seed+1, ...).
        #[arg(long, default_value_t = 1)]
        seeds: usize,
    },
    /// Threshold sensitivity sweep (one run per grid point).
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Upper-threshold grid (tau_low held at the config value).
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 0.6, 0.7, 0.8, 0.9])]
        tau_up: Vec<f64>,
        /// Lower-threshold grid (tau_up held at the config value).
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.01, 0.03, 0.05, 0.08, 0.1])]
        tau_low: Vec<f64>,
    },
    /// Render figures from metrics and report files.
    Plot(ConfigArgs),
}

fn run() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::GenData(args) => commands::gen_data(&args.load()?),
        Command::Train(args) => commands::train(&args.load()?),
        Command::Eval { config, checkpoint, oracle } => {
            commands::eval(&config.load()?, checkpoint.as_deref(), *oracle)
        }
        Command::Ablate { config, seeds } => commands::ablate(&config.load()?, *seeds),
        Command::Sweep { config, tau_up, tau_low } => {
            commands::sweep(&config.load()?, tau_up, tau_low)
        }
        Command::Plot(args) => commands::plot(&args.load()?),
    }
}

fn main() -> ExitCode {
    // die quietly when stdout is closed early (e.g. piped into `head`)
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            let config_error = err
                .chain()
                .any(|c| matches!(c.downcast_ref::<ossod_core::Error>(), Some(ossod_core::Error::Config(_))));
            if config_error {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
