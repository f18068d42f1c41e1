mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::EXIT_USAGE;

#[derive(Parser, Debug)]
#[command(name = "qpadapt", version, about = "QP-adaptive in-loop filter experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Encode images at each QP and store (original, recon) patch pairs.
    GenData(GenDataArgs),
    /// Train one strategy and write checkpoints plus loss logs.
    Train(TrainArgs),
    /// Evaluate one checkpoint over a QP list.
    Eval(EvalArgs),
    /// Evaluate several checkpoints over a QP list.
    Sweep(EvalArgs),
    /// Sweep several checkpoints and print a summary table.
    Compare(EvalArgs),
    /// Run the spectral filter and noise power checks.
    Oracle(OracleArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub seed: u64,
    /// Number of synthetic images.
    #[arg(long, default_value_t = 32)]
    pub count: usize,
    /// Side of each synthetic image.
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    /// Read `*.pgm` images from this directory instead of synthesizing.
    #[arg(long)]
    pub images: Option<PathBuf>,
    #[arg(long, default_value = "22,27,32,37")]
    pub qps: String,
    #[arg(long, default_value_t = 64)]
    pub patch: usize,
    /// Images held out for validation (taken from the end).
    #[arg(long, default_value_t = 0)]
    pub val_count: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Default)]
pub struct TrainArgs {
    /// `key = value` file; flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// dcad, vrcnn, liu or tucodec.
    #[arg(long)]
    pub model: Option<String>,
    /// Width of liu or block count of tucodec.
    #[arg(long)]
    pub model_size: Option<usize>,
    #[arg(long)]
    pub mode: Option<String>,
    /// global, separate, proposed or qpmap.
    #[arg(long)]
    pub strategy: Option<String>,
    #[arg(long)]
    pub qps: Option<String>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// f32 or f64.
    #[arg(long)]
    pub precision: Option<String>,
    /// Train on random square crops of this side.
    #[arg(long)]
    pub crop: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long = "checkpoint", required = true, num_args = 1..)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Defaults to every QP in the dataset.
    #[arg(long)]
    pub qps: Option<String>,
    /// Expected model mode; a vanilla checkpoint may be loaded as qp-adaptive.
    #[arg(long)]
    pub mode: Option<String>,
    /// train or val; defaults to val when present.
    #[arg(long)]
    pub split: Option<String>,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[arg(long, default_value_t = 64)]
    pub bins: usize,
    #[arg(long)]
    pub seed: u64,
    /// Random spectra in the optimality check.
    #[arg(long, default_value_t = 20)]
    pub spectra: usize,
    /// Perturbations per spectrum.
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    /// Coefficients per QP in the noise power scan.
    #[arg(long, default_value_t = 1 << 20)]
    pub coefficients: usize,
    /// Report a spectrum with zero noise.
    #[arg(long)]
    pub zero_noise: bool,
    /// Per-bin report CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Eval(a) => commands::eval(&a, false),
        Command::Sweep(a) => commands::eval(&a, true),
        Command::Compare(a) => commands::compare(&a),
        Command::Oracle(a) => commands::oracle(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qpadapt: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
