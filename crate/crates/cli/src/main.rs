//! `binorm`: train, evaluate, export and serve binary normalized networks.

mod bench;
mod error;
mod inspect;
mod memory;
mod serve;
mod setup;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use error::{CliError, CliResult};

#[global_allocator]
static ALLOC: memory::Counting = memory::Counting;

#[derive(Parser)]
#[command(name = "binorm", version, about = "Binary normalized networks: train, export and run 1-bit models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads. Every command currently runs on one thread.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, streaming a JSONL report and writing a checkpoint and packed export.
    Train(TrainArgs),
    /// Loss, accuracy and perplexity of a checkpoint or packed model.
    Eval(EvalArgs),
    /// Convert a float checkpoint into a packed 1-bit model file.
    Export(ExportArgs),
    /// Run a packed model on an input file.
    Infer(InferArgs),
    /// Per-layer and total parameter counts.
    CountParams(CountArgs),
    /// Finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
    /// Float versus packed forward latency and peak memory.
    Bench(BenchArgs),
}

#[derive(Args)]
pub struct TrainArgs {
    /// Run or model config file, or a preset name.
    #[arg(long)]
    config: String,
    /// Dataset file or `synthetic:images,...` / `synthetic:tokens,...` / `synthetic:periodic,...`.
    #[arg(long)]
    data: String,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Peak learning rate; the schedule floor scales with it.
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
pub struct EvalArgs {
    /// Checkpoint or packed model file.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: String,
    /// Seed for synthetic data.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
}

#[derive(Args)]
pub struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
pub struct InferArgs {
    /// Packed model file.
    #[arg(long)]
    model: PathBuf,
    /// Dataset file, or text with one whitespace-separated token sequence per line.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args)]
struct CountArgs {
    #[arg(long)]
    config: String,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long, default_value = "tiny-bcvnn")]
    config: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, default_value_t = 20)]
    iters: usize,
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    if cli.threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    if cli.threads > 1 {
        log::info!("--threads {} requested; running single-threaded", cli.threads);
    }
    match &cli.command {
        Command::Train(a) => train::run(a, cli.json),
        Command::Eval(a) => serve::eval(a, cli.json),
        Command::Export(a) => serve::export(a, cli.json),
        Command::Infer(a) => serve::infer_cmd(a, cli.json),
        Command::CountParams(a) => inspect::count(&a.config, cli.json),
        Command::Gradcheck(a) => inspect::gradcheck(a.seed, cli.json),
        Command::Bench(a) => bench::run(a, cli.json),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BINORM_LOG", "error")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
