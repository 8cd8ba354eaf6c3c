use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::Parser;
use ppba_cli::commands::{self, Completion, Failure};
use ppba_cli::config::{Mode, Overrides, RunConfig};
use ppba_core::engine::ExecutionMode;

/// Population-based augmentation search for point-cloud detectors.
#[derive(Parser, Debug)]
#[command(name = "ppba", version)]
struct Args {
    /// What to run; overrides `mode` in the config file.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Commit trials in a fixed order (byte-identical logs).
    #[arg(long, conflicts_with = "throughput")]
    deterministic: bool,
    /// Commit trials as they finish.
    #[arg(long)]
    throughput: bool,
    /// Train through an external worker process, e.g. "python worker.py".
    #[arg(long)]
    worker_cmd: Option<String>,
    /// Training-step budget for random search and benchmarks.
    #[arg(long)]
    budget_steps: Option<u64>,
    /// Continue an interrupted search in `--out`.
    #[arg(long)]
    resume: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PPBA_LOG", "warn")).init();
    let args = Args::parse();
    let execution = match (args.deterministic, args.throughput) {
        (true, _) => Some(ExecutionMode::Deterministic),
        (_, true) => Some(ExecutionMode::Throughput),
        _ => None,
    };
    let overrides = Overrides {
        mode: args.mode,
        seed: args.seed,
        out: args.out,
        execution,
        worker_cmd: args.worker_cmd,
        budget_steps: args.budget_steps,
    };
    let config = match RunConfig::load(args.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => return fail(&Failure::User(e.to_string())),
    };
    if args.resume && !matches!(config.mode, Mode::Ppba | Mode::Pba) {
        return fail(&Failure::User("--resume only applies to ppba and pba searches".into()));
    }

    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    if let Err(e) = ctrlc::set_handler(move || {
        if flag.swap(true, Ordering::SeqCst) {
            std::process::exit(130);
        }
        eprintln!("stopping after the current iteration; press again to abort");
    }) {
        log::warn!("cannot install the interrupt handler: {e}");
    }

    match commands::run(&config, args.resume, stop) {
        Ok(Completion::Done) => ExitCode::SUCCESS,
        Ok(Completion::Interrupted) => ExitCode::from(1),
        Err(f) => fail(&f),
    }
}

fn fail(f: &Failure) -> ExitCode {
    eprintln!("error: {}", f.message());
    ExitCode::from(f.exit_code() as u8)
}
