use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tracing_subscriber::EnvFilter;

mod demo;
mod stages;

use stages::{Pipeline, Stage, StageError};

#[derive(Parser, Debug)]
#[command(name = "monostage", version, about = "Build one mixed, loss-masked training set from raw domain corpora")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the mix and train seeds from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Use the offline deterministic rewriter instead of the HTTP backend.
    #[arg(long, global = true)]
    mock_rewriter: bool,
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    Ingest,
    Filter,
    Dedup,
    Unify,
    Compile,
    Train,
    Eval,
    /// Run a single stage by name.
    Run {
        #[arg(long)]
        stage: Stage,
    },
    /// Every stage in order.
    RunAll,
    /// Check a compiled manifest against its shards and the config's mix.
    Verify {
        /// Directory holding manifest.json (default: the compile stage output).
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Print a corpus stats file as a language-by-source table.
    Stats { file: PathBuf },
    /// Write a small bilingual demo corpus and config.
    InitDemo {
        dir: PathBuf,
        #[arg(long, default_value_t = 1000)]
        docs: usize,
    },
}

fn init_logging() {
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info"));
    tracing_subscriber::fmt()
        .json()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            tracing::warn!(error = %e, "could not size the worker pool");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(cli: Cli) -> Result<(), StageError> {
    let stage_list = match &cli.command {
        Command::Stats { file } => {
            let stats = monostage_core::CorpusStats::load(file).map_err(StageError::other)?;
            print!("{}", stats.to_table());
            return Ok(());
        }
        Command::InitDemo { dir, docs } => {
            let cfg = demo::write_demo(dir, *docs).map_err(StageError::other)?;
            println!("demo written; run `monostage --config {} --mock-rewriter run-all`", cfg.display());
            return Ok(());
        }
        Command::Ingest => vec![Stage::Ingest],
        Command::Filter => vec![Stage::Filter],
        Command::Dedup => vec![Stage::Dedup],
        Command::Unify => vec![Stage::Unify],
        Command::Compile => vec![Stage::Compile],
        Command::Train => vec![Stage::Train],
        Command::Eval => vec![Stage::Eval],
        Command::Run { stage } => vec![*stage],
        Command::RunAll => Stage::ALL.to_vec(),
        Command::Verify { .. } => Vec::new(),
    };

    let config = cli
        .config
        .as_deref()
        .ok_or_else(|| StageError::config("--config is required for this command"))?;
    let pipeline = Pipeline::open(config, cli.seed, cli.mock_rewriter)?;

    if let Command::Verify { dir } = &cli.command {
        let report = pipeline.verify(dir.as_deref())?;
        if report.is_ok() {
            println!("verify: ok");
            return Ok(());
        }
        for p in &report.problems {
            println!("verify: {p}");
        }
        return Err(StageError::verify(report.problems.len()));
    }

    for stage in stage_list {
        let summary = pipeline.run_stage(stage)?;
        println!("{stage}: {summary}");
    }
    Ok(())
}
