//! `rym`: run pipeline stages from the command line.
//!
//! Exit codes: 0 success, 1 other failure, 2 invalid config or usage,
//! 3 missing stage dependency, 4 file I/O, 5 generation/embedding service,
//! 6 run directory locked.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rym::pipeline::fixtures::{write_fixtures, FixtureSpec};
use rym::pipeline::{validate_config, Run, RunOptions, Stage};
use rym::Error;

#[derive(Parser)]
#[command(name = "rym", version, about = "EEG affect decoding to affect-conditioned music and video")]
struct Cli {
    /// More log output (repeat for trace).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long, short)]
    config: PathBuf,
    /// Defaults to a digest of the config file.
    #[arg(long)]
    run_id: Option<String>,
    /// Use mock generation and embedding clients.
    #[arg(long)]
    mock: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Load recordings, keypress traces and session materials.
    Ingest(RunArgs),
    /// Train the per-session contrastive encoders.
    Train(RunArgs),
    /// Leave-one-subject-out KNN decoding.
    Decode(RunArgs),
    /// Build the smoothed affect timeline and its permuted control.
    Timeline(RunArgs),
    /// Affect-conditioned prompt per segment.
    Prompts(RunArgs),
    /// Request music and images per segment.
    Generate(RunArgs),
    /// Crossfade the soundtrack and write the video manifest.
    Assemble(RunArgs),
    /// Attributes, correlations, distances and keypress statistics.
    Evaluate(RunArgs),
    /// Summary and deliverables.
    Report(RunArgs),
    /// Every stage in order.
    RunAll(RunArgs),
    /// Check a config file and print it with defaults filled in.
    Validate {
        #[arg(long, short)]
        config: PathBuf,
    },
    /// Write synthetic inputs and a mock-mode config.
    Fixtures {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 9)]
        sessions: usize,
        #[arg(long, default_value_t = 60.0)]
        duration_s: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        iterations: usize,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) => 2,
        Error::MissingDependency { .. } => 3,
        Error::Io { .. } => 4,
        Error::Client { .. } => 5,
        Error::Locked(_) => 6,
        _ => 1,
    }
}

fn open(args: &RunArgs) -> Result<Run, Error> {
    let config = validate_config(&args.config)?;
    Run::open(
        config,
        RunOptions {
            run_id: args.run_id.clone(),
            force_mock: args.mock,
            fault: None,
        },
    )
}

fn run_stages(args: &RunArgs, stages: &[Stage]) -> Result<(), Error> {
    let mut run = open(args)?;
    for &stage in stages {
        let paths: Vec<String> = run.run_stage(stage)?.outputs.iter().map(|o| o.path.clone()).collect();
        for p in paths {
            println!("{}", run.dir().join(p).display());
        }
    }
    Ok(())
}

fn execute(command: Command) -> Result<(), Error> {
    let single = |args: RunArgs, stage: Stage| run_stages(&args, &[stage]);
    match command {
        Command::Ingest(a) => single(a, Stage::Ingest),
        Command::Train(a) => single(a, Stage::Train),
        Command::Decode(a) => single(a, Stage::Decode),
        Command::Timeline(a) => single(a, Stage::Timeline),
        Command::Prompts(a) => single(a, Stage::Prompts),
        Command::Generate(a) => single(a, Stage::Generate),
        Command::Assemble(a) => single(a, Stage::Assemble),
        Command::Evaluate(a) => single(a, Stage::Evaluate),
        Command::Report(a) => single(a, Stage::Report),
        Command::RunAll(a) => {
            let mut run = open(&a)?;
            run.run_all()?;
            println!("{}", run.dir().join(Stage::Report.primary_artifact()).display());
            Ok(())
        }
        Command::Validate { config } => {
            let loaded = validate_config(&config)?;
            let text = toml::to_string_pretty(&loaded.config)
                .map_err(|e| Error::Config(format!("cannot render config: {e}")))?;
            print!("{text}");
            Ok(())
        }
        Command::Fixtures {
            out,
            sessions,
            duration_s,
            seed,
            iterations,
        } => {
            let path = write_fixtures(
                &out,
                &FixtureSpec {
                    n_sessions: sessions,
                    duration_s,
                    seed,
                    encoder_iterations: iterations,
                    n_viewers: sessions.min(FixtureSpec::default().n_viewers),
                    ..FixtureSpec::default()
                },
            )?;
            println!("{}", path.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
