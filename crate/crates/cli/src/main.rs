use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use msmarl::harness::{self, Config};

#[derive(Parser)]
#[command(name = "msmarl", version, about = "Master-slave multi-agent policy gradient experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train under a TOML config; writes a run directory.
    Train {
        config: PathBuf,
        /// Continue from the newest checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Greedy evaluation of a checkpoint.
    Eval {
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        /// Evaluation seed; defaults to the run's trainer seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Plays one episode and writes a JSON trace.
    Rollout {
        checkpoint: PathBuf,
        #[arg(long)]
        dump: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Sample actions instead of acting greedily.
        #[arg(long)]
        sample: bool,
    },
    /// Compares tape gradients with central differences.
    Gradcheck {
        config: PathBuf,
        #[arg(long, default_value_t = 20)]
        params: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Merges metrics files into one long-format CSV table.
    ExportCurves {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> msmarl::Result<()> {
    match cli.command {
        Command::Train { config, resume } => {
            let config = Config::load(&config)?;
            let summary = harness::train(&config, resume)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Eval {
            checkpoint,
            episodes,
            seed,
        } => {
            let summary = harness::eval_checkpoint(&checkpoint, episodes, seed)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Rollout {
            checkpoint,
            dump,
            seed,
            sample,
        } => {
            let trace = harness::dump_rollout(&checkpoint, seed, sample)?;
            harness::write_rollout_dump(&trace, &dump)?;
            println!(
                "{} steps, outcome {:?}, written to {}",
                trace.steps.len(),
                trace.outcome,
                dump.display()
            );
        }
        Command::Gradcheck {
            config,
            params,
            tolerance,
        } => {
            let config = Config::load(&config)?;
            let report = harness::gradcheck_config(&config, params, tolerance)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::ExportCurves { metrics, out } => {
            let paths: Vec<&std::path::Path> = metrics.iter().map(PathBuf::as_path).collect();
            match out {
                Some(path) => {
                    let mut file = std::fs::File::create(&path).map_err(|e| msmarl::Error::Io {
                        path: path.clone(),
                        source: e,
                    })?;
                    harness::export_curves(&paths, &mut file)?;
                    file.flush().map_err(|e| msmarl::Error::Io { path, source: e })?;
                }
                None => {
                    harness::export_curves(&paths, &mut std::io::stdout().lock())?;
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
