//! Experiment harness: config-driven runs with persisted bands, reports and
//! provenance, plus plotting and listing of past runs.

mod config;
mod plot;
mod runner;

use anyhow::Context;
use clap::{Parser, Subcommand};
use config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "picprop",
    about = "Confidence-interval propagation experiments for PDE benchmarks",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a run described by a TOML config file.
    Run {
        config: PathBuf,
        /// Worker threads for parallel jobs (default: all cores). Results do
        /// not depend on this.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Render SVG plots from a run directory.
    Plot { run_dir: PathBuf },
    /// List run directories under the output root.
    List {
        /// Output root (defaults to PICPROP_OUT or ./runs).
        #[arg(long)]
        root: Option<PathBuf>,
    },
    /// Validate a config file and exit.
    ValidateConfig { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn load_config(path: &PathBuf) -> anyhow::Result<(RunConfig, String)> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let cfg = RunConfig::parse(&text)
        .map_err(|e| anyhow::anyhow!("parsing {}: {e}", path.display()))?;
    Ok((cfg, text))
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Run { config, workers } => {
            if let Some(n) = workers {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .context("configuring the worker pool")?;
            }
            let (cfg, text) = load_config(&config)?;
            let errors = cfg.validate();
            if !errors.is_empty() {
                for e in &errors {
                    eprintln!("config error: {e}");
                }
                return Ok(ExitCode::from(2));
            }
            let stem = config
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("run")
                .to_string();
            let dir = runner::run(&cfg, &text, &stem)?;
            println!("{}", dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Plot { run_dir } => {
            let written = runner::plot(&run_dir)?;
            for p in written {
                println!("{}", p.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::List { root } => {
            let root = root
                .or_else(|| std::env::var("PICPROP_OUT").ok().map(PathBuf::from))
                .unwrap_or_else(|| PathBuf::from("runs"));
            for row in runner::list_runs(&root)? {
                println!("{row}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::ValidateConfig { config } => {
            let (cfg, _) = load_config(&config)?;
            let errors = cfg.validate();
            if errors.is_empty() {
                println!("ok");
                Ok(ExitCode::SUCCESS)
            } else {
                for e in &errors {
                    eprintln!("config error: {e}");
                }
                Ok(ExitCode::from(2))
            }
        }
    }
}
