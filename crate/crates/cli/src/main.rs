use std::io;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use nlbim_cli::experiment::{self, ExperimentArgs};
use nlbim_cli::{build_engine, load_config, repl, server};
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "nlbim", version, about = "Natural-language wall detailing over an embedded BIM kernel")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Serve the session API and event socket.
    Serve {
        #[arg(long)]
        config: PathBuf,
        /// Use this mock script instead of the configured backend.
        #[arg(long)]
        mock_script: Option<PathBuf>,
        /// Overrides `server.bind` from the config.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Text-mode single session.
    Repl {
        /// Without a config the bundled dialogue script answers.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        mock_script: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Run the prompt-code experiment and write records.csv, spec files and summary.md.
    RunExperiment(ExperimentArgs),
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(io::stderr)
        .init();
    match Cli::parse().command {
        Command::Serve {
            config,
            mock_script,
            bind,
        } => {
            let cfg = load_config(Some(&config), mock_script.as_deref())?;
            let engine = Arc::new(build_engine(&cfg, true)?);
            let bind = bind.unwrap_or_else(|| cfg.server.bind.clone());
            tokio::runtime::Runtime::new()?.block_on(server::serve(engine, &bind, cfg.server.static_dir.clone()))
        }
        Command::Repl {
            config,
            mock_script,
            seed,
        } => {
            let cfg = load_config(config.as_deref(), mock_script.as_deref())?;
            let engine = Arc::new(build_engine(&cfg, config.is_some())?);
            repl::run(engine, seed, io::stdin().lock(), io::stdout().lock())
        }
        Command::RunExperiment(args) => {
            let table = experiment::run(&args)?;
            print!("{}", table.to_markdown());
            Ok(())
        }
    }
}
