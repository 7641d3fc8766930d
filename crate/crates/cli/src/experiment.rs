use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use nlbim_core::gateway::MockScript;
use nlbim_core::harness::{
    compute_accuracy, experiment_script, parse_codes, run_experiment, ExperimentConfig, Executor, PromptCode,
    ResultsTable,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    Mock,
    Live,
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    /// Comma-separated prompt codes.
    #[arg(long, default_value = "CE1,CE2,CI1,CI2,TE1,TE2,TI1,TI2")]
    pub codes: String,
    /// Runs per code.
    #[arg(long, default_value_t = 30)]
    pub runs: u32,
    #[arg(long, value_enum, default_value_t = BackendKind::Mock)]
    pub backend: BackendKind,
    /// Base seed; each run's session seed is derived from it, the code and the run index.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Keep the first executed detail of every run instead of looping until compliant.
    #[arg(long)]
    pub no_check: bool,
    /// Worker threads; 1 runs sequentially, 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
    /// Continue an interrupted run in the same output directory.
    #[arg(long)]
    pub resume: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Engine config: budgets, rule parameters and, for live runs, backend settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Mock script replacing the bundled experiment script.
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    /// Required for live runs, which make paid model calls.
    #[arg(long)]
    pub confirm_live: bool,
}

pub fn run(args: &ExperimentArgs) -> anyhow::Result<ResultsTable> {
    let codes: Vec<PromptCode> = parse_codes(&args.codes)?;
    if codes.is_empty() {
        bail!("--codes names no prompt code");
    }
    if args.runs == 0 {
        bail!("--runs must be at least 1");
    }
    let cfg = crate::load_config(args.config.as_deref(), None)?;
    let mut engine = nlbim_core::orchestrator::Engine::from_config(&cfg).context("building engine")?;
    engine.settings.check_enabled = !args.no_check;
    match args.backend {
        BackendKind::Mock => {
            let script = match &args.mock_script {
                Some(p) => MockScript::load(p)?,
                None => experiment_script(),
            };
            engine.gateway.register_script(script)?;
        }
        BackendKind::Live => {
            if args.mock_script.is_some() {
                bail!("--mock-script cannot be combined with --backend live");
            }
            if !args.confirm_live {
                let runs = codes.len() as u64 * args.runs as u64;
                let attempts = if args.no_check { 1 } else { cfg.retry_budget };
                // classify, extract, fill, then every structuring call of every attempt
                let calls = runs * (3 + attempts as u64 * (cfg.repair_budget as u64 + 1));
                bail!(
                    "a live experiment makes {runs} runs and up to {calls} paid model calls; \
                     pass --confirm-live to proceed"
                );
            }
            if engine.gateway.is_mock() {
                bail!("the config selects a mock script; remove mock_script for a live run");
            }
        }
    }

    let mut exp = ExperimentConfig::new(&args.out);
    exp.codes = codes;
    exp.runs = args.runs;
    exp.seed = args.seed;
    exp.resume = args.resume;
    exp.executor = Executor::for_jobs(args.jobs);
    exp.jobs = args.jobs;
    exp.record_traces = args.backend == BackendKind::Live;

    let started = Instant::now();
    let records = run_experiment(&Arc::new(engine), &exp)?;
    let table = compute_accuracy(&records)?;
    let summary = table.write_summary(&args.out)?;
    tracing::info!(
        runs = records.len(),
        elapsed_ms = started.elapsed().as_millis() as u64,
        summary = %summary.display(),
        "experiment finished"
    );
    Ok(table)
}
