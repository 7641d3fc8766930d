//! Command-line front ends for the engine: the session server, a text REPL and the
//! experiment runner.

pub mod experiment;
pub mod repl;
pub mod server;

use std::path::Path;

use anyhow::Context;
use nlbim_core::config::EngineConfig;
use nlbim_core::gateway::MockScript;
use nlbim_core::orchestrator::Engine;

/// Reads the config (defaults when `None`) and applies a `--mock-script` override.
pub fn load_config(config: Option<&Path>, mock_script: Option<&Path>) -> anyhow::Result<EngineConfig> {
    let mut cfg = match config {
        Some(p) => EngineConfig::load(p)?,
        None => EngineConfig::default(),
    };
    if let Some(p) = mock_script {
        cfg.mock_script = Some(p.to_path_buf());
    }
    Ok(cfg)
}

/// Engine for `cfg`. Without a mock script or a config file the bundled dialogue script is
/// used, so the tools work offline by default.
pub fn build_engine(cfg: &EngineConfig, has_config_file: bool) -> anyhow::Result<Engine> {
    let engine = Engine::from_config(cfg).context("building engine")?;
    if cfg.mock_script.is_none() && !has_config_file {
        let script = MockScript::from_json(nlbim_core::orchestrator::DIALOGUE_SCRIPT)?;
        engine.gateway.register_script(script)?;
    }
    Ok(engine)
}
