pub mod compliance;
pub mod config;
pub mod gateway;
pub mod grounding;
pub mod harness;
pub mod kernel;
pub mod nlu;
pub mod orchestrator;
pub mod text;
