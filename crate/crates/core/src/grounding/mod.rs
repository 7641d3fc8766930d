//! Match and Structure: ground material vocabulary in the library and obtain a validated wall detail.

mod matcher;
mod structure;
mod validate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::GatewayError;
use crate::kernel::Material;
use crate::nlu::{SlotData, SlotSchema, SlotType, TaskFrame};

pub use matcher::{match_term, similarity, AliasTable, MatchMethod, MatchResult, Matcher, DEFAULT_THRESHOLD};
pub use structure::{
    build_structuring_prompt, canonicalize_spec, describe_violations, repair, structure_spec, with_check_feedback,
    RepairState, Structured, StructuringMode, DEFAULT_REPAIR_BUDGET, SCHEMA_INSTRUCTION,
};
pub use validate::{validate_payload, StructuredPayload, Violation, ViolationCode};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroundingError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("frame is not ready; missing {0:?}")]
    FrameNotReady(Vec<String>),
    #[error("no valid wall detail after {calls} structuring calls: {}", describe_violations(.violations))]
    Exhausted { calls: u32, violations: Vec<Violation> },
    #[error("invalid alias table: {0}")]
    InvalidAliasTable(String),
}

/// A frame term the matcher could not place in the library.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnmatchedTerm {
    pub slot: String,
    pub term: String,
    /// Similarity of the closest canonical name, which fell below the threshold.
    pub best_score: f64,
}

/// Rewrites every material term in the frame to its canonical library name.
///
/// Terms that do not match stay as written and are reported; executing a spec that uses
/// them adds them to the library as unverified materials.
pub fn resolve_frame(
    frame: &TaskFrame,
    schema: &SlotSchema,
    library: &[Material],
    matcher: &Matcher,
) -> (TaskFrame, Vec<UnmatchedTerm>) {
    let mut out = frame.clone();
    let mut report = Vec::new();
    let mut resolve = |slot: &str, term: &mut String| {
        let m = matcher.match_term(term, library);
        match m.canonical {
            Some(name) => *term = name,
            None => report.push(UnmatchedTerm {
                slot: slot.to_string(),
                term: term.clone(),
                best_score: m.score,
            }),
        }
    };
    for value in out.slots.values_mut() {
        let is_material = schema
            .slot(&value.name)
            .is_some_and(|d| d.slot_type == SlotType::Material);
        match &mut value.value {
            SlotData::Text(t) if is_material => resolve(&value.name, t),
            SlotData::Assembly(layers) => {
                for (i, layer) in layers.iter_mut().enumerate() {
                    resolve(&format!("{}[{i}]", value.name), &mut layer.material);
                }
            }
            _ => {}
        }
    }
    (out, report)
}

#[cfg(test)]
mod tests;
