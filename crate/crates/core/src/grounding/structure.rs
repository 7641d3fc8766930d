use serde::{Deserialize, Serialize};

use super::matcher::{MatchMethod, MatchResult, Matcher};
use super::validate::{validate_payload, StructuredPayload, Violation};
use super::GroundingError;
use crate::gateway::{ChatMessage, ChatRequest, Recorder, ResponseHint};
use crate::kernel::{Material, WallDetailSpec};
use crate::nlu::TaskFrame;

/// The schema sentence every structuring prompt carries, word for word.
pub const SCHEMA_INSTRUCTION: &str = "Return in JSON format with 'wall_detail_name' and each layer with 'material', 'layer_type', 'thermal_conductivity' (W/m·K), and 'thickness' (mm), with exact values without units, and in order of exterior to interior layer.";

/// Default number of repair requests after the first structuring call.
pub const DEFAULT_REPAIR_BUDGET: u32 = 2;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StructuringMode {
    /// Matching and structuring in one request that lists the library vocabulary.
    #[default]
    Fused,
    /// Structuring of an already grounded frame, without the library listing.
    Split,
}

impl StructuringMode {
    pub fn as_str(self) -> &'static str {
        match self {
            StructuringMode::Fused => "fused",
            StructuringMode::Split => "split",
        }
    }
}

pub fn build_structuring_prompt(
    frame: &TaskFrame,
    mode: StructuringMode,
    library: &[Material],
) -> Result<ChatRequest, GroundingError> {
    if !frame.is_ready() {
        return Err(GroundingError::FrameNotReady(frame.missing.iter().cloned().collect()));
    }
    let mut system = String::from(
        "You are an architectural design assistant that turns a design request into a wall detail \
         for a BIM authoring tool. Layer types are structure, insulation, finish, membrane or substrate; \
         the load-bearing layer has layer_type 'structure'.\n",
    );
    if mode == StructuringMode::Fused {
        system.push_str(
            "Match every material in the request to the closest name in this material library and use \
             the library name exactly; keep a material's own name only when nothing in the library fits:\n",
        );
        for m in library {
            system.push_str(&format!("- {} ({}, {} W/m·K)\n", m.name, m.default_layer_type, m.thermal_conductivity));
        }
    }
    system.push_str(SCHEMA_INSTRUCTION);

    let mut user = format!("Request: {}\n", frame.source_utterance);
    if !frame.slots.is_empty() {
        user.push_str(&format!("Design information:\n{}\n", frame.describe_slots()));
    }
    let mut req = ChatRequest::new("structure", system, user.trim_end().to_string());
    req.response_hint = ResponseHint::JsonObject;
    req.tags.insert("task".into(), frame.task.label().into());
    req.tags.insert("mode".into(), mode.as_str().into());
    Ok(req)
}

/// Appends failed check messages to a structuring request so the next attempt can address them.
pub fn with_check_feedback(base: &ChatRequest, failures: &[String]) -> ChatRequest {
    let mut req = base.clone();
    if failures.is_empty() {
        return req;
    }
    let mut note = String::from("\n\nThe previous wall detail failed these requirements:\n");
    for f in failures {
        note.push_str(&format!("- {f}\n"));
    }
    note.push_str("Produce a revised wall detail that satisfies them.");
    if let Some(first) = req.messages.first_mut() {
        first.content.push_str(&note);
    }
    req.tags.insert("feedback".into(), "check".into());
    req
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairState {
    pub attempt: u32,
    pub budget: u32,
    /// Payloads that triggered a repair, oldest first.
    pub history: Vec<StructuredPayload>,
}

impl RepairState {
    pub fn new(budget: u32) -> Self {
        Self {
            attempt: 0,
            budget,
            history: Vec::new(),
        }
    }
}

/// Builds the follow-up request for an invalid payload: the original prompt, the rejected
/// reply, and the enumerated violations.
pub fn repair(
    state: &mut RepairState,
    previous: &StructuredPayload,
    base: &ChatRequest,
) -> Result<ChatRequest, GroundingError> {
    if state.attempt >= state.budget {
        return Err(GroundingError::Exhausted {
            calls: state.attempt + 1,
            violations: previous.violations.clone(),
        });
    }
    let mut req = base.clone();
    req.messages.push(ChatMessage::assistant(previous.raw.clone()));
    let mut note = String::from("That reply is not valid. Fix these problems:\n");
    for v in &previous.violations {
        note.push_str(&format!("- {v}\n"));
    }
    note.push_str(SCHEMA_INSTRUCTION);
    req.messages.push(ChatMessage::user(note));
    state.attempt += 1;
    state.history.push(previous.clone());
    req.tags.insert("repair".into(), state.attempt.to_string());
    Ok(req)
}

/// Result of a structuring call sequence that ended with a valid, canonicalized spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Structured {
    pub spec: WallDetailSpec,
    /// One entry per layer material.
    pub matches: Vec<MatchResult>,
    /// Every payload received, the valid one last.
    pub payloads: Vec<StructuredPayload>,
}

impl Structured {
    /// Layer materials the matcher could not place in the library.
    pub fn unmatched(&self) -> Vec<&str> {
        self.matches
            .iter()
            .filter(|m| m.method == MatchMethod::None)
            .map(|m| m.query.as_str())
            .collect()
    }
}

/// Sends `base`, validates the reply, and repairs until valid or the budget runs out.
/// Makes at most `budget + 1` calls.
pub fn structure_spec(
    llm: &mut Recorder<'_>,
    base: &ChatRequest,
    repair_budget: u32,
    matcher: &Matcher,
    library: &[Material],
) -> Result<Structured, GroundingError> {
    let mut state = RepairState::new(repair_budget);
    let mut req = base.clone();
    let mut payloads = Vec::new();
    loop {
        let reply = llm.complete(req)?;
        let payload = validate_payload(&reply.content);
        payloads.push(payload.clone());
        if let Some(spec) = payload.parsed {
            let (spec, matches) = canonicalize_spec(spec, matcher, library);
            return Ok(Structured { spec, matches, payloads });
        }
        req = repair(&mut state, &payload, base)?;
    }
}

/// Replaces every layer material the matcher recognizes by its canonical library name.
pub fn canonicalize_spec(
    mut spec: WallDetailSpec,
    matcher: &Matcher,
    library: &[Material],
) -> (WallDetailSpec, Vec<MatchResult>) {
    let mut matches = Vec::with_capacity(spec.layers.len());
    for layer in &mut spec.layers {
        let m = matcher.match_term(&layer.material, library);
        if let Some(name) = &m.canonical {
            layer.material = name.clone();
        }
        matches.push(m);
    }
    (spec, matches)
}

/// Violations rendered one per line, for traces and error messages.
pub fn describe_violations(violations: &[Violation]) -> String {
    violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}
