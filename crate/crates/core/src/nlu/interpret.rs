use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{
    parse_assembly, parse_length_mm, strip_fences, ContextTurn, FillPolicy, LayerDraft, NluError, Provenance,
    SlotData, SlotDef, SlotSchema, SlotType, SlotValue, TaskClass, TaskFrame,
};
use crate::gateway::{ChatRequest, Recorder, ResponseHint};
use crate::kernel::LayerFunction;
use crate::text::normalize_term;

/// Classifications below this confidence are treated as Unknown.
pub const CONFIDENCE_THRESHOLD: f64 = 0.5;
/// Dialogue turns included in the classification prompt.
pub const CONTEXT_TURNS: usize = 6;

/// Confidence assigned to values the extractor returned but the utterance does not literally contain.
const UNLOCATED_CONFIDENCE: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub task: TaskClass,
    pub confidence: f64,
}

fn classification_instruction() -> String {
    let mut s = String::from(
        "You classify an architect's command for a BIM authoring tool into exactly one design task.\n\
         Tasks:\n",
    );
    for t in TaskClass::SUPPORTED {
        s.push_str(&format!("- {}: {}\n", t.label(), t.description()));
    }
    s.push_str(
        "- Unknown: the command matches none of the tasks above\n\
         Reply with a JSON object {\"task\": <label>, \"confidence\": <number between 0 and 1>} and nothing else.",
    );
    s
}

pub fn classify_task(
    llm: &mut Recorder<'_>,
    utterance: &str,
    context: &[ContextTurn],
) -> Result<Classification, NluError> {
    if utterance.trim().is_empty() {
        return Ok(Classification {
            task: TaskClass::Unknown,
            confidence: 0.0,
        });
    }
    let mut user = String::new();
    let recent = &context[context.len().saturating_sub(CONTEXT_TURNS)..];
    if !recent.is_empty() {
        user.push_str("Recent dialogue:\n");
        for turn in recent {
            user.push_str(&format!("{}: {}\n", turn.speaker, turn.text));
        }
        user.push('\n');
    }
    user.push_str(&format!("Command: {utterance}"));
    let mut req = ChatRequest::new("classify", classification_instruction(), user);
    req.response_hint = ResponseHint::JsonObject;
    req.max_tokens = 64;
    let reply = llm.complete(req)?;
    Ok(parse_classification(&reply.content))
}

/// Maps any model reply onto the closed task set. Anything unrecognized is Unknown with confidence 0.
pub fn parse_classification(reply: &str) -> Classification {
    let unknown = Classification {
        task: TaskClass::Unknown,
        confidence: 0.0,
    };
    let body = strip_fences(reply);
    let (label, confidence) = match serde_json::from_str::<Value>(body) {
        Ok(Value::Object(obj)) => {
            let Some(label) = obj.get("task").and_then(Value::as_str) else {
                return unknown;
            };
            let conf = match obj.get("confidence") {
                None => 1.0,
                Some(v) => match v.as_f64() {
                    Some(c) if c.is_finite() => c.clamp(0.0, 1.0),
                    _ => return unknown,
                },
            };
            (label.to_string(), conf)
        }
        Ok(Value::String(s)) => (s, 1.0),
        Ok(_) => return unknown,
        Err(_) => (body.trim_matches(|c: char| c == '"' || c == '.' || c.is_whitespace()).to_string(), 1.0),
    };
    match TaskClass::from_label(&label) {
        Some(TaskClass::Unknown) | None => unknown,
        Some(_) if confidence < CONFIDENCE_THRESHOLD => Classification {
            task: TaskClass::Unknown,
            confidence,
        },
        Some(task) => Classification { task, confidence },
    }
}

pub(crate) fn describe_schema(schema: &SlotSchema, only: Option<&BTreeSet<String>>) -> String {
    schema
        .slots
        .iter()
        .filter(|s| only.is_none_or(|o| o.contains(&s.name)))
        .map(|s| {
            let ty = match &s.slot_type {
                SlotType::Text => "text".to_string(),
                SlotType::Material => "material name".to_string(),
                SlotType::LengthMm => "length in mm".to_string(),
                SlotType::Enum { options } => format!("one of {}", options.join(" | ")),
                SlotType::Assembly => {
                    "list of layers, exterior to interior, each {\"material\", \"layer_type\", \"thickness\" (mm)}"
                        .to_string()
                }
            };
            if s.description.is_empty() {
                format!("- {} ({ty})", s.name)
            } else {
                format!("- {} ({ty}): {}", s.name, s.description)
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn extract_slots(
    llm: &mut Recorder<'_>,
    utterance: &str,
    task: TaskClass,
    schema: &SlotSchema,
) -> Result<TaskFrame, NluError> {
    if task == TaskClass::Unknown {
        return Err(NluError::UnknownTask);
    }
    let system = format!(
        "You extract the information an architect stated for the task '{}'.\n\
         Slots:\n{}\n\
         Return a JSON object with exactly these slot names as keys. Use only values stated in the command; \
         use null for anything not stated. Do not guess.",
        task.label(),
        describe_schema(schema, None)
    );
    let mut req = ChatRequest::new("extract", system, format!("Command: {utterance}"));
    req.response_hint = ResponseHint::JsonObject;
    req.tags.insert("task".into(), task.label().into());
    let reply = llm.complete(req)?;
    let obj = parse_object(&reply.content)?;

    let mut frame = TaskFrame {
        task,
        slots: BTreeMap::new(),
        missing: BTreeSet::new(),
        waived: BTreeSet::new(),
        source_utterance: utterance.to_string(),
        dialogue_context: Vec::new(),
    };
    for def in &schema.slots {
        match obj.get(&def.name).and_then(|raw| convert(def, raw).map(|v| (raw, v))) {
            Some((raw, value)) => {
                let span = locate(utterance, raw, &value);
                let (provenance, confidence) = match span {
                    Some(_) => (Provenance::UserStated, 1.0),
                    None => (Provenance::Inferred, UNLOCATED_CONFIDENCE),
                };
                frame.slots.insert(
                    def.name.clone(),
                    SlotValue {
                        name: def.name.clone(),
                        value,
                        provenance,
                        confidence,
                        span,
                    },
                );
            }
            None if !def.required && def.fill_policy == FillPolicy::MustAsk => {
                frame.waived.insert(def.name.clone());
            }
            None => {
                frame.missing.insert(def.name.clone());
            }
        }
    }
    Ok(frame)
}

pub(crate) fn parse_object(reply: &str) -> Result<Map<String, Value>, NluError> {
    match serde_json::from_str::<Value>(strip_fences(reply)) {
        Ok(Value::Object(obj)) => Ok(obj),
        _ => Err(NluError::UnparseableReply(reply.chars().take(200).collect())),
    }
}

/// Converts a JSON slot value according to the slot type. `None` means "not provided".
pub(crate) fn convert(def: &SlotDef, raw: &Value) -> Option<SlotData> {
    match (&def.slot_type, raw) {
        (_, Value::Null) => None,
        (SlotType::LengthMm, Value::Number(n)) => n.as_f64().filter(|v| *v > 0.0).map(SlotData::Length),
        (SlotType::LengthMm, Value::String(s)) => parse_length_mm(s).map(SlotData::Length),
        (SlotType::Enum { options }, Value::String(s)) => {
            let key = normalize_term(s);
            options
                .iter()
                .find(|o| normalize_term(o) == key)
                .map(|o| SlotData::Text(o.clone()))
        }
        (SlotType::Text | SlotType::Material, Value::String(s)) => {
            let s = s.trim();
            (!s.is_empty()).then(|| SlotData::Text(s.to_string()))
        }
        (SlotType::Text, Value::Number(n)) => Some(SlotData::Text(n.to_string())),
        (SlotType::Assembly, Value::Array(items)) => {
            let mut layers = Vec::new();
            for item in items {
                match item {
                    Value::Object(o) => {
                        let material = o.get("material").and_then(Value::as_str)?.trim().to_string();
                        if material.is_empty() {
                            return None;
                        }
                        let layer_type = o.get("layer_type").and_then(Value::as_str).and_then(LayerFunction::parse);
                        let thickness = match o.get("thickness") {
                            Some(Value::Number(n)) => n.as_f64().filter(|v| *v > 0.0),
                            Some(Value::String(s)) => parse_length_mm(s),
                            _ => None,
                        };
                        layers.push(LayerDraft {
                            material,
                            layer_type,
                            thickness,
                        });
                    }
                    Value::String(s) => layers.extend(parse_assembly(s)?),
                    _ => return None,
                }
            }
            (!layers.is_empty()).then_some(SlotData::Assembly(layers))
        }
        (SlotType::Assembly, Value::String(s)) => parse_assembly(s).map(SlotData::Assembly),
        _ => None,
    }
}

/// Byte span of the value as written in the utterance, if it is there.
fn locate(utterance: &str, raw: &Value, value: &SlotData) -> Option<(usize, usize)> {
    let lower = utterance.to_lowercase();
    let find = |needle: &str| -> Option<(usize, usize)> {
        let n = needle.trim().to_lowercase();
        if n.is_empty() || lower.len() != utterance.len() {
            return None;
        }
        lower.find(&n).map(|start| (start, start + n.len()))
    };
    match (raw, value) {
        (Value::String(s), _) => find(s).or_else(|| match value {
            SlotData::Text(t) => find(t),
            _ => None,
        }),
        (Value::Number(n), SlotData::Length(v)) => find(&n.to_string()).or_else(|| find(&crate::kernel::format_mm(*v))),
        (_, SlotData::Assembly(layers)) => {
            let spans: Option<Vec<_>> = layers.iter().map(|l| find(&l.material)).collect();
            let spans = spans?;
            Some((spans.iter().map(|s| s.0).min()?, spans.iter().map(|s| s.1).max()?))
        }
        _ => None,
    }
}
