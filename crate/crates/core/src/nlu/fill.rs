use std::collections::BTreeSet;

use serde_json::Value;

use super::interpret::{convert, describe_schema, parse_object};
use super::{
    parse_assembly, parse_length_mm, ClarificationQuestion, FillPolicy, NluError, Provenance, SlotData, SlotDef,
    SlotSchema, SlotType, SlotValue, TaskClass, TaskFrame,
};
use crate::gateway::{ChatRequest, Recorder, ResponseHint};
use crate::text::normalize_term;

/// Confidence used when the consultant reply does not state one.
const DEFAULT_INFERRED_CONFIDENCE: f64 = 0.7;
/// Inferred values never claim certainty.
const MAX_INFERRED_CONFIDENCE: f64 = 0.95;

fn consultant_instruction(task: TaskClass) -> String {
    format!(
        "You are an experienced architectural design consultant completing an under-specified request \
         for the task '{}'. Use your knowledge of climate, building codes and typical construction practice \
         to supply the missing information with engineering-wise valid values. For a location, first infer \
         its climate conditions, then choose the typical wall assembly used for that climate.\n\
         Reply with a JSON object {{\"slots\": {{<slot name>: <value>}}, \"confidence\": <0..1>}}. \
         Use null for a slot you cannot reasonably infer.",
        task.label()
    )
}

/// Completes `InferAllowed` slots through the consultant prompt and turns the rest into questions.
///
/// The returned frame is ready exactly when the question list is empty.
pub fn fill_missing(
    llm: &mut Recorder<'_>,
    frame: &TaskFrame,
    schema: &SlotSchema,
) -> Result<(TaskFrame, Vec<ClarificationQuestion>), NluError> {
    if frame.task == TaskClass::Unknown {
        return Err(NluError::UnknownTask);
    }
    let mut out = frame.clone();
    if out.missing.is_empty() {
        return Ok((out, Vec::new()));
    }

    let inferable: BTreeSet<String> = out
        .missing
        .iter()
        .filter(|name| schema.slot(name).is_some_and(|d| d.fill_policy == FillPolicy::InferAllowed))
        .cloned()
        .collect();

    if !inferable.is_empty() {
        let mut user = format!("Request: {}\n", frame.source_utterance);
        if !frame.slots.is_empty() {
            user.push_str(&format!("Known information:\n{}\n", frame.describe_slots()));
        }
        user.push_str(&format!("Missing information to supply:\n{}", describe_schema(schema, Some(&inferable))));
        let mut req = ChatRequest::new("fill", consultant_instruction(frame.task), user);
        req.temperature = 0.7;
        req.response_hint = ResponseHint::JsonObject;
        req.tags.insert("task".into(), frame.task.label().into());
        let reply = llm.complete(req)?;
        let obj = parse_object(&reply.content)?;
        let confidence = obj
            .get("confidence")
            .and_then(Value::as_f64)
            .filter(|c| c.is_finite())
            .unwrap_or(DEFAULT_INFERRED_CONFIDENCE)
            .clamp(0.0, MAX_INFERRED_CONFIDENCE);
        let slots = match obj.get("slots") {
            Some(Value::Object(m)) => m.clone(),
            _ => obj.clone(),
        };
        for name in &inferable {
            let def = schema.slot(name).expect("filtered above");
            if let Some(value) = slots.get(name).and_then(|raw| convert(def, raw)) {
                out.set(SlotValue {
                    name: name.clone(),
                    value,
                    provenance: Provenance::Inferred,
                    confidence,
                    span: None,
                });
            }
        }
    }

    let mut questions = Vec::new();
    for name in out.missing.clone() {
        match schema.slot(&name) {
            Some(def) if def.required => questions.push(question_for(def)),
            _ => {
                out.missing.remove(&name);
                out.waived.insert(name);
            }
        }
    }
    Ok((out, questions))
}

fn question_for(def: &SlotDef) -> ClarificationQuestion {
    let text = def.question.clone().unwrap_or_else(|| {
        let hint = match &def.slot_type {
            SlotType::LengthMm => " (in mm)".to_string(),
            SlotType::Enum { options } => format!(" ({})", options.join(" or ")),
            _ => String::new(),
        };
        if def.description.is_empty() {
            format!("Please provide {}{hint}.", def.name.replace('_', " "))
        } else {
            format!("Please provide {}{hint}: {}", def.name.replace('_', " "), def.description)
        }
    });
    let suggested_answers = match (&def.slot_type, def.suggested_answers.is_empty()) {
        (SlotType::Enum { options }, true) => options.clone(),
        _ => def.suggested_answers.clone(),
    };
    ClarificationQuestion {
        slot: def.name.clone(),
        text,
        suggested_answers,
        attempt: 1,
    }
}

/// Records the user's answer to `question`. The input frame is never modified.
pub fn apply_answer(
    frame: &TaskFrame,
    schema: &SlotSchema,
    question: &ClarificationQuestion,
    answer: &str,
) -> Result<TaskFrame, NluError> {
    if !frame.missing.contains(&question.slot) {
        return Err(NluError::UnknownSlot(question.slot.clone()));
    }
    let def = schema
        .slot(&question.slot)
        .ok_or_else(|| NluError::UnknownSlot(question.slot.clone()))?;
    let unparseable = |reason: &str| NluError::UnparseableAnswer {
        slot: def.name.clone(),
        answer: answer.to_string(),
        reason: reason.to_string(),
    };
    let trimmed = answer.trim();
    let value = match &def.slot_type {
        SlotType::LengthMm => parse_length_mm(trimmed)
            .map(SlotData::Length)
            .ok_or_else(|| unparseable("expected a positive length"))?,
        SlotType::Enum { options } => {
            let key = normalize_term(trimmed);
            let hit = options
                .iter()
                .find(|o| normalize_term(o) == key)
                .ok_or_else(|| unparseable(&format!("expected one of {}", options.join(", "))))?;
            SlotData::Text(hit.clone())
        }
        SlotType::Text | SlotType::Material => {
            if trimmed.is_empty() {
                return Err(unparseable("empty answer"));
            }
            SlotData::Text(trimmed.to_string())
        }
        SlotType::Assembly => {
            let from_json = serde_json::from_str::<Value>(trimmed).ok().and_then(|v| convert(def, &v));
            from_json
                .or_else(|| parse_assembly(trimmed).map(SlotData::Assembly))
                .ok_or_else(|| unparseable("expected a layer list such as 'brick veneer 90 mm, mineral wool 150 mm'"))?
        }
    };
    let mut out = frame.clone();
    out.set(SlotValue {
        name: def.name.clone(),
        value,
        provenance: Provenance::UserAnswered,
        confidence: 1.0,
        span: None,
    });
    Ok(out)
}
