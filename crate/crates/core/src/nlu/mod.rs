//! Interpret and Fill: task classification, slot extraction and completion.

mod fill;
mod interpret;
mod units;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::GatewayError;
use crate::kernel::LayerFunction;

pub use fill::{apply_answer, fill_missing};
pub use interpret::{classify_task, extract_slots, parse_classification, Classification, CONFIDENCE_THRESHOLD, CONTEXT_TURNS};
pub use units::{parse_assembly, parse_length_mm};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskClass {
    CreateWallDetail,
    PlaceWindow,
    ModifyWall,
    DeleteColumn,
    SimpleTransform,
    Unknown,
}

impl TaskClass {
    pub const SUPPORTED: [TaskClass; 5] = [
        TaskClass::CreateWallDetail,
        TaskClass::PlaceWindow,
        TaskClass::ModifyWall,
        TaskClass::DeleteColumn,
        TaskClass::SimpleTransform,
    ];

    pub fn label(self) -> &'static str {
        match self {
            TaskClass::CreateWallDetail => "CreateWallDetail",
            TaskClass::PlaceWindow => "PlaceWindow",
            TaskClass::ModifyWall => "ModifyWall",
            TaskClass::DeleteColumn => "DeleteColumn",
            TaskClass::SimpleTransform => "SimpleTransform",
            TaskClass::Unknown => "Unknown",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            TaskClass::CreateWallDetail => "create a new wall detail (layered wall type)",
            TaskClass::PlaceWindow => "place a window in a wall",
            TaskClass::ModifyWall => "modify an existing wall type",
            TaskClass::DeleteColumn => "delete a column",
            TaskClass::SimpleTransform => "rotate, move or mirror the model",
            TaskClass::Unknown => "anything else",
        }
    }

    /// Accepts the label itself, its snake_case form, or spaced words, case-insensitively.
    pub fn from_label(s: &str) -> Option<Self> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        [
            TaskClass::CreateWallDetail,
            TaskClass::PlaceWindow,
            TaskClass::ModifyWall,
            TaskClass::DeleteColumn,
            TaskClass::SimpleTransform,
            TaskClass::Unknown,
        ]
        .into_iter()
        .find(|t| t.label().to_ascii_lowercase() == key)
    }
}

impl fmt::Display for TaskClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SlotType {
    Text,
    Material,
    LengthMm,
    Enum { options: Vec<String> },
    /// Ordered list of drafted layers, exterior first.
    Assembly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FillPolicy {
    InferAllowed,
    MustAsk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotDef {
    pub name: String,
    #[serde(flatten)]
    pub slot_type: SlotType,
    pub required: bool,
    pub fill_policy: FillPolicy,
    #[serde(default)]
    pub description: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub suggested_answers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotSchema {
    pub task: TaskClass,
    pub slots: Vec<SlotDef>,
}

impl SlotSchema {
    pub fn slot(&self, name: &str) -> Option<&SlotDef> {
        self.slots.iter().find(|s| s.name == name)
    }
}

/// Per-task slot schemas, loaded from the bundled registry and optionally overridden per task.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotRegistry {
    schemas: BTreeMap<TaskClass, SlotSchema>,
}

const BUNDLED_SCHEMAS: &str = include_str!("../../data/slot_schemas.json");

impl SlotRegistry {
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_SCHEMAS).expect("bundled slot registry is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, NluError> {
        let list: Vec<SlotSchema> =
            serde_json::from_str(text).map_err(|e| NluError::InvalidRegistry(e.to_string()))?;
        let mut schemas = BTreeMap::new();
        for schema in list {
            validate_schema(&schema)?;
            schemas.insert(schema.task, schema);
        }
        Ok(Self { schemas })
    }

    /// Bundled registry with every task present in `path` replaced by the file's schema.
    pub fn bundled_with_overrides(path: impl AsRef<Path>) -> Result<Self, NluError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| NluError::InvalidRegistry(format!("{}: {e}", path.as_ref().display())))?;
        let mut reg = Self::bundled();
        for (task, schema) in Self::from_json(&text)?.schemas {
            reg.schemas.insert(task, schema);
        }
        Ok(reg)
    }

    pub fn schema(&self, task: TaskClass) -> Option<&SlotSchema> {
        self.schemas.get(&task)
    }

    pub fn insert(&mut self, schema: SlotSchema) -> Result<(), NluError> {
        validate_schema(&schema)?;
        self.schemas.insert(schema.task, schema);
        Ok(())
    }
}

fn validate_schema(schema: &SlotSchema) -> Result<(), NluError> {
    if schema.task == TaskClass::Unknown {
        return Err(NluError::InvalidRegistry("Unknown has no slot schema".into()));
    }
    let mut seen = BTreeSet::new();
    for s in &schema.slots {
        if !seen.insert(&s.name) {
            return Err(NluError::InvalidRegistry(format!("{}: duplicate slot '{}'", schema.task, s.name)));
        }
        if let SlotType::Enum { options } = &s.slot_type {
            if options.is_empty() {
                return Err(NluError::InvalidRegistry(format!("{}.{}: enum without options", schema.task, s.name)));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDraft {
    pub material: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_type: Option<LayerFunction>,
    /// mm
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thickness: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum SlotData {
    Text(String),
    Length(f64),
    Assembly(Vec<LayerDraft>),
}

impl SlotData {
    pub fn as_text(&self) -> Option<&str> {
        match self {
            SlotData::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_length(&self) -> Option<f64> {
        match self {
            SlotData::Length(v) => Some(*v),
            _ => None,
        }
    }

    pub fn render(&self) -> String {
        match self {
            SlotData::Text(s) => s.clone(),
            SlotData::Length(v) => format!("{} mm", crate::kernel::format_mm(*v)),
            SlotData::Assembly(layers) => layers
                .iter()
                .map(|l| {
                    let mut s = l.material.clone();
                    if let Some(t) = l.layer_type {
                        s.push_str(&format!(" ({t})"));
                    }
                    if let Some(mm) = l.thickness {
                        s.push_str(&format!(" {} mm", crate::kernel::format_mm(mm)));
                    }
                    s
                })
                .collect::<Vec<_>>()
                .join(", "),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    UserStated,
    Inferred,
    UserAnswered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotValue {
    pub name: String,
    pub value: SlotData,
    pub provenance: Provenance,
    pub confidence: f64,
    /// Byte range of the stated value in the source utterance (UserStated only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextTurn {
    pub speaker: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskFrame {
    pub task: TaskClass,
    pub slots: BTreeMap<String, SlotValue>,
    pub missing: BTreeSet<String>,
    /// Optional slots nobody supplied; they no longer block readiness.
    #[serde(default)]
    pub waived: BTreeSet<String>,
    pub source_utterance: String,
    #[serde(default)]
    pub dialogue_context: Vec<ContextTurn>,
}

impl TaskFrame {
    pub fn is_ready(&self) -> bool {
        self.missing.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&SlotData> {
        self.slots.get(name).map(|s| &s.value)
    }

    pub fn text(&self, name: &str) -> Option<&str> {
        self.get(name).and_then(SlotData::as_text)
    }

    pub fn length(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(SlotData::as_length)
    }

    /// Stores a slot value. An existing value is only replaced by a user answer.
    pub(crate) fn set(&mut self, value: SlotValue) -> bool {
        if self.slots.contains_key(&value.name) && value.provenance != Provenance::UserAnswered {
            return false;
        }
        self.missing.remove(&value.name);
        self.waived.remove(&value.name);
        self.slots.insert(value.name.clone(), value);
        true
    }

    /// `name = value` lines for prompts, in slot-name order.
    pub fn describe_slots(&self) -> String {
        self.slots
            .values()
            .map(|s| format!("- {}: {}", s.name, s.value.render()))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClarificationQuestion {
    pub slot: String,
    pub text: String,
    #[serde(default)]
    pub suggested_answers: Vec<String>,
    /// How many times this question has been put to the user.
    #[serde(default = "one")]
    pub attempt: u32,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NluError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("task is Unknown; nothing to extract")]
    UnknownTask,
    #[error("no slot schema registered for {0}")]
    NoSchema(TaskClass),
    #[error("model reply could not be parsed: {0}")]
    UnparseableReply(String),
    #[error("slot '{0}' is not awaiting an answer")]
    UnknownSlot(String),
    #[error("cannot parse '{answer}' for slot '{slot}': {reason}")]
    UnparseableAnswer { slot: String, answer: String, reason: String },
    #[error("invalid slot registry: {0}")]
    InvalidRegistry(String),
}

/// Removes a surrounding markdown code fence, if any.
pub(crate) fn strip_fences(reply: &str) -> &str {
    let t = reply.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let rest = rest.trim_start_matches(|c: char| c.is_ascii_alphabetic());
        if let Some(inner) = rest.trim_end().strip_suffix("```") {
            return inner.trim();
        }
    }
    t
}
