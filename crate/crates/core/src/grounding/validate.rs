use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::kernel::{LayerFunction, WallDetailSpec, WallLayer};
use crate::nlu::strip_fences;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ViolationCode {
    MissingField,
    UnitString,
    NotANumber,
    NonPositive,
    UnknownLayerType,
    EmptyLayers,
    MalformedJson,
}

impl ViolationCode {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationCode::MissingField => "MISSING_FIELD",
            ViolationCode::UnitString => "UNIT_STRING",
            ViolationCode::NotANumber => "NOT_A_NUMBER",
            ViolationCode::NonPositive => "NON_POSITIVE",
            ViolationCode::UnknownLayerType => "UNKNOWN_LAYER_TYPE",
            ViolationCode::EmptyLayers => "EMPTY_LAYERS",
            ViolationCode::MalformedJson => "MALFORMED_JSON",
        }
    }
}

impl fmt::Display for ViolationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub code: ViolationCode,
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}: {}", self.code, self.message)
        } else {
            write!(f, "{} at {}: {}", self.code, self.path, self.message)
        }
    }
}

/// A structuring reply and what the validator made of it. `parsed` is set iff there are no violations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructuredPayload {
    pub raw: String,
    pub parsed: Option<WallDetailSpec>,
    pub violations: Vec<Violation>,
}

impl StructuredPayload {
    pub fn is_valid(&self) -> bool {
        self.parsed.is_some()
    }
}

static NUMBER_WITH_UNIT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s*[-+]?\d+(?:\.\d+)?\s*[^\d\s.].*$").expect("unit regex"));

/// Checks a structuring reply against the wall-detail schema.
///
/// A surrounding code fence is tolerated and unknown keys are ignored. Every violation
/// found is reported, except that malformed JSON stops validation.
pub fn validate_payload(raw: &str) -> StructuredPayload {
    let mut v = Vec::new();
    let parsed = match serde_json::from_str::<Value>(strip_fences(raw)) {
        Ok(Value::Object(obj)) => check_object(&obj, &mut v),
        Ok(other) => {
            v.push(violation(ViolationCode::MalformedJson, "", format!("expected a JSON object, got {}", kind(&other))));
            None
        }
        Err(e) => {
            v.push(violation(ViolationCode::MalformedJson, "", e.to_string()));
            None
        }
    };
    StructuredPayload {
        raw: raw.to_string(),
        parsed: if v.is_empty() { parsed } else { None },
        violations: v,
    }
}

fn violation(code: ViolationCode, path: impl Into<String>, message: impl Into<String>) -> Violation {
    Violation {
        code,
        path: path.into(),
        message: message.into(),
    }
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

fn check_object(obj: &Map<String, Value>, v: &mut Vec<Violation>) -> Option<WallDetailSpec> {
    let name = required_string(obj, "wall_detail_name", "wall_detail_name", v);
    let layers = match obj.get("layers") {
        None | Some(Value::Null) => {
            v.push(violation(ViolationCode::MissingField, "layers", "required key is missing"));
            None
        }
        Some(Value::Array(items)) if items.is_empty() => {
            v.push(violation(ViolationCode::EmptyLayers, "layers", "at least one layer is required"));
            None
        }
        Some(Value::Array(items)) => {
            let layers: Vec<Option<WallLayer>> = items
                .iter()
                .enumerate()
                .map(|(i, item)| check_layer(i, item, v))
                .collect();
            layers.into_iter().collect()
        }
        Some(other) => {
            v.push(violation(
                ViolationCode::MissingField,
                "layers",
                format!("expected an array of layers, got {}", kind(other)),
            ));
            None
        }
    };
    Some(WallDetailSpec {
        wall_detail_name: name?,
        layers: layers?,
    })
}

fn check_layer(i: usize, item: &Value, v: &mut Vec<Violation>) -> Option<WallLayer> {
    let path = format!("layers[{i}]");
    let Value::Object(obj) = item else {
        v.push(violation(ViolationCode::MissingField, &path, format!("expected a layer object, got {}", kind(item))));
        return None;
    };
    let material = required_string(obj, "material", &format!("{path}.material"), v);
    let layer_type = match obj.get("layer_type") {
        None | Some(Value::Null) => {
            v.push(violation(ViolationCode::MissingField, format!("{path}.layer_type"), "required key is missing"));
            None
        }
        Some(Value::String(s)) => {
            let parsed = LayerFunction::parse(s);
            if parsed.is_none() {
                v.push(violation(
                    ViolationCode::UnknownLayerType,
                    format!("{path}.layer_type"),
                    format!(
                        "'{s}' is not one of {}",
                        LayerFunction::ALL.map(LayerFunction::as_str).join(", ")
                    ),
                ));
            }
            parsed
        }
        Some(other) => {
            v.push(violation(
                ViolationCode::UnknownLayerType,
                format!("{path}.layer_type"),
                format!("expected a layer type name, got {}", kind(other)),
            ));
            None
        }
    };
    let conductivity = positive_number(obj, "thermal_conductivity", &path, v);
    let thickness = positive_number(obj, "thickness", &path, v);
    Some(WallLayer {
        material: material?,
        layer_type: layer_type?,
        thermal_conductivity: conductivity?,
        thickness: thickness?,
    })
}

fn required_string(obj: &Map<String, Value>, key: &str, path: &str, v: &mut Vec<Violation>) -> Option<String> {
    match obj.get(key) {
        Some(Value::String(s)) if !s.trim().is_empty() => Some(s.trim().to_string()),
        Some(Value::String(_)) => {
            v.push(violation(ViolationCode::MissingField, path, "must not be blank"));
            None
        }
        None | Some(Value::Null) => {
            v.push(violation(ViolationCode::MissingField, path, "required key is missing"));
            None
        }
        Some(other) => {
            v.push(violation(ViolationCode::MissingField, path, format!("expected a string, got {}", kind(other))));
            None
        }
    }
}

fn positive_number(obj: &Map<String, Value>, key: &str, layer_path: &str, v: &mut Vec<Violation>) -> Option<f64> {
    let path = format!("{layer_path}.{key}");
    match obj.get(key) {
        None | Some(Value::Null) => {
            v.push(violation(ViolationCode::MissingField, path, "required key is missing"));
            None
        }
        Some(Value::Number(n)) => match n.as_f64() {
            Some(x) if x.is_finite() && x > 0.0 => Some(x),
            _ => {
                v.push(violation(ViolationCode::NonPositive, path, format!("must be greater than 0, got {n}")));
                None
            }
        },
        Some(Value::String(s)) if NUMBER_WITH_UNIT.is_match(s) => {
            v.push(violation(
                ViolationCode::UnitString,
                path,
                format!("'{s}' carries a unit; give the bare number"),
            ));
            None
        }
        Some(other) => {
            v.push(violation(ViolationCode::NotANumber, path, format!("expected a number, got {}", kind(other))));
            None
        }
    }
}
