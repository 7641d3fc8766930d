//! Check: rule evaluation of generated wall details against the request.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernel::{format_mm, LayerFunction, WallDetailSpec};
use crate::text::normalize_term;

/// Comparison slack in mm. Small enough that 99.999999 mm still fails a 100 mm minimum,
/// large enough to absorb float error when layer thicknesses are summed.
pub const BOUNDARY_EPS_MM: f64 = 1e-7;

pub const STRUCTURAL_MATERIAL: &str = "structural_material";
pub const MIN_STRUCTURAL_THICKNESS: &str = "min_structural_thickness";
pub const REQUESTED_TOTAL_THICKNESS: &str = "requested_total_thickness";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StructuralFamily {
    ReinforcedConcrete,
    Timber,
    Other,
}

const RC_FAMILY: [&str; 3] = ["reinforced concrete", "cast in place concrete", "precast concrete"];
const TIMBER_FAMILY: [&str; 4] = ["timber", "timber stud", "cross laminated timber", "glued laminated timber"];

impl StructuralFamily {
    /// Family of a canonical material name.
    pub fn of(material: &str) -> Self {
        let key = normalize_term(material);
        if RC_FAMILY.contains(&key.as_str()) {
            StructuralFamily::ReinforcedConcrete
        } else if TIMBER_FAMILY.contains(&key.as_str()) {
            StructuralFamily::Timber
        } else {
            StructuralFamily::Other
        }
    }

    /// The generic material term that stands for the whole family, if any.
    pub fn generic_term(self) -> Option<&'static str> {
        match self {
            StructuralFamily::ReinforcedConcrete => Some("reinforced concrete"),
            StructuralFamily::Timber => Some("timber"),
            StructuralFamily::Other => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequirementContext {
    pub requested_structural_material: String,
    /// mm
    pub requested_min_thickness: Option<f64>,
    pub structural_family: StructuralFamily,
}

impl RequirementContext {
    pub fn new(requested_structural_material: &str, requested_min_thickness: Option<f64>) -> Self {
        Self {
            requested_structural_material: requested_structural_material.to_string(),
            requested_min_thickness,
            structural_family: StructuralFamily::of(requested_structural_material),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Severity {
    Blocking,
    Advisory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub value: f64,
    pub unit: String,
}

impl Measured {
    fn mm(value: f64) -> Self {
        Self {
            value,
            unit: "mm".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleVerdict {
    pub rule_id: String,
    pub passed: bool,
    pub severity: Severity,
    /// The rule did not apply and passed vacuously.
    #[serde(default)]
    pub skipped: bool,
    pub measured: Option<Measured>,
    pub expected: String,
    pub message: String,
}

impl fmt::Display for RuleVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = match (self.passed, self.skipped) {
            (_, true) => "skipped",
            (true, false) => "pass",
            (false, false) => "FAIL",
        };
        write!(f, "[{status}] {}: {}", self.rule_id, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub verdicts: Vec<RuleVerdict>,
    /// Every blocking verdict passed.
    pub overall: bool,
    /// 1-based check attempt within the retry loop.
    pub attempt: u32,
}

impl CheckReport {
    pub fn verdict(&self, rule_id: &str) -> Option<&RuleVerdict> {
        self.verdicts.iter().find(|v| v.rule_id == rule_id)
    }

    /// Messages of failed blocking verdicts, for structuring feedback.
    pub fn failures(&self) -> Vec<String> {
        self.verdicts
            .iter()
            .filter(|v| !v.passed && v.severity == Severity::Blocking)
            .map(|v| v.message.clone())
            .collect()
    }

    /// One CSV row per verdict with a header line.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = ["attempt", "rule_id", "passed", "skipped", "severity", "measured", "unit", "expected", "message"];
        w.write_record(header).expect("in-memory csv");
        for v in &self.verdicts {
            let (measured, unit) = match &v.measured {
                Some(m) => (format_mm(m.value), m.unit.clone()),
                None => (String::new(), String::new()),
            };
            w.write_record([
                self.attempt.to_string(),
                v.rule_id.clone(),
                v.passed.to_string(),
                v.skipped.to_string(),
                format!("{:?}", v.severity),
                measured,
                unit,
                v.expected.clone(),
                v.message.clone(),
            ])
            .expect("in-memory csv");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv is utf-8")
    }
}

/// Structural thickness band for one family, in mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThicknessBand {
    pub min_mm: f64,
    #[serde(default)]
    pub max_mm: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleParams {
    pub reinforced_concrete: ThicknessBand,
    pub timber: ThicknessBand,
    /// Reads the concrete minimum as strictly greater than instead of at least.
    pub strict_rc_threshold: bool,
}

impl Default for RuleParams {
    fn default() -> Self {
        Self {
            reinforced_concrete: ThicknessBand {
                min_mm: 100.0,
                max_mm: None,
            },
            timber: ThicknessBand {
                min_mm: 140.0,
                max_mm: Some(190.0),
            },
            strict_rc_threshold: false,
        }
    }
}

/// Partial parameter file; absent keys keep the built-in values.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamOverrides {
    reinforced_concrete: Option<ThicknessBand>,
    timber: Option<ThicknessBand>,
    strict_rc_threshold: Option<bool>,
    #[serde(default)]
    disabled_rules: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleKind {
    StructuralMaterial,
    MinStructuralThickness,
    RequestedTotalThickness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    pub description: String,
    pub kind: RuleKind,
    pub severity: Severity,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ComplianceError {
    #[error("invalid rule parameters: {0}")]
    InvalidParams(String),
}

/// Ordered rules plus their parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleRegistry {
    pub rules: Vec<Rule>,
    pub params: RuleParams,
}

impl Default for RuleRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl RuleRegistry {
    pub fn builtin() -> Self {
        let rule = |id: &str, description: &str, kind| Rule {
            id: id.into(),
            description: description.into(),
            kind,
            severity: Severity::Blocking,
        };
        Self {
            rules: vec![
                rule(
                    STRUCTURAL_MATERIAL,
                    "a structure layer uses the requested structural material",
                    RuleKind::StructuralMaterial,
                ),
                rule(
                    MIN_STRUCTURAL_THICKNESS,
                    "structure layers meet the load-bearing thickness for their family",
                    RuleKind::MinStructuralThickness,
                ),
                rule(
                    REQUESTED_TOTAL_THICKNESS,
                    "the whole wall is at least as thick as requested",
                    RuleKind::RequestedTotalThickness,
                ),
            ],
            params: RuleParams::default(),
        }
    }

    pub fn empty() -> Self {
        Self {
            rules: Vec::new(),
            params: RuleParams::default(),
        }
    }

    pub fn with_strict_rc_threshold(mut self, strict: bool) -> Self {
        self.params.strict_rc_threshold = strict;
        self
    }

    /// Applies a JSON parameter file to the built-in rules.
    pub fn with_overrides_json(mut self, text: &str) -> Result<Self, ComplianceError> {
        let o: ParamOverrides =
            serde_json::from_str(text).map_err(|e| ComplianceError::InvalidParams(e.to_string()))?;
        for band in [&o.reinforced_concrete, &o.timber].into_iter().flatten() {
            let ok = band.min_mm.is_finite()
                && band.min_mm >= 0.0
                && band.max_mm.is_none_or(|m| m.is_finite() && m >= band.min_mm);
            if !ok {
                return Err(ComplianceError::InvalidParams(format!("bad thickness band {band:?}")));
            }
        }
        for id in &o.disabled_rules {
            if !self.rules.iter().any(|r| &r.id == id) {
                return Err(ComplianceError::InvalidParams(format!("unknown rule '{id}'")));
            }
        }
        self.rules.retain(|r| !o.disabled_rules.contains(&r.id));
        if let Some(b) = o.reinforced_concrete {
            self.params.reinforced_concrete = b;
        }
        if let Some(b) = o.timber {
            self.params.timber = b;
        }
        if let Some(s) = o.strict_rc_threshold {
            self.params.strict_rc_threshold = s;
        }
        Ok(self)
    }

    pub fn with_overrides_file(self, path: impl AsRef<Path>) -> Result<Self, ComplianceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ComplianceError::InvalidParams(format!("{}: {e}", path.display())))?;
        self.with_overrides_json(&text)
    }
}

/// Evaluates every rule in registry order. `attempt` is filled in as 1; the retry loop overwrites it.
pub fn run_checks(spec: &WallDetailSpec, ctx: &RequirementContext, registry: &RuleRegistry) -> CheckReport {
    let verdicts: Vec<RuleVerdict> = registry
        .rules
        .iter()
        .map(|rule| {
            let mut v = match rule.kind {
                RuleKind::StructuralMaterial => rule_structural_material(spec, ctx),
                RuleKind::MinStructuralThickness => rule_min_structural_thickness(spec, ctx, &registry.params),
                RuleKind::RequestedTotalThickness => rule_requested_total_thickness(spec, ctx),
            };
            v.rule_id = rule.id.clone();
            if rule.severity == Severity::Advisory {
                v.severity = Severity::Advisory;
            }
            v
        })
        .collect();
    let overall = verdicts
        .iter()
        .all(|v| v.passed || v.severity == Severity::Advisory);
    CheckReport {
        verdicts,
        overall,
        attempt: 1,
    }
}

fn structure_layers(spec: &WallDetailSpec) -> impl Iterator<Item = &crate::kernel::WallLayer> {
    spec.layers.iter().filter(|l| l.layer_type == LayerFunction::Structure)
}

/// Whether `material` satisfies a request for `requested`. A request for a family's generic
/// term ("timber", "reinforced concrete") accepts any member of that family.
pub fn material_satisfies(material: &str, requested: &str) -> bool {
    let (m, r) = (normalize_term(material), normalize_term(requested));
    if m == r {
        return true;
    }
    let family = StructuralFamily::of(requested);
    family.generic_term() == Some(r.as_str()) && StructuralFamily::of(material) == family
}

pub fn rule_structural_material(spec: &WallDetailSpec, ctx: &RequirementContext) -> RuleVerdict {
    let requested = &ctx.requested_structural_material;
    let structural: Vec<&str> = structure_layers(spec).map(|l| l.material.as_str()).collect();
    let expected = format!("a structure layer of {requested}");
    let (passed, message) = if structural.is_empty() {
        (false, "NoStructuralLayer: the wall detail has no layer with layer_type 'structure'".to_string())
    } else if structural.iter().any(|m| material_satisfies(m, requested)) {
        (true, format!("structure layer uses {requested}"))
    } else {
        (
            false,
            format!(
                "requested structural material is {requested} but the structure layer is {}",
                structural.join(" + ")
            ),
        )
    };
    RuleVerdict {
        rule_id: STRUCTURAL_MATERIAL.into(),
        passed,
        severity: Severity::Blocking,
        skipped: false,
        measured: None,
        expected,
        message,
    }
}

pub fn rule_min_structural_thickness(
    spec: &WallDetailSpec,
    ctx: &RequirementContext,
    params: &RuleParams,
) -> RuleVerdict {
    let measured = spec.structural_thickness();
    let m = format_mm(measured);
    let mut v = RuleVerdict {
        rule_id: MIN_STRUCTURAL_THICKNESS.into(),
        passed: false,
        severity: Severity::Blocking,
        skipped: false,
        measured: Some(Measured::mm(measured)),
        expected: String::new(),
        message: String::new(),
    };
    match ctx.structural_family {
        StructuralFamily::ReinforcedConcrete => {
            let min = params.reinforced_concrete.min_mm;
            let max = params.reinforced_concrete.max_mm;
            let above = if params.strict_rc_threshold {
                measured > min + BOUNDARY_EPS_MM
            } else {
                measured >= min - BOUNDARY_EPS_MM
            };
            let below = max.is_none_or(|mx| measured <= mx + BOUNDARY_EPS_MM);
            let op = if params.strict_rc_threshold { ">" } else { ">=" };
            v.expected = match max {
                Some(mx) => format!("{op} {} mm and <= {} mm", format_mm(min), format_mm(mx)),
                None => format!("{op} {} mm", format_mm(min)),
            };
            v.passed = above && below;
            v.message = if v.passed {
                format!("reinforced concrete structure is {m} mm ({})", v.expected)
            } else {
                format!("reinforced concrete structure is {m} mm; it must be {}", v.expected)
            };
        }
        StructuralFamily::Timber => {
            let ThicknessBand { min_mm, max_mm } = params.timber;
            let above = measured >= min_mm - BOUNDARY_EPS_MM;
            let below = max_mm.is_none_or(|mx| measured <= mx + BOUNDARY_EPS_MM);
            v.expected = match max_mm {
                Some(mx) => format!("{} to {} mm", format_mm(min_mm), format_mm(mx)),
                None => format!(">= {} mm", format_mm(min_mm)),
            };
            v.passed = above && below;
            v.message = if v.passed {
                format!("timber structure is {m} mm ({})", v.expected)
            } else {
                format!("timber structure is {m} mm; it must be {}", v.expected)
            };
        }
        StructuralFamily::Other => {
            v.passed = true;
            v.severity = Severity::Advisory;
            v.expected = "no threshold defined".into();
            v.message = format!(
                "no load-bearing thickness rule for {}; structure measured {m} mm (advisory)",
                ctx.requested_structural_material
            );
        }
    }
    v
}

pub fn rule_requested_total_thickness(spec: &WallDetailSpec, ctx: &RequirementContext) -> RuleVerdict {
    let total = spec.total_thickness();
    let t = format_mm(total);
    match ctx.requested_min_thickness {
        None => RuleVerdict {
            rule_id: REQUESTED_TOTAL_THICKNESS.into(),
            passed: true,
            severity: Severity::Blocking,
            skipped: true,
            measured: Some(Measured::mm(total)),
            expected: "no thickness requested".into(),
            message: format!("no thickness was requested; wall is {t} mm"),
        },
        Some(min) => {
            let passed = total >= min - BOUNDARY_EPS_MM;
            let expected = format!(">= {} mm", format_mm(min));
            RuleVerdict {
                rule_id: REQUESTED_TOTAL_THICKNESS.into(),
                passed,
                severity: Severity::Blocking,
                skipped: false,
                measured: Some(Measured::mm(total)),
                message: if passed {
                    format!("wall is {t} mm ({expected})")
                } else {
                    format!("wall is {t} mm in total; the request asks for at least {} mm", format_mm(min))
                },
                expected,
            }
        }
    }
}

#[cfg(test)]
mod tests;
