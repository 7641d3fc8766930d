use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::KernelError;

/// Current on-disk project schema.
pub const SCHEMA_VERSION: u32 = 1;

/// Absolute tolerance for thickness equality, in millimeters.
pub const THICKNESS_EPS_MM: f64 = 1e-6;

macro_rules! id_type {
    ($name:ident, $prefix:literal) => {
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub const PREFIX: &'static str = $prefix;

            pub fn from_seq(n: u64) -> Self {
                Self(format!("{}-{}", $prefix, n))
            }

            pub(crate) fn seq(&self) -> Option<u64> {
                self.0
                    .strip_prefix($prefix)
                    .and_then(|rest| rest.strip_prefix('-'))
                    .and_then(|n| n.parse().ok())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_string())
            }
        }
    };
}

id_type!(MaterialId, "mat");
id_type!(WallTypeId, "wt");
id_type!(WallInstanceId, "wi");

/// Role a layer plays in a wall assembly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerFunction {
    Structure,
    Insulation,
    Finish,
    Membrane,
    Substrate,
}

impl LayerFunction {
    pub const ALL: [LayerFunction; 5] = [
        LayerFunction::Structure,
        LayerFunction::Insulation,
        LayerFunction::Finish,
        LayerFunction::Membrane,
        LayerFunction::Substrate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerFunction::Structure => "structure",
            LayerFunction::Insulation => "insulation",
            LayerFunction::Finish => "finish",
            LayerFunction::Membrane => "membrane",
            LayerFunction::Substrate => "substrate",
        }
    }

    /// Parses the payload vocabulary. Case-insensitive; `structural` is accepted for `structure`.
    pub fn parse(s: &str) -> Option<Self> {
        match crate::text::normalize_term(s).as_str() {
            "structure" | "structural" => Some(LayerFunction::Structure),
            "insulation" => Some(LayerFunction::Insulation),
            "finish" => Some(LayerFunction::Finish),
            "membrane" => Some(LayerFunction::Membrane),
            "substrate" => Some(LayerFunction::Substrate),
            _ => None,
        }
    }
}

impl fmt::Display for LayerFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub id: MaterialId,
    pub name: String,
    pub default_layer_type: LayerFunction,
    /// W/(m·K)
    pub thermal_conductivity: f64,
    #[serde(default)]
    pub aliases: BTreeSet<String>,
    /// Set when the material was introduced by a generated detail rather than the curated library.
    #[serde(default)]
    pub unverified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallLayer {
    /// Canonical material name; resolves against the project's material library.
    pub material: String,
    pub layer_type: LayerFunction,
    /// W/(m·K)
    pub thermal_conductivity: f64,
    /// mm
    pub thickness: f64,
}

/// A named layered assembly. `layers[0]` is the exterior-most layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallDetailSpec {
    pub wall_detail_name: String,
    pub layers: Vec<WallLayer>,
}

impl WallDetailSpec {
    /// Sum of all layer thicknesses in mm.
    pub fn total_thickness(&self) -> f64 {
        total_thickness(self)
    }

    /// Sum of the thicknesses of every `Structure` layer.
    pub fn structural_thickness(&self) -> f64 {
        self.layers
            .iter()
            .filter(|l| l.layer_type == LayerFunction::Structure)
            .map(|l| l.thickness)
            .sum()
    }

    pub fn validate(&self) -> Result<(), KernelError> {
        if self.wall_detail_name.trim().is_empty() {
            return Err(KernelError::invalid("wall_detail_name", "empty"));
        }
        if self.layers.is_empty() {
            return Err(KernelError::invalid("layers", "empty"));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.material.trim().is_empty() {
                return Err(KernelError::invalid(format!("layers[{i}].material"), "empty"));
            }
            if !(layer.thickness.is_finite() && layer.thickness > 0.0) {
                return Err(KernelError::invalid(
                    format!("layers[{i}].thickness"),
                    format!("must be finite and > 0, got {}", layer.thickness),
                ));
            }
            if !(layer.thermal_conductivity.is_finite() && layer.thermal_conductivity > 0.0) {
                return Err(KernelError::invalid(
                    format!("layers[{i}].thermal_conductivity"),
                    format!("must be finite and > 0, got {}", layer.thermal_conductivity),
                ));
            }
        }
        Ok(())
    }
}

/// Exact sum of layer thicknesses, in mm.
pub fn total_thickness(spec: &WallDetailSpec) -> f64 {
    spec.layers.iter().map(|l| l.thickness).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallType {
    pub id: WallTypeId,
    pub spec: WallDetailSpec,
    pub created_from: Option<WallTypeId>,
    pub revision: u32,
    /// Set on the last attempt of a check loop that ran out of budget.
    #[serde(default)]
    pub non_compliant: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Plan-view wall axis, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub start: Point2,
    pub end: Point2,
}

impl Baseline {
    pub fn new(start: (f64, f64), end: (f64, f64)) -> Self {
        Self {
            start: Point2::new(start.0, start.1),
            end: Point2::new(end.0, end.1),
        }
    }

    pub fn length(&self) -> f64 {
        (self.end.x - self.start.x).hypot(self.end.y - self.start.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallInstance {
    pub id: WallInstanceId,
    pub wall_type: WallTypeId,
    pub baseline: Baseline,
    /// m
    pub height: f64,
}

/// Outcome of the Execute step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionResult {
    pub mutated_ids: Vec<String>,
    pub produced_spec: Option<WallDetailSpec>,
    pub summary: String,
}
