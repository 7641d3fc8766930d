//! Embedded wall-centric BIM model.
//!
//! A [`Project`] holds a material library, layered wall types and placed wall
//! instances. Every mutating operation validates its inputs before touching
//! state, so a failed call leaves the project exactly as it was.

mod model;
mod persist;
mod seed;

use std::collections::BTreeSet;

use thiserror::Error;

pub use model::*;
pub use persist::{load_project, save_project};
pub use seed::{seed_materials, seeded_project};

use crate::text::normalize_term;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("{path}: {reason}")]
    InvalidSpec { path: String, reason: String },
    #[error("duplicate wall type name: {0}")]
    DuplicateName(String),
    #[error("{kind} not found: {id}")]
    NotFound { kind: &'static str, id: String },
    #[error("wall type {type_id} is referenced by instances {instances:?}")]
    InUse {
        type_id: WallTypeId,
        instances: Vec<WallInstanceId>,
    },
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("schema version mismatch: file has {found}, expected {expected}")]
    SchemaVersionMismatch { found: u64, expected: u32 },
    #[error("corrupt project file at {location}: {message}")]
    CorruptFile { location: String, message: String },
}

impl KernelError {
    pub(crate) fn invalid(path: impl Into<String>, reason: impl Into<String>) -> Self {
        KernelError::InvalidSpec {
            path: path.into(),
            reason: reason.into(),
        }
    }

    fn not_found(kind: &'static str, id: impl ToString) -> Self {
        KernelError::NotFound {
            kind,
            id: id.to_string(),
        }
    }
}

pub type Result<T, E = KernelError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Project {
    pub schema_version: u32,
    pub material_library: Vec<Material>,
    pub wall_types: Vec<WallType>,
    pub wall_instances: Vec<WallInstance>,
}

impl Default for Project {
    fn default() -> Self {
        Self::empty()
    }
}

fn next_seq(ids: impl Iterator<Item = Option<u64>>) -> u64 {
    ids.flatten().max().unwrap_or(0) + 1
}

impl Project {
    pub fn empty() -> Self {
        Project {
            schema_version: SCHEMA_VERSION,
            material_library: Vec::new(),
            wall_types: Vec::new(),
            wall_instances: Vec::new(),
        }
    }

    pub fn wall_type(&self, id: &WallTypeId) -> Option<&WallType> {
        self.wall_types.iter().find(|t| &t.id == id)
    }

    pub fn wall_type_by_name(&self, name: &str) -> Option<&WallType> {
        let key = normalize_term(name);
        self.wall_types
            .iter()
            .find(|t| normalize_term(&t.spec.wall_detail_name) == key)
    }

    pub fn wall_instance(&self, id: &WallInstanceId) -> Option<&WallInstance> {
        self.wall_instances.iter().find(|w| &w.id == id)
    }

    pub fn material_by_name(&self, name: &str) -> Option<&Material> {
        let key = normalize_term(name);
        self.material_library
            .iter()
            .find(|m| normalize_term(&m.name) == key)
    }

    /// Adds a curated material. Names must be unique after normalization.
    pub fn add_material(
        &mut self,
        name: &str,
        default_layer_type: LayerFunction,
        thermal_conductivity: f64,
        aliases: impl IntoIterator<Item = String>,
    ) -> Result<MaterialId> {
        if normalize_term(name).is_empty() {
            return Err(KernelError::invalid("material.name", "empty"));
        }
        if !(thermal_conductivity.is_finite() && thermal_conductivity > 0.0) {
            return Err(KernelError::invalid(
                "material.thermal_conductivity",
                "must be finite and > 0",
            ));
        }
        if self.material_by_name(name).is_some() {
            return Err(KernelError::DuplicateName(name.to_string()));
        }
        let id = self.next_material_id();
        self.material_library.push(Material {
            id: id.clone(),
            name: name.trim().to_string(),
            default_layer_type,
            thermal_conductivity,
            aliases: aliases.into_iter().collect(),
            unverified: false,
        });
        Ok(id)
    }

    fn next_material_id(&self) -> MaterialId {
        MaterialId::from_seq(next_seq(self.material_library.iter().map(|m| m.id.seq())))
    }

    fn next_type_id(&self) -> WallTypeId {
        WallTypeId::from_seq(next_seq(self.wall_types.iter().map(|t| t.id.seq())))
    }

    fn next_instance_id(&self) -> WallInstanceId {
        WallInstanceId::from_seq(next_seq(self.wall_instances.iter().map(|w| w.id.seq())))
    }

    fn type_index(&self, id: &WallTypeId) -> Result<usize> {
        self.wall_types
            .iter()
            .position(|t| &t.id == id)
            .ok_or_else(|| KernelError::not_found("wall type", id))
    }

    fn name_taken_by_other(&self, name: &str, except: Option<&WallTypeId>) -> bool {
        let key = normalize_term(name);
        self.wall_types
            .iter()
            .any(|t| Some(&t.id) != except && normalize_term(&t.spec.wall_detail_name) == key)
    }

    /// Adds every layer material missing from the library, flagged unverified.
    fn register_materials(&mut self, spec: &WallDetailSpec) -> Vec<MaterialId> {
        let mut added = Vec::new();
        for layer in &spec.layers {
            if self.material_by_name(&layer.material).is_none() {
                let id = self.next_material_id();
                self.material_library.push(Material {
                    id: id.clone(),
                    name: layer.material.trim().to_string(),
                    default_layer_type: layer.layer_type,
                    thermal_conductivity: layer.thermal_conductivity,
                    aliases: BTreeSet::new(),
                    unverified: true,
                });
                added.push(id);
            }
        }
        added
    }

    pub fn create_wall_type(&mut self, spec: WallDetailSpec) -> Result<WallTypeId> {
        spec.validate()?;
        if self.name_taken_by_other(&spec.wall_detail_name, None) {
            return Err(KernelError::DuplicateName(spec.wall_detail_name));
        }
        self.register_materials(&spec);
        let id = self.next_type_id();
        self.wall_types.push(WallType {
            id: id.clone(),
            spec,
            created_from: None,
            revision: 1,
            non_compliant: false,
        });
        Ok(id)
    }

    pub fn duplicate_wall_type(&mut self, source: &WallTypeId, new_name: &str) -> Result<WallTypeId> {
        let idx = self.type_index(source)?;
        if new_name.trim().is_empty() {
            return Err(KernelError::invalid("wall_detail_name", "empty"));
        }
        if self.name_taken_by_other(new_name, None) {
            return Err(KernelError::DuplicateName(new_name.to_string()));
        }
        let mut spec = self.wall_types[idx].spec.clone();
        spec.wall_detail_name = new_name.trim().to_string();
        let id = self.next_type_id();
        self.wall_types.push(WallType {
            id: id.clone(),
            spec,
            created_from: Some(source.clone()),
            revision: 1,
            non_compliant: false,
        });
        Ok(id)
    }

    pub fn modify_wall_type(&mut self, id: &WallTypeId, new_spec: WallDetailSpec) -> Result<&WallType> {
        let idx = self.type_index(id)?;
        new_spec.validate()?;
        if self.name_taken_by_other(&new_spec.wall_detail_name, Some(id)) {
            return Err(KernelError::DuplicateName(new_spec.wall_detail_name));
        }
        self.register_materials(&new_spec);
        let wt = &mut self.wall_types[idx];
        wt.spec = new_spec;
        wt.revision += 1;
        wt.non_compliant = false;
        Ok(&self.wall_types[idx])
    }

    pub fn delete_wall_type(&mut self, id: &WallTypeId) -> Result<()> {
        let idx = self.type_index(id)?;
        let users: Vec<WallInstanceId> = self
            .wall_instances
            .iter()
            .filter(|w| &w.wall_type == id)
            .map(|w| w.id.clone())
            .collect();
        if !users.is_empty() {
            return Err(KernelError::InUse {
                type_id: id.clone(),
                instances: users,
            });
        }
        self.wall_types.remove(idx);
        Ok(())
    }

    pub fn place_wall(&mut self, type_id: &WallTypeId, baseline: Baseline, height: f64) -> Result<WallInstanceId> {
        self.type_index(type_id)?;
        let coords = [baseline.start.x, baseline.start.y, baseline.end.x, baseline.end.y];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(KernelError::InvalidGeometry("non-finite baseline coordinate".into()));
        }
        if baseline.start == baseline.end {
            return Err(KernelError::InvalidGeometry("baseline start equals end".into()));
        }
        if !(height.is_finite() && height > 0.0) {
            return Err(KernelError::InvalidGeometry(format!("height must be > 0, got {height}")));
        }
        let id = self.next_instance_id();
        self.wall_instances.push(WallInstance {
            id: id.clone(),
            wall_type: type_id.clone(),
            baseline,
            height,
        });
        Ok(id)
    }

    pub fn replace_wall_type(&mut self, instance_id: &WallInstanceId, new_type_id: &WallTypeId) -> Result<()> {
        self.type_index(new_type_id)?;
        let inst = self
            .wall_instances
            .iter_mut()
            .find(|w| &w.id == instance_id)
            .ok_or_else(|| KernelError::not_found("wall instance", instance_id))?;
        inst.wall_type = new_type_id.clone();
        Ok(())
    }

    /// Execute step: turns a validated spec into a wall type, optionally re-pointing `target` at it.
    ///
    /// A name collision with a type listed in `reusable` (types created earlier in the same
    /// check loop) updates that type in place; any other collision is a `DuplicateName`.
    pub fn apply_wall_detail(
        &mut self,
        spec: WallDetailSpec,
        target: Option<&WallInstanceId>,
        reusable: &BTreeSet<WallTypeId>,
    ) -> Result<ExecutionResult> {
        spec.validate()?;
        if let Some(t) = target {
            if self.wall_instance(t).is_none() {
                return Err(KernelError::not_found("wall instance", t));
            }
        }
        let existing = self.wall_type_by_name(&spec.wall_detail_name).map(|t| t.id.clone());
        let (type_id, verb) = match existing {
            Some(id) if reusable.contains(&id) => {
                let rev = self.modify_wall_type(&id, spec.clone())?.revision;
                (id, format!("updated (revision {rev})"))
            }
            Some(_) => return Err(KernelError::DuplicateName(spec.wall_detail_name)),
            None => (self.create_wall_type(spec.clone())?, "created".to_string()),
        };
        let mut mutated_ids = vec![type_id.to_string()];
        let mut summary = format!(
            "Wall type '{}' {} as {}: {} layers, {} mm total",
            spec.wall_detail_name,
            verb,
            type_id,
            spec.layers.len(),
            format_mm(spec.total_thickness())
        );
        if let Some(t) = target {
            self.replace_wall_type(t, &type_id)?;
            mutated_ids.push(t.to_string());
            summary.push_str(&format!("; wall {t} now uses it"));
        }
        Ok(ExecutionResult {
            mutated_ids,
            produced_spec: Some(spec),
            summary,
        })
    }

    pub fn set_non_compliant(&mut self, id: &WallTypeId, flag: bool) -> Result<()> {
        let idx = self.type_index(id)?;
        self.wall_types[idx].non_compliant = flag;
        Ok(())
    }

    /// Rotates every instance baseline about the origin in plan, counter-clockwise.
    pub fn rotate_plan(&mut self, degrees: f64) -> Vec<WallInstanceId> {
        let (s, c) = degrees.to_radians().sin_cos();
        let rot = |p: Point2| Point2::new(p.x * c - p.y * s, p.x * s + p.y * c);
        self.wall_instances
            .iter_mut()
            .map(|w| {
                w.baseline.start = rot(w.baseline.start);
                w.baseline.end = rot(w.baseline.end);
                w.id.clone()
            })
            .collect()
    }

    /// Referential integrity and uniqueness. Returns the path of the first problem found.
    pub fn check_integrity(&self) -> std::result::Result<(), String> {
        let mut names = BTreeSet::new();
        for (i, m) in self.material_library.iter().enumerate() {
            if !names.insert(normalize_term(&m.name)) {
                return Err(format!("material_library[{i}].name: duplicate '{}'", m.name));
            }
            if !(m.thermal_conductivity.is_finite() && m.thermal_conductivity > 0.0) {
                return Err(format!("material_library[{i}].thermal_conductivity: must be > 0"));
            }
        }
        let mut type_ids = BTreeSet::new();
        for (i, t) in self.wall_types.iter().enumerate() {
            if !type_ids.insert(&t.id) {
                return Err(format!("wall_types[{i}].id: duplicate '{}'", t.id));
            }
            if let Err(e) = t.spec.validate() {
                return Err(format!("wall_types[{i}].spec.{e}"));
            }
            for (j, l) in t.spec.layers.iter().enumerate() {
                if self.material_by_name(&l.material).is_none() {
                    return Err(format!(
                        "wall_types[{i}].spec.layers[{j}].material: unresolved '{}'",
                        l.material
                    ));
                }
            }
        }
        let mut inst_ids = BTreeSet::new();
        for (i, w) in self.wall_instances.iter().enumerate() {
            if !inst_ids.insert(&w.id) {
                return Err(format!("wall_instances[{i}].id: duplicate '{}'", w.id));
            }
            if !type_ids.contains(&w.wall_type) {
                return Err(format!("wall_instances[{i}].wall_type: unresolved '{}'", w.wall_type));
            }
        }
        Ok(())
    }
}

/// Renders a millimeter value without trailing zeros (`165`, `12.5`).
pub fn format_mm(v: f64) -> String {
    let rounded = (v * 1e6).round() / 1e6;
    if rounded.fract() == 0.0 {
        format!("{rounded:.0}")
    } else {
        let s = format!("{rounded:.6}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}
