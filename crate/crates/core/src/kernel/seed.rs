use serde::Deserialize;

use super::{LayerFunction, Project};

#[derive(Debug, Clone, Deserialize)]
pub struct SeedMaterial {
    pub name: String,
    pub default_layer_type: LayerFunction,
    pub thermal_conductivity: f64,
    #[serde(default)]
    pub aliases: Vec<String>,
}

const SEED_MATERIALS: &str = include_str!("../../data/seed_materials.json");

/// Fixture material library. Conductivities are typical handbook magnitudes, not certified data.
pub fn seed_materials() -> Vec<SeedMaterial> {
    serde_json::from_str(SEED_MATERIALS).expect("bundled seed library is valid JSON")
}

/// An empty project pre-loaded with the fixture material library.
pub fn seeded_project() -> Project {
    let mut project = Project::empty();
    for m in seed_materials() {
        project
            .add_material(&m.name, m.default_layer_type, m.thermal_conductivity, m.aliases)
            .expect("bundled seed library has unique names");
    }
    project
}
