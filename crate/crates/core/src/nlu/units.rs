use std::sync::LazyLock;

use regex::Regex;

use super::LayerDraft;
use crate::kernel::LayerFunction;

static LENGTH: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r#"(?i)(\d+(?:\.\d+)?)\s*(millimet(?:er|re)s?|mm|centimet(?:er|re)s?|cm|met(?:er|re)s?|m|inch(?:es)?|in|")?(?:\b|$|\s)"#,
    )
    .expect("length regex")
});

/// First length in `text`, converted to millimeters. Bare numbers are millimeters.
///
/// Returns `None` when no positive number is present.
pub fn parse_length_mm(text: &str) -> Option<f64> {
    let caps = LENGTH.captures(text)?;
    let value: f64 = caps[1].parse().ok()?;
    let factor = match caps.get(2).map(|m| m.as_str().to_ascii_lowercase()) {
        None => 1.0,
        Some(u) if u.starts_with("mm") || u.starts_with("milli") => 1.0,
        Some(u) if u.starts_with("cm") || u.starts_with("centi") => 10.0,
        Some(u) if u == "m" || u.starts_with("met") => 1000.0,
        Some(_) => 25.4,
    };
    let mm = (value * factor * 1e6).round() / 1e6;
    (mm > 0.0 && mm.is_finite()).then_some(mm)
}

/// Parses a free-text layer list such as `"brick veneer 90 mm, mineral wool 150mm, timber stud 140"`.
/// Items are separated by commas or semicolons; each is a material name optionally followed by a thickness.
pub fn parse_assembly(text: &str) -> Option<Vec<LayerDraft>> {
    let mut layers = Vec::new();
    for item in text.split([',', ';']) {
        let item = item.trim();
        if item.is_empty() {
            continue;
        }
        let (material, thickness) = match LENGTH.find(item) {
            Some(m) => (item[..m.start()].trim(), parse_length_mm(m.as_str())),
            None => (item, None),
        };
        let material = material.trim_end_matches(['-', ':']).trim();
        if material.is_empty() {
            return None;
        }
        layers.push(LayerDraft {
            material: material.to_string(),
            layer_type: None::<LayerFunction>,
            thickness,
        });
    }
    (!layers.is_empty()).then_some(layers)
}
