use std::fs;
use std::io::Write;
use std::path::Path;

use super::{KernelError, Project, Result, SCHEMA_VERSION};

/// Writes the project as pretty-printed UTF-8 JSON, replacing the target atomically.
pub fn save_project(project: &Project, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(project).map_err(|e| KernelError::CorruptFile {
        location: "<serialize>".into(),
        message: e.to_string(),
    })?;
    let tmp = path.with_extension("json.tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(json.as_bytes())?;
        f.write_all(b"\n")?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_project(path: impl AsRef<Path>) -> Result<Project> {
    let text = fs::read_to_string(path)?;
    parse_project(&text)
}

pub(crate) fn parse_project(text: &str) -> Result<Project> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(corrupt)?;
    match value.get("schema_version").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        Some(found) => {
            return Err(KernelError::SchemaVersionMismatch {
                found,
                expected: SCHEMA_VERSION,
            })
        }
        None => {
            return Err(KernelError::CorruptFile {
                location: "schema_version".into(),
                message: "missing or not an integer".into(),
            })
        }
    }
    let project: Project = serde_json::from_value(value).map_err(|e| KernelError::CorruptFile {
        location: "<document>".into(),
        message: e.to_string(),
    })?;
    project
        .check_integrity()
        .map_err(|location| KernelError::CorruptFile {
            message: "integrity violation".into(),
            location,
        })?;
    Ok(project)
}

fn corrupt(e: serde_json::Error) -> KernelError {
    KernelError::CorruptFile {
        location: format!("line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    }
}
