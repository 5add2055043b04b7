//! Builds the effective configuration: command defaults, then flags, then
//! any keys present in the config file.

use std::path::Path;

use hte_core::{HteError, Result, WorkflowConfig};

/// Overlays every key of `file` onto `base`; nested tables merge key by key.
fn merge(base: &mut toml::Table, file: toml::Table) {
    for (key, value) in file {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(f)) => merge(b, f),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

pub fn overlay_file(config: WorkflowConfig, path: Option<&Path>) -> Result<WorkflowConfig> {
    let Some(path) = path else {
        config.validate()?;
        return Ok(config);
    };
    let text = std::fs::read_to_string(path).map_err(|e| HteError::io(path, e))?;
    let bad = |e: String| HteError::Config(format!("{}: {e}", path.display()));
    let file: toml::Table = toml::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let mut table = toml::Table::try_from(&config).map_err(|e| bad(e.to_string()))?;
    merge(&mut table, file);
    let merged: WorkflowConfig = table.try_into().map_err(|e: toml::de::Error| bad(e.to_string()))?;
    merged.validate()?;
    Ok(merged)
}
