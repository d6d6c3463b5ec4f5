//! Config loading: built-in presets, JSON files and manifests of earlier
//! runs, plus the canonical hash recorded in every manifest.

use std::fs;
use std::path::Path;

use probesched::sim::ExperimentConfig;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

/// Presets shipped with the binary, by name.
pub const PRESETS: [(&str, &str); 6] = [
    ("fig3", include_str!("../../../presets/fig3.json")),
    ("fig4", include_str!("../../../presets/fig4.json")),
    ("fig5", include_str!("../../../presets/fig5.json")),
    ("fig6", include_str!("../../../presets/fig6.json")),
    ("fig7", include_str!("../../../presets/fig7.json")),
    ("fig8", include_str!("../../../presets/fig8.json")),
];

/// Where the config came from, kept for the manifest.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: ExperimentConfig,
    pub preset: Option<String>,
    /// Subcommand recorded in a manifest passed as `--config`.
    pub manifest_command: Option<String>,
}

pub fn load(preset: Option<&str>, path: Option<&Path>) -> Result<Loaded, CliError> {
    match (preset, path) {
        (Some(_), Some(_)) => Err(CliError::Usage("--preset and --config are mutually exclusive".into())),
        (Some(name), None) => {
            let text = PRESETS
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| *t)
                .ok_or_else(|| {
                    let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
                    CliError::Usage(format!("unknown preset `{name}`; available: {}", names.join(", ")))
                })?;
            Ok(Loaded {
                config: parse_config(parse_json(text, name)?, name)?,
                preset: Some(name.to_string()),
                manifest_command: None,
            })
        }
        (None, Some(path)) => {
            let shown = path.display().to_string();
            let text =
                fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read config {shown}: {e}")))?;
            let mut value = parse_json(&text, &shown)?;
            // a manifest embeds the config it ran with
            let mut manifest_command = None;
            let mut preset = None;
            if let Some(obj) = value.as_object_mut() {
                if obj.contains_key("config_hash") {
                    manifest_command = obj.get("command").and_then(Value::as_str).map(String::from);
                    preset = obj.get("preset").and_then(Value::as_str).map(String::from);
                    value = obj
                        .remove("config")
                        .ok_or_else(|| CliError::Usage(format!("manifest {shown} has no `config` entry")))?;
                }
            }
            Ok(Loaded {
                config: parse_config(value, &shown)?,
                preset,
                manifest_command,
            })
        }
        (None, None) => Ok(Loaded {
            config: ExperimentConfig::default(),
            preset: None,
            manifest_command: None,
        }),
    }
}

fn parse_json(text: &str, origin: &str) -> Result<Value, CliError> {
    serde_json::from_str(text).map_err(|e| CliError::Usage(format!("{origin}: invalid JSON: {e}")))
}

fn parse_config(value: Value, origin: &str) -> Result<ExperimentConfig, CliError> {
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("{origin}: {e}")))
}

/// The config as JSON with object keys sorted at every level.
pub fn canonical_json(config: &ExperimentConfig) -> Value {
    fn sort(v: Value) -> Value {
        match v {
            Value::Object(map) => {
                let mut entries: Vec<(String, Value)> = map.into_iter().collect();
                entries.sort_by(|a, b| a.0.cmp(&b.0));
                Value::Object(entries.into_iter().map(|(k, v)| (k, sort(v))).collect())
            }
            Value::Array(items) => Value::Array(items.into_iter().map(sort).collect()),
            other => other,
        }
    }
    sort(serde_json::to_value(config).expect("config serializes"))
}

/// SHA-256 of the compact canonical JSON, hex encoded.
pub fn config_hash(config: &ExperimentConfig) -> String {
    let text = serde_json::to_string(&canonical_json(config)).expect("value serializes");
    format!("{:x}", Sha256::digest(text.as_bytes()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_parses_and_validates() {
        for (name, _) in PRESETS {
            let loaded = load(Some(name), None).unwrap();
            loaded.config.validate().unwrap();
        }
    }

    #[test]
    fn hash_ignores_key_order() {
        let a: ExperimentConfig = serde_json::from_str(r#"{"users": 7, "beta": 0.2, "seed": 3}"#).unwrap();
        let b: ExperimentConfig = serde_json::from_str(r#"{"seed": 3, "beta": 0.2, "users": 7}"#).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        let c = ExperimentConfig { seed: 4, ..a };
        assert_ne!(config_hash(&b), config_hash(&c));
    }

    #[test]
    fn unknown_preset_is_a_usage_error() {
        assert!(matches!(load(Some("fig9"), None), Err(CliError::Usage(_))));
    }
}
