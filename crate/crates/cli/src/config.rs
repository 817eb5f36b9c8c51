//! Config files and flag overrides.
//!
//! A config is a JSON object. Top-level keys are parameters of whichever
//! subcommand runs; an object stored under the subcommand's name (for
//! example `"meshalkin-verify"`) is layered on top of them, and flags given
//! on the command line win over both. Keys may use `-` or `_`.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::Failure;

pub fn load(path: &Path) -> Result<Map<String, Value>, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    match serde_json::from_str(&text) {
        Ok(Value::Object(m)) => Ok(normalize(m)),
        Ok(_) => Err(Failure::Config(format!("{} must hold a JSON object", path.display()))),
        Err(e) => Err(Failure::Config(format!("cannot parse {}: {e}", path.display()))),
    }
}

fn normalize(m: Map<String, Value>) -> Map<String, Value> {
    m.into_iter().map(|(k, v)| (k.replace('-', "_"), v)).collect()
}

/// The config layer for `command` (written with dashes).
pub fn section(config: &Map<String, Value>, command: &str) -> Map<String, Value> {
    let mut out: Map<String, Value> = config.iter().filter(|(_, v)| !v.is_object()).map(|(k, v)| (k.clone(), v.clone())).collect();
    if let Some(Value::Object(sub)) = config.get(&command.replace('-', "_")) {
        out.extend(normalize(sub.clone()));
    }
    out
}

/// Parameters from `flags` over `layer`. Flags serialize only the values the
/// user actually gave.
pub fn resolve<T: Serialize + DeserializeOwned>(flags: &T, mut layer: Map<String, Value>) -> Result<T, Failure> {
    let given = serde_json::to_value(flags).map_err(|e| Failure::Config(e.to_string()))?;
    if let Value::Object(m) = given {
        layer.extend(m.into_iter().filter(|(_, v)| !v.is_null()));
    }
    serde_json::from_value(Value::Object(layer)).map_err(|e| Failure::Config(format!("bad parameter: {e}")))
}

pub fn require<T>(value: Option<T>, name: &str) -> Result<T, Failure> {
    value.ok_or_else(|| Failure::Config(format!("missing parameter --{}", name.replace('_', "-"))))
}
