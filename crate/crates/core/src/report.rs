//! Experiment manifests and the JSON report envelope.

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Version of the report layout.
pub const SCHEMA_VERSION: u32 = 1;

/// What produced a result file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub subcommand: String,
    pub parameters: Value,
    pub seed: u64,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
    pub code_version: String,
    pub schema_version: u32,
}

impl ExperimentManifest {
    pub fn new(subcommand: &str, parameters: Value, seed: u64) -> Self {
        ExperimentManifest {
            subcommand: subcommand.to_string(),
            parameters,
            seed,
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            schema_version: SCHEMA_VERSION,
        }
    }
}

/// A result together with its manifest and overall verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub manifest: ExperimentManifest,
    pub pass: bool,
    pub result: Value,
}

impl Report {
    pub fn new<T: Serialize>(manifest: ExperimentManifest, pass: bool, result: &T) -> serde_json::Result<Self> {
        Ok(Report { manifest, pass, result: serde_json::to_value(result)? })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// JSON with the timestamp zeroed, for comparing reruns.
    pub fn canonical_json(&self) -> String {
        let mut r = self.clone();
        r.manifest.timestamp = 0;
        r.to_json()
    }
}

/// A CSV table with a header row.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let quote = |s: &String| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.clone()
            }
        };
        let mut out = String::new();
        for row in std::iter::once(&self.header).chain(&self.rows) {
            out.push_str(&row.iter().map(quote).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }
}
