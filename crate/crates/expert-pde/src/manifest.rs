//! Run manifests: one JSON file next to every artifact a command writes.
//! Timestamps live here and nowhere else, so the artifacts themselves are
//! byte-reproducible.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use chrono::{DateTime, SecondsFormat, Utc};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct RunManifest<C: Serialize, S: Serialize> {
    pub command: &'static str,
    pub argv: Vec<String>,
    pub version: &'static str,
    pub threads: usize,
    pub started_at: String,
    pub finished_at: String,
    pub config: C,
    pub outputs: Vec<PathBuf>,
    pub summary: S,
}

/// `report.csv` → `report.csv.manifest.json`.
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut p = output.as_os_str().to_owned();
    p.push(".manifest.json");
    PathBuf::from(p)
}

pub fn timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

impl<C: Serialize, S: Serialize> RunManifest<C, S> {
    pub fn new(command: &'static str, threads: usize, started: DateTime<Utc>, config: C, outputs: Vec<PathBuf>, summary: S) -> Self {
        Self {
            command,
            argv: std::env::args().collect(),
            version: env!("CARGO_PKG_VERSION"),
            threads,
            started_at: timestamp(started),
            finished_at: timestamp(Utc::now()),
            config,
            outputs,
            summary,
        }
    }

    /// Writes the manifest beside `primary` and returns its path.
    pub fn write_beside(&self, primary: &Path) -> anyhow::Result<PathBuf> {
        let path = manifest_path(primary);
        let json = serde_json::to_string_pretty(self)?;
        fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
