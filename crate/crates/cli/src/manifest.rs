use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::Value;

use gats_core::anchor::ANCHOR_FORMAT_VERSION;
use gats_core::archive::{CORPUS_FORMAT_VERSION, PRIMITIVE_FORMAT_VERSION};
use gats_core::diffusion::CHECKPOINT_VERSION;
use gats_core::dtz::FORMAT_VERSION as DTZ_FORMAT_VERSION;

pub const FILE_NAME: &str = "run_manifest.json";

pub fn format_versions() -> BTreeMap<&'static str, u32> {
    BTreeMap::from([
        ("dtz", DTZ_FORMAT_VERSION as u32),
        ("anchor", ANCHOR_FORMAT_VERSION),
        ("corpus", CORPUS_FORMAT_VERSION),
        ("primitive", PRIMITIVE_FORMAT_VERSION),
        ("checkpoint", CHECKPOINT_VERSION as u32),
    ])
}

pub fn long_version() -> String {
    let formats: Vec<String> = format_versions()
        .iter()
        .map(|(k, v)| format!("{k} v{v}"))
        .collect();
    format!("{} (formats: {})", env!("CARGO_PKG_VERSION"), formats.join(", "))
}

/// Provenance record written next to every artifact.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub format_versions: BTreeMap<&'static str, u32>,
    pub command: String,
    pub argv: Vec<String>,
    pub config: Value,
    pub seed: u64,
    pub threads: Option<usize>,
    pub anchor_hashes: BTreeMap<String, String>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub extra: BTreeMap<String, Value>,
    pub started_unix: u64,
    pub finished_unix: u64,
}

fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl RunManifest {
    pub fn start(command: &str, config: impl Serialize, seed: u64, threads: Option<usize>) -> Self {
        Self {
            tool: "gats",
            version: env!("CARGO_PKG_VERSION"),
            format_versions: format_versions(),
            command: command.to_string(),
            argv: std::env::args().collect(),
            config: serde_json::to_value(config).unwrap_or(Value::Null),
            seed,
            threads,
            anchor_hashes: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            extra: BTreeMap::new(),
            started_unix: now(),
            finished_unix: 0,
        }
    }

    pub fn input(&mut self, p: &Path) {
        self.inputs.push(p.display().to_string());
    }

    pub fn output(&mut self, p: &Path) {
        self.outputs.push(p.display().to_string());
    }

    /// 1-based mode keys.
    pub fn anchors<'a>(&mut self, hashes: impl IntoIterator<Item = (usize, &'a String)>) {
        for (k, h) in hashes {
            self.anchor_hashes.insert((k + 1).to_string(), h.clone());
        }
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.extra
            .insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
    }

    pub fn write(mut self, dir: &Path) -> Result<()> {
        self.finished_unix = now();
        std::fs::create_dir_all(dir)?;
        let path = dir.join(FILE_NAME);
        std::fs::write(&path, serde_json::to_string_pretty(&self)?)
            .with_context(|| format!("writing {}", path.display()))
    }
}
