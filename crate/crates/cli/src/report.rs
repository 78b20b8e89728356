//! Report documents, the run manifest and input ingestion.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use mscs_core::data::{parse_observations, ParseError};
use mscs_core::Sample;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Everything needed to rerun a command and get the same bytes back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub options: serde_json::Value,
    pub seeds: Vec<(String, u64)>,
    pub version: String,
    pub input_sha256: Option<String>,
}

impl RunManifest {
    pub fn new(command: &str, options: impl Serialize, seeds: Vec<(String, u64)>, input: Option<&Input>) -> Result<Self> {
        Ok(RunManifest {
            command: command.to_string(),
            options: serde_json::to_value(options)?,
            seeds,
            version: env!("CARGO_PKG_VERSION").to_string(),
            input_sha256: input.map(|i| i.digest.clone()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<T> {
    pub manifest: RunManifest,
    pub result: T,
}

/// Summary of the observations a report was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub n: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub sd: f64,
}

impl DataSummary {
    pub fn of(s: &Sample) -> Self {
        DataSummary {
            n: s.len(),
            min: s.min(),
            max: s.max(),
            mean: s.mean(),
            sd: s.variance().sqrt(),
        }
    }
}

/// A parsed observation file.
pub struct Input {
    pub sample: Sample,
    pub digest: String,
}

pub fn read_input(path: &Path) -> Result<Input> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    let text = String::from_utf8(bytes.clone())
        .with_context(|| format!("{} is not UTF-8 text", path.display()))?;
    let parsed = parse_observations(&text).map_err(|e: ParseError| {
        anyhow::anyhow!("{}: {e}", path.display())
    })?;
    for note in &parsed.notices {
        log::warn!("{}: {note}", path.display());
    }
    let sample = Sample::new(parsed.values)?;
    Ok(Input {
        sample,
        digest: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Writes `value` as pretty JSON to `out`, or stdout when absent.
pub fn emit_json(value: &impl Serialize, out: Option<&Path>) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    emit_text(&s, out)
}

pub fn emit_text(s: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, s).with_context(|| format!("cannot write {}", p.display())),
        None => {
            print!("{s}");
            Ok(())
        }
    }
}
