//! Observation files and the bundled galaxy velocity data.

use crate::error::{MscsError, Result};
use crate::mixture::Sample;

/// Velocities of 82 galaxies, in units of 1000 km/s.
pub const GALAXY_TXT: &str = include_str!("../data/galaxy.txt");

/// A parse failure with the 1-based line number that caused it.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("line {line}: cannot parse '{content}' as a number")]
pub struct ParseError {
    pub line: usize,
    pub content: String,
}

/// Parsed observations plus any notices (e.g. a skipped header).
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed {
    pub values: Vec<f64>,
    pub notices: Vec<String>,
}

/// Parses one observation per line. Blank lines and lines starting with `#`
/// are ignored; a single non-numeric first data line is treated as a header.
pub fn parse_observations(text: &str) -> std::result::Result<Parsed, ParseError> {
    let mut values = Vec::new();
    let mut notices = Vec::new();
    let mut seen_data = false;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            _ if !seen_data => notices.push(format!("skipped header line {}: '{line}'", i + 1)),
            _ => {
                return Err(ParseError {
                    line: i + 1,
                    content: line.to_string(),
                })
            }
        }
        seen_data = true;
    }
    Ok(Parsed { values, notices })
}

pub fn galaxy() -> Sample {
    let parsed = parse_observations(GALAXY_TXT).expect("bundled data parses");
    Sample::new(parsed.values).expect("bundled data is a valid sample")
}

/// Parses text straight into a sample.
pub fn sample_from_text(text: &str) -> Result<Sample> {
    let parsed =
        parse_observations(text).map_err(|e| MscsError::InvalidSample(e.to_string()))?;
    Sample::new(parsed.values)
}
