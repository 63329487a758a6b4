//! Map file formats: plain PGM (P2) for viewing, CSV for exact round-trips.

use std::path::Path;

use crate::attention::AttentionMap;
use crate::error::{Error, Result};

/// P2 PGM with maxval 255; each value is `round(255 * v)` clamped to 0..=255.
pub fn grid_to_pgm(side: usize, values: &[f64]) -> String {
    let mut out = format!("P2\n{side} {side}\n255\n");
    for row in values.chunks(side) {
        let line: Vec<String> = row
            .iter()
            .map(|v| ((255.0 * v).round().clamp(0.0, 255.0) as u8).to_string())
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn map_to_pgm(map: &AttentionMap) -> String {
    grid_to_pgm(map.side(), map.scores())
}

/// H lines of W comma-separated values, printed with round-trip precision.
pub fn map_to_csv(map: &AttentionMap) -> String {
    let mut out = String::new();
    for row in map.scores().chunks(map.width()) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn map_from_csv(text: &str) -> Result<AttentionMap> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut scores = Vec::new();
    let mut height = 0;
    let mut width = None;
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse(e.to_string()))?;
        if width.is_some_and(|w| w != record.len()) {
            return Err(Error::Parse(format!(
                "row {} has {} values",
                line + 1,
                record.len()
            )));
        }
        width = Some(record.len());
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| {
                Error::Parse(format!("row {}: '{field}' is not a number", line + 1))
            })?;
            scores.push(v);
        }
        height += 1;
    }
    let width = width.ok_or_else(|| Error::Parse("empty map file".into()))?;
    AttentionMap::new(height, width, scores).map_err(|e| Error::Parse(e.to_string()))
}

pub fn read_map_csv(path: &Path) -> Result<AttentionMap> {
    let text = std::fs::read_to_string(path)?;
    map_from_csv(&text)
}
