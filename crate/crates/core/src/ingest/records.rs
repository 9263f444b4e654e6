use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GeoPoint, Mineral};

/// One mineral occurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct OccurrenceRecord {
    pub id: String,
    pub loc: GeoPoint,
    pub mineral: Mineral,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    id: String,
    lon: f64,
    lat: f64,
    mineral: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MalformedLine {
    /// 1-based line number.
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedRecords {
    pub records: Vec<OccurrenceRecord>,
    pub malformed: Vec<MalformedLine>,
}

fn parse_line(text: &str) -> std::result::Result<OccurrenceRecord, String> {
    let raw: RecordLine = serde_json::from_str(text).map_err(|e| e.to_string())?;
    if !raw.lon.is_finite() || !raw.lat.is_finite() {
        return Err(format!("non-finite location ({}, {})", raw.lon, raw.lat));
    }
    let mineral =
        Mineral::from_index(raw.mineral).ok_or_else(|| format!("mineral index {} out of range", raw.mineral))?;
    Ok(OccurrenceRecord { id: raw.id, loc: GeoPoint::new(raw.lon, raw.lat), mineral })
}

/// Reads newline-delimited records. Blank lines are ignored; malformed lines
/// are skipped and reported with their line numbers.
pub fn parse_records(path: impl AsRef<Path>) -> Result<ParsedRecords> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut parsed = ParsedRecords::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(&line) {
            Ok(r) => parsed.records.push(r),
            Err(reason) => parsed.malformed.push(MalformedLine { line: i + 1, reason }),
        }
    }
    Ok(parsed)
}

pub fn write_records(path: impl AsRef<Path>, records: &[OccurrenceRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for r in records {
        let line = RecordLine {
            id: r.id.clone(),
            lon: r.loc.lon,
            lat: r.loc.lat,
            mineral: r.mineral.index(),
        };
        serde_json::to_writer(&mut out, &line).map_err(|e| Error::Manifest(e.to_string()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
