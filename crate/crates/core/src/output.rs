//! Persistence formats: deterministic CSV, JSON summaries, the binary
//! field-snapshot container, and the run manifest. The parsers are pure
//! functions over byte slices so they can be exercised in isolation.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

/// Magic prefix of a field snapshot file.
pub const SNAPSHOT_MAGIC: &[u8; 4] = b"NLH1";
/// Sanity cap on the JSON header length.
pub const MAX_HEADER_LEN: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub field: String,
    pub epsilon: f64,
    pub time: f64,
    pub n_nodes: usize,
    pub dx: f64,
    pub seed: u64,
}

/// Layout: magic, u32 LE header length, JSON header, f64 LE payload.
pub fn encode_snapshot(header: &SnapshotHeader, data: &[f64]) -> Result<Vec<u8>> {
    if header.n_nodes != data.len() {
        return Err(Error::Format(format!(
            "snapshot header declares {} nodes but payload has {}",
            header.n_nodes,
            data.len()
        )));
    }
    let json = serde_json::to_vec(header).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(8 + json.len() + 8 * data.len());
    out.extend_from_slice(SNAPSHOT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Parses the header portion; returns the header and the payload offset.
pub fn parse_snapshot_header(bytes: &[u8]) -> Result<(SnapshotHeader, usize)> {
    if bytes.len() < 8 {
        return Err(Error::Format("snapshot truncated before header length".into()));
    }
    if &bytes[..4] != SNAPSHOT_MAGIC {
        return Err(Error::Format("bad snapshot magic".into()));
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if len > MAX_HEADER_LEN {
        return Err(Error::Format(format!("snapshot header length {len} exceeds cap")));
    }
    let end = 8usize.checked_add(len).ok_or_else(|| Error::Format("header overflow".into()))?;
    if bytes.len() < end {
        return Err(Error::Format("snapshot truncated inside header".into()));
    }
    let header: SnapshotHeader = serde_json::from_slice(&bytes[8..end])
        .map_err(|e| Error::Format(format!("snapshot header json: {e}")))?;
    Ok((header, end))
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<(SnapshotHeader, Vec<f64>)> {
    let (header, offset) = parse_snapshot_header(bytes)?;
    let payload = &bytes[offset..];
    if payload.len() != 8 * header.n_nodes {
        return Err(Error::Format(format!(
            "snapshot payload is {} bytes, header declares {} nodes",
            payload.len(),
            header.n_nodes
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, data))
}

pub fn write_snapshot(path: &Path, header: &SnapshotHeader, data: &[f64]) -> Result<()> {
    let bytes = encode_snapshot(header, data)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<(SnapshotHeader, Vec<f64>)> {
    decode_snapshot(&std::fs::read(path)?)
}

/// Deterministic CSV: fixed 17-significant-digit scientific notation, so a
/// rerun with the same seeds is byte-identical.
pub fn format_csv(headers: &[&str], rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    out.push_str(&headers.join(","));
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_csv(path: &Path, headers: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(format_csv(headers, rows).as_bytes())?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let text = std::fs::read_to_string(path)?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let headers: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Format("empty csv".into()))?
        .split(',')
        .map(|s| s.to_string())
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|c| c.parse::<f64>()).collect();
        let row = row.map_err(|e| Error::Format(format!("csv row {}: {e}", i + 2)))?;
        if row.len() != headers.len() {
            return Err(Error::Format(format!("csv row {} has {} cells", i + 2, row.len())));
        }
        rows.push(row);
    }
    Ok((headers, rows))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub status: String,
    pub outputs: Vec<String>,
}

/// The run manifest ties every artifact to the config hash and seed that
/// produced it; stages completed under the same hash are skippable.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub seed: u64,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn parse_manifest(bytes: &[u8]) -> Result<RunManifest> {
    serde_json::from_slice(bytes).map_err(|e| Error::Format(format!("manifest json: {e}")))
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<RunManifest> {
        parse_manifest(&std::fs::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json =
            serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn stage_done(&self, stage: &str, out_dir: &Path) -> bool {
        self.stages.get(stage).is_some_and(|rec| {
            rec.status == "done" && rec.outputs.iter().all(|f| out_dir.join(f).exists())
        })
    }

    pub fn mark_done(&mut self, stage: &str, outputs: Vec<String>) {
        self.stages.insert(stage.to_string(), StageRecord { status: "done".into(), outputs });
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, json)?;
    Ok(())
}
