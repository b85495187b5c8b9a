//! JSONL ingestion for attention standards and judge/human label files.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use cellground_core::table::{CellMask, MaskProvenance, Table};

#[derive(Debug, Error)]
pub enum StandardsError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Record {
        path: String,
        line: usize,
        reason: String,
    },
}

/// Wire form of one attention-standard record.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawStandard {
    id: String,
    dataset: String,
    question: String,
    table: Table,
    mask: Vec<Vec<u8>>,
}

/// A validated attention standard: question, table, and the human
/// cell-relevance mask over it.
#[derive(Debug, Clone)]
pub struct Standard {
    pub id: String,
    pub dataset: String,
    pub question: String,
    pub table: Table,
    pub mask: CellMask,
}

fn validate(raw: RawStandard) -> Result<Standard, String> {
    if raw.mask.len() != raw.table.n_rows() {
        return Err(format!(
            "mask has {} rows, table has {}",
            raw.mask.len(),
            raw.table.n_rows()
        ));
    }
    let mut bits = Vec::with_capacity(raw.table.n_rows() * raw.table.n_cols());
    for (r, row) in raw.mask.iter().enumerate() {
        if row.len() != raw.table.n_cols() {
            return Err(format!(
                "mask row {r} has {} cells, table has {} columns",
                row.len(),
                raw.table.n_cols()
            ));
        }
        for &b in row {
            match b {
                0 => bits.push(false),
                1 => bits.push(true),
                other => return Err(format!("mask bit {other} is not 0 or 1")),
            }
        }
    }
    let mask = CellMask::from_bits(
        raw.table.n_rows(),
        raw.table.n_cols(),
        bits,
        MaskProvenance::Oracle,
    )
    .map_err(|e| e.to_string())?;
    Ok(Standard {
        id: raw.id,
        dataset: raw.dataset,
        question: raw.question,
        table: raw.table,
        mask,
    })
}

/// Load one standard per JSONL line. Blank lines are skipped; any malformed
/// line is an error carrying its line number.
pub fn load_standards(path: &Path) -> Result<Vec<Standard>, StandardsError> {
    let text = fs::read_to_string(path).map_err(|source| StandardsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawStandard = serde_json::from_str(line).map_err(|e| StandardsError::Record {
            path: path.display().to_string(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(validate(raw).map_err(|reason| StandardsError::Record {
            path: path.display().to_string(),
            line: i + 1,
            reason,
        })?);
    }
    Ok(out)
}

/// Serialize one standard back to its JSONL wire form (used by tests and
/// fixture generators).
pub fn standard_to_json(s: &Standard) -> String {
    let mask: Vec<Vec<u8>> = (0..s.table.n_rows())
        .map(|r| {
            (0..s.table.n_cols())
                .map(|c| u8::from(s.mask.get(r, c)))
                .collect()
        })
        .collect();
    serde_json::to_string(&RawStandard {
        id: s.id.clone(),
        dataset: s.dataset.clone(),
        question: s.question.clone(),
        table: s.table.clone(),
        mask,
    })
    .expect("standard serializes")
}

/// Decision unit of a label record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelUnit {
    Cell,
    Step,
}

impl LabelUnit {
    pub fn as_str(&self) -> &'static str {
        match self {
            LabelUnit::Cell => "cell",
            LabelUnit::Step => "step",
        }
    }
}

/// One judged or human label over a cell or step decision.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelRecord {
    pub id: String,
    pub dataset: String,
    pub unit: LabelUnit,
    pub label: String,
}

pub fn load_labels(path: &Path) -> Result<Vec<LabelRecord>, StandardsError> {
    let text = fs::read_to_string(path).map_err(|source| StandardsError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelRecord = serde_json::from_str(line).map_err(|e| StandardsError::Record {
            path: path.display().to_string(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn round_trips_and_validates() {
        let line = r#"{"id":"r1","dataset":"wtq","question":"how many?","table":{"columns":["A","B"],"rows":[["1","2"]]},"mask":[[1,0]]}"#;
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(file, "{line}").unwrap();
        let recs = load_standards(file.path()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].mask.count_ones(), 1);
        assert_eq!(recs[0].mask.provenance(), MaskProvenance::Oracle);
        let back = standard_to_json(&recs[0]);
        let reparsed: serde_json::Value = serde_json::from_str(&back).unwrap();
        let orig: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(reparsed, orig);
    }

    #[test]
    fn shape_mismatch_is_line_attributed() {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        writeln!(
            file,
            r#"{{"id":"r1","dataset":"d","question":"q","table":{{"columns":["A"],"rows":[["1"]]}},"mask":[[1,0]]}}"#
        )
        .unwrap();
        match load_standards(file.path()) {
            Err(StandardsError::Record { line: 1, .. }) => {}
            other => panic!("expected record error, got {other:?}"),
        }
    }
}
