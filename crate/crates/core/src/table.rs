//! Table data model, canonical serialization with a cell-to-span index, and
//! binary cell masks.
//!
//! The serialization grammar is pipe-delimited with a header separator line:
//!
//! ```text
//! | Country | Capacity |
//! | --- | --- |
//! | Algeria | 1,200 |
//! ```
//!
//! Pipes, backslashes, and line breaks inside cells are escaped so that
//! `parse_table` is an exact inverse of `serialize` and every row occupies
//! exactly one line. Spans are byte ranges into the serialized text.

use std::collections::HashSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TableError {
    #[error("line {line}: {reason}")]
    MalformedTable { line: usize, reason: String },
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
    #[error("mask is {mask_rows}x{mask_cols} but table is {n_rows}x{n_cols}")]
    MaskShapeMismatch {
        mask_rows: usize,
        mask_cols: usize,
        n_rows: usize,
        n_cols: usize,
    },
    #[error("invalid table: {0}")]
    InvalidTable(String),
}

/// Rectangular table: an ordered header plus rows of string cells. Numeric
/// cells keep their literal text ("1,234", "12.5%"); interpretation is lazy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawTable", into = "RawTable")]
pub struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct RawTable {
    columns: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl TryFrom<RawTable> for Table {
    type Error = TableError;
    fn try_from(raw: RawTable) -> Result<Self, TableError> {
        Table::new(raw.columns, raw.rows)
    }
}

impl From<Table> for RawTable {
    fn from(t: Table) -> RawTable {
        RawTable {
            columns: t.columns,
            rows: t.rows,
        }
    }
}

impl Table {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self, TableError> {
        if columns.is_empty() {
            return Err(TableError::InvalidTable("zero columns".into()));
        }
        if columns.iter().any(|c| c.is_empty()) {
            return Err(TableError::InvalidTable("empty column name".into()));
        }
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(c.as_str()) {
                return Err(TableError::InvalidTable(format!("duplicate column {c:?}")));
            }
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != columns.len() {
                return Err(TableError::InvalidTable(format!(
                    "row {i} has {} cells, expected {}",
                    row.len(),
                    columns.len()
                )));
            }
        }
        Ok(Table { columns, rows })
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn cell(&self, row: usize, col: usize) -> Option<&str> {
        self.rows
            .get(row)
            .and_then(|r| r.get(col))
            .map(|s| s.as_str())
    }

    pub fn column_values(&self, col: usize) -> impl Iterator<Item = &str> {
        self.rows.iter().map(move |r| r[col].as_str())
    }

    /// Column lookup with case-insensitive, whitespace-normalized matching.
    /// Exact-only matching inflates fallback rates on real model output.
    pub fn resolve_column(&self, name: &str) -> Option<usize> {
        let want = normalize_name(name);
        self.columns.iter().position(|c| normalize_name(c) == want)
    }
}

/// Trim, collapse internal whitespace, and lowercase a column name.
pub fn normalize_name(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Numeric reading of a cell: strips thousands separators and one trailing
/// percent sign, then parses as f64. Returns None for everything else.
pub fn parse_numeric(text: &str) -> Option<f64> {
    let t = text.trim();
    if t.is_empty() {
        return None;
    }
    let mut s = t.replace(',', "");
    if let Some(stripped) = s.strip_suffix('%') {
        s = stripped.trim_end().to_string();
    }
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Where a mask came from. An all-ones mask is only meaningful together with
/// this flag: a parsed whole-table designation and the fallback for an
/// unparseable tag are different objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskProvenance {
    Parsed,
    UniformFallback,
    Oracle,
    Noised,
    NullShuffled,
}

/// Binary matrix over the cells of a table, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellMask {
    n_rows: usize,
    n_cols: usize,
    bits: Vec<bool>,
    provenance: MaskProvenance,
}

impl CellMask {
    pub fn filled(n_rows: usize, n_cols: usize, value: bool, provenance: MaskProvenance) -> Self {
        CellMask {
            n_rows,
            n_cols,
            bits: vec![value; n_rows * n_cols],
            provenance,
        }
    }

    pub fn zeros(n_rows: usize, n_cols: usize, provenance: MaskProvenance) -> Self {
        Self::filled(n_rows, n_cols, false, provenance)
    }

    /// The all-ones mask substituted when a step's target cannot be resolved.
    pub fn uniform_fallback(n_rows: usize, n_cols: usize) -> Self {
        Self::filled(n_rows, n_cols, true, MaskProvenance::UniformFallback)
    }

    pub fn from_bits(
        n_rows: usize,
        n_cols: usize,
        bits: Vec<bool>,
        provenance: MaskProvenance,
    ) -> Result<Self, TableError> {
        if bits.len() != n_rows * n_cols {
            return Err(TableError::InvalidTable(format!(
                "mask has {} bits, expected {}",
                bits.len(),
                n_rows * n_cols
            )));
        }
        Ok(CellMask {
            n_rows,
            n_cols,
            bits,
            provenance,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.n_cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.bits[row * self.n_cols + col] = value;
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn density(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.count_ones() as f64 / self.bits.len() as f64
        }
    }

    pub fn provenance(&self) -> MaskProvenance {
        self.provenance
    }

    pub fn with_provenance(mut self, provenance: MaskProvenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn matches_table(&self, table: &Table) -> bool {
        self.n_rows == table.n_rows() && self.n_cols == table.n_cols()
    }

    /// True when at least one cell of the column is set.
    pub fn column_any(&self, col: usize) -> bool {
        (0..self.n_rows).any(|r| self.get(r, col))
    }
}

/// Which text span an index entry belongs to. Header spans map to the column;
/// header tokens pool into their column downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpanOwner {
    Header(usize),
    Cell(usize, usize),
}

/// Byte ranges of every header and cell inside the canonical serialization.
/// Spans are pairwise disjoint and listed in document order; everything
/// between them is structural delimiter text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpanIndex {
    header_spans: Vec<Range<usize>>,
    cell_spans: Vec<Vec<Range<usize>>>,
    total_len: usize,
}

impl SpanIndex {
    pub fn n_cols(&self) -> usize {
        self.header_spans.len()
    }

    pub fn n_rows(&self) -> usize {
        self.cell_spans.len()
    }

    pub fn total_len(&self) -> usize {
        self.total_len
    }

    pub fn header_span(&self, col: usize) -> Option<&Range<usize>> {
        self.header_spans.get(col)
    }

    pub fn cell_span(&self, row: usize, col: usize) -> Option<&Range<usize>> {
        self.cell_spans.get(row).and_then(|r| r.get(col))
    }

    pub fn entry_count(&self) -> usize {
        self.header_spans.len() + self.cell_spans.iter().map(|r| r.len()).sum::<usize>()
    }

    /// All spans in document order.
    pub fn iter(&self) -> impl Iterator<Item = (SpanOwner, Range<usize>)> + '_ {
        let headers = self
            .header_spans
            .iter()
            .enumerate()
            .map(|(c, s)| (SpanOwner::Header(c), s.clone()));
        let cells = self.cell_spans.iter().enumerate().flat_map(|(r, row)| {
            row.iter()
                .enumerate()
                .map(move |(c, s)| (SpanOwner::Cell(r, c), s.clone()))
        });
        headers.chain(cells)
    }
}

fn push_escaped(out: &mut String, cell: &str) -> Range<usize> {
    let start = out.len();
    for ch in cell.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '|' => out.push_str("\\|"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    start..out.len()
}

/// Canonical serialization of a table plus the span index covering every
/// header and cell. Deterministic: equal tables yield identical bytes.
pub fn serialize(table: &Table) -> (String, SpanIndex) {
    let mut text = String::new();
    let mut header_spans = Vec::with_capacity(table.n_cols());
    for name in table.columns() {
        text.push_str("| ");
        header_spans.push(push_escaped(&mut text, name));
        text.push(' ');
    }
    text.push_str("|\n");
    for _ in 0..table.n_cols() {
        text.push_str("| --- ");
    }
    text.push_str("|\n");
    let mut cell_spans = Vec::with_capacity(table.n_rows());
    for row in table.rows() {
        let mut spans = Vec::with_capacity(row.len());
        for cell in row {
            text.push_str("| ");
            spans.push(push_escaped(&mut text, cell));
            text.push(' ');
        }
        text.push_str("|\n");
        cell_spans.push(spans);
    }
    let total_len = text.len();
    (
        text,
        SpanIndex {
            header_spans,
            cell_spans,
            total_len,
        },
    )
}

fn parse_row(line: &str, lineno: usize) -> Result<Vec<String>, TableError> {
    let malformed = |reason: &str| TableError::MalformedTable {
        line: lineno,
        reason: reason.to_string(),
    };
    let chars: Vec<char> = line.chars().collect();
    if chars.first() != Some(&'|') {
        return Err(malformed("row must start with '|'"));
    }
    let mut cells = Vec::new();
    let mut i = 1;
    while i < chars.len() {
        if chars[i] != ' ' {
            return Err(malformed("expected space after '|'"));
        }
        i += 1;
        let mut cell = String::new();
        loop {
            match chars.get(i) {
                None => return Err(malformed("unterminated row")),
                Some('|') => break,
                Some('\\') => {
                    i += 1;
                    match chars.get(i) {
                        Some('\\') => cell.push('\\'),
                        Some('|') => cell.push('|'),
                        Some('n') => cell.push('\n'),
                        Some('r') => cell.push('\r'),
                        _ => return Err(malformed("unknown escape")),
                    }
                    i += 1;
                }
                Some(&c) => {
                    cell.push(c);
                    i += 1;
                }
            }
        }
        if cell.pop() != Some(' ') {
            return Err(malformed("expected space before '|'"));
        }
        cells.push(cell);
        i += 1;
    }
    Ok(cells)
}

/// Inverse of [`serialize`] on its image.
pub fn parse_table(text: &str) -> Result<Table, TableError> {
    let mut lines: Vec<&str> = text.split('\n').collect();
    if lines.last() == Some(&"") {
        lines.pop();
    }
    if lines.len() < 2 {
        return Err(TableError::MalformedTable {
            line: lines.len(),
            reason: "expected a header line and a separator line".into(),
        });
    }
    let columns = parse_row(lines[0], 1)?;
    if columns.is_empty() {
        return Err(TableError::MalformedTable {
            line: 1,
            reason: "zero columns".into(),
        });
    }
    if columns.iter().any(|c| c.is_empty()) {
        return Err(TableError::MalformedTable {
            line: 1,
            reason: "empty column name".into(),
        });
    }
    let mut seen = HashSet::new();
    for c in &columns {
        if !seen.insert(c.as_str()) {
            return Err(TableError::MalformedTable {
                line: 1,
                reason: format!("duplicate column {c:?}"),
            });
        }
    }
    let sep = parse_row(lines[1], 2)?;
    if sep.len() != columns.len() || sep.iter().any(|s| s != "---") {
        return Err(TableError::MalformedTable {
            line: 2,
            reason: "separator line must hold one '---' per column".into(),
        });
    }
    let mut rows = Vec::new();
    for (offset, line) in lines[2..].iter().enumerate() {
        let lineno = offset + 3;
        let row = parse_row(line, lineno)?;
        if row.len() != columns.len() {
            return Err(TableError::MalformedTable {
                line: lineno,
                reason: format!("row has {} cells, expected {}", row.len(), columns.len()),
            });
        }
        rows.push(row);
    }
    Table::new(columns, rows).map_err(|e| TableError::MalformedTable {
        line: 0,
        reason: e.to_string(),
    })
}

/// Reorder table rows and mask rows in lockstep: output row `r` is input row
/// `perm[r]`. Column order is untouched.
pub fn permute_rows(
    table: &Table,
    mask: &CellMask,
    perm: &[usize],
) -> Result<(Table, CellMask), TableError> {
    if !mask.matches_table(table) {
        return Err(TableError::MaskShapeMismatch {
            mask_rows: mask.n_rows(),
            mask_cols: mask.n_cols(),
            n_rows: table.n_rows(),
            n_cols: table.n_cols(),
        });
    }
    let n = table.n_rows();
    if perm.len() != n {
        return Err(TableError::InvalidPermutation(format!(
            "length {} does not match {n} rows",
            perm.len()
        )));
    }
    let mut seen = vec![false; n];
    for &p in perm {
        if p >= n || seen[p] {
            return Err(TableError::InvalidPermutation(format!(
                "not a bijection on 0..{n}"
            )));
        }
        seen[p] = true;
    }
    let rows: Vec<Vec<String>> = perm.iter().map(|&p| table.rows()[p].clone()).collect();
    let permuted = Table::new(table.columns().to_vec(), rows).expect("shape preserved");
    let mut out = CellMask::zeros(n, table.n_cols(), mask.provenance());
    for (r, &p) in perm.iter().enumerate() {
        for c in 0..table.n_cols() {
            out.set(r, c, mask.get(p, c));
        }
    }
    Ok((permuted, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(cols: &[&str], rows: &[&[&str]]) -> Table {
        Table::new(
            cols.iter().map(|s| s.to_string()).collect(),
            rows.iter()
                .map(|r| r.iter().map(|s| s.to_string()).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn minimal_table_serializes_with_disjoint_spans() {
        let table = t(&["A"], &[&["x"]]);
        let (text, index) = serialize(&table);
        assert!(text.contains('A') && text.contains('x'));
        assert_eq!(index.entry_count(), 2);
        let h = index.header_span(0).unwrap().clone();
        let c = index.cell_span(0, 0).unwrap().clone();
        assert_eq!(&text[h.clone()], "A");
        assert_eq!(&text[c.clone()], "x");
        assert!(h.end <= c.start);
    }

    #[test]
    fn empty_rows_yield_header_only_index() {
        let table = t(&["A", "B"], &[]);
        let (text, index) = serialize(&table);
        assert_eq!(index.entry_count(), 2);
        assert_eq!(index.n_rows(), 0);
        assert_eq!(text.lines().count(), 2);
        assert_eq!(parse_table(&text).unwrap(), table);
    }

    #[test]
    fn serialize_is_deterministic() {
        let table = t(&["A", "B"], &[&["1", "2"], &["3", "4"]]);
        assert_eq!(serialize(&table).0, serialize(&table).0);
    }

    #[test]
    fn escaping_round_trips_delimiters() {
        let table = t(&["p|q", "back\\slash"], &[&["a|b", "line\nbreak"]]);
        let (text, _) = serialize(&table);
        assert_eq!(parse_table(&text).unwrap(), table);
    }

    #[test]
    fn ragged_row_is_malformed() {
        let text = "| A | B |\n| --- | --- |\n| 1 | 2 | 3 |\n";
        match parse_table(text) {
            Err(TableError::MalformedTable { line: 3, .. }) => {}
            other => panic!("expected malformed line 3, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_header_is_malformed() {
        let text = "| A | A |\n| --- | --- |\n";
        match parse_table(text) {
            Err(TableError::MalformedTable { line: 1, .. }) => {}
            other => panic!("expected malformed line 1, got {other:?}"),
        }
    }

    #[test]
    fn identity_permutation_is_noop() {
        let table = t(&["A"], &[&["1"], &["2"]]);
        let mut mask = CellMask::zeros(2, 1, MaskProvenance::Parsed);
        mask.set(0, 0, true);
        let (pt, pm) = permute_rows(&table, &mask, &[0, 1]).unwrap();
        assert_eq!(pt, table);
        assert_eq!(pm, mask);
    }

    #[test]
    fn swap_exchanges_rows_and_mask() {
        let table = t(&["A"], &[&["1"], &["2"]]);
        let mut mask = CellMask::zeros(2, 1, MaskProvenance::Parsed);
        mask.set(0, 0, true);
        let (pt, pm) = permute_rows(&table, &mask, &[1, 0]).unwrap();
        assert_eq!(pt.cell(0, 0), Some("2"));
        assert_eq!(pt.cell(1, 0), Some("1"));
        assert!(!pm.get(0, 0) && pm.get(1, 0));
    }

    #[test]
    fn bad_permutations_are_rejected() {
        let table = t(&["A"], &[&["1"], &["2"]]);
        let mask = CellMask::zeros(2, 1, MaskProvenance::Parsed);
        assert!(matches!(
            permute_rows(&table, &mask, &[0, 0]),
            Err(TableError::InvalidPermutation(_))
        ));
        assert!(matches!(
            permute_rows(&table, &mask, &[0]),
            Err(TableError::InvalidPermutation(_))
        ));
        assert!(matches!(
            permute_rows(&table, &mask, &[0, 2]),
            Err(TableError::InvalidPermutation(_))
        ));
    }

    #[test]
    fn numeric_parsing_handles_separators_and_percent() {
        assert_eq!(parse_numeric("1,234"), Some(1234.0));
        assert_eq!(parse_numeric("12.5%"), Some(12.5));
        assert_eq!(parse_numeric(" 62,740 "), Some(62740.0));
        assert_eq!(parse_numeric("-3.5"), Some(-3.5));
        assert_eq!(parse_numeric("n/a"), None);
        assert_eq!(parse_numeric(""), None);
        assert_eq!(parse_numeric("%"), None);
    }

    #[test]
    fn column_resolution_normalizes() {
        let table = t(&["Total  Assets", "Plant"], &[]);
        assert_eq!(table.resolve_column("total assets"), Some(0));
        assert_eq!(table.resolve_column(" PLANT "), Some(1));
        assert_eq!(table.resolve_column("missing"), None);
    }

    #[test]
    fn table_invariants_enforced() {
        assert!(Table::new(vec![], vec![]).is_err());
        assert!(Table::new(vec!["A".into(), "A".into()], vec![]).is_err());
        assert!(Table::new(vec!["A".into()], vec![vec![]]).is_err());
        assert!(Table::new(vec!["".into()], vec![]).is_err());
    }

    #[test]
    fn uniform_mask_is_flagged() {
        let m = CellMask::uniform_fallback(2, 3);
        assert_eq!(m.count_ones(), 6);
        assert_eq!(m.provenance(), MaskProvenance::UniformFallback);
    }
}
