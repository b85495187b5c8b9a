//! Deterministic executor for the closed tool vocabulary plus final-answer
//! termination.
//!
//! Every tool maps a table state to a successor table state; `compare` and
//! the aggregates emit 1x1 tables so the whole trajectory lives in one state
//! space. Tool failures are recorded outcomes, not aborts: the input state is
//! carried forward unchanged and the trajectory continues.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::{parse_numeric, serialize, Table};

/// Comparison operator for `filter` and the ordering read-out of `compare`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "=", alias = "==", alias = "eq")]
    Eq,
    #[serde(rename = "!=", alias = "≠", alias = "ne")]
    Ne,
    #[serde(rename = "<", alias = "lt")]
    Lt,
    #[serde(rename = "<=", alias = "≤", alias = "le")]
    Le,
    #[serde(rename = ">", alias = "gt")]
    Gt,
    #[serde(rename = ">=", alias = "≥", alias = "ge")]
    Ge,
    #[serde(rename = "contains")]
    Contains,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggKind {
    Sum,
    Count,
    Average,
    Min,
    Max,
}

impl AggKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AggKind::Sum => "sum",
            AggKind::Count => "count",
            AggKind::Average => "average",
            AggKind::Min => "min",
            AggKind::Max => "max",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SortDir {
    #[default]
    Asc,
    Desc,
}

/// A `(column, optional row)` reference for `compare`. A missing row reads
/// row 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellArg {
    pub column: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row: Option<usize>,
}

/// A tool invocation. The JSON wire form is `{"tool": ..., "args": {...}}`
/// with the terminal action named `f_final_answer`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tool", content = "args", rename_all = "lowercase")]
pub enum ToolCall {
    Filter {
        column: String,
        op: CmpOp,
        value: String,
    },
    Sort {
        column: String,
        #[serde(default)]
        dir: SortDir,
    },
    Aggregate {
        kind: AggKind,
        column: String,
    },
    Lookup {
        column: String,
        row: usize,
    },
    Compare {
        left: CellArg,
        right: CellArg,
    },
    Select {
        columns: Vec<String>,
    },
    #[serde(rename = "f_final_answer")]
    FinalAnswer {
        answer: String,
    },
}

impl ToolCall {
    pub fn tool_name(&self) -> &'static str {
        match self {
            ToolCall::Filter { .. } => "filter",
            ToolCall::Sort { .. } => "sort",
            ToolCall::Aggregate { .. } => "aggregate",
            ToolCall::Lookup { .. } => "lookup",
            ToolCall::Compare { .. } => "compare",
            ToolCall::Select { .. } => "select",
            ToolCall::FinalAnswer { .. } => "f_final_answer",
        }
    }
}

/// A table plus its position along the trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TableState {
    pub table: Table,
    pub step_index: usize,
    pub provenance: Option<ToolCall>,
}

impl TableState {
    pub fn initial(table: Table) -> Self {
        TableState {
            table,
            step_index: 0,
            provenance: None,
        }
    }

    fn advance(&self, table: Table, call: &ToolCall) -> TableState {
        TableState {
            table,
            step_index: self.step_index + 1,
            provenance: Some(call.clone()),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ToolErrorKind {
    #[error("unknown column {0:?}")]
    UnknownColumn(String),
    #[error("row {row} out of range for {n_rows} rows")]
    RowOutOfRange { row: usize, n_rows: usize },
    #[error("no numeric cells in column {0:?}")]
    NonNumericAggregate(String),
    #[error("empty input for {0}")]
    EmptyInput(String),
    #[error("invalid arguments: {0}")]
    InvalidArgs(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepStatus {
    Ok,
    ToolError(ToolErrorKind),
}

/// Either the successor state or the terminal answer.
#[derive(Debug, Clone, PartialEq)]
pub enum StepValue {
    State(TableState),
    Answer(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub value: StepValue,
    pub status: StepStatus,
}

impl StepOutcome {
    fn ok_state(state: TableState) -> Self {
        StepOutcome {
            value: StepValue::State(state),
            status: StepStatus::Ok,
        }
    }
}

/// Numeric-aware total order on cell text: numbers first (by value), then
/// everything else lexicographically.
fn cell_ordering(a: &str, b: &str) -> Ordering {
    match (parse_numeric(a), parse_numeric(b)) {
        (Some(x), Some(y)) => x.partial_cmp(&y).unwrap_or(Ordering::Equal),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => a.cmp(b),
    }
}

fn filter_predicate(cell: &str, op: CmpOp, literal: &str) -> bool {
    if op == CmpOp::Contains {
        return cell.contains(literal);
    }
    let ord = match (parse_numeric(cell), parse_numeric(literal)) {
        (Some(x), Some(y)) => x.partial_cmp(&y).unwrap_or(Ordering::Equal),
        _ => cell.cmp(literal),
    };
    match op {
        CmpOp::Eq => ord == Ordering::Equal,
        CmpOp::Ne => ord != Ordering::Equal,
        CmpOp::Lt => ord == Ordering::Less,
        CmpOp::Le => ord != Ordering::Greater,
        CmpOp::Gt => ord == Ordering::Greater,
        CmpOp::Ge => ord != Ordering::Less,
        CmpOp::Contains => unreachable!(),
    }
}

/// Integral results print without a decimal point so counts and integer sums
/// stay exact strings.
fn format_number(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        format!("{v}")
    }
}

fn single_cell(column: String, value: String) -> Table {
    Table::new(vec![column], vec![vec![value]]).expect("1x1 table is valid")
}

fn run_tool(table: &Table, call: &ToolCall) -> Result<Option<Table>, ToolErrorKind> {
    match call {
        ToolCall::Filter { column, op, value } => {
            let col = table
                .resolve_column(column)
                .ok_or_else(|| ToolErrorKind::UnknownColumn(column.clone()))?;
            let rows: Vec<Vec<String>> = table
                .rows()
                .iter()
                .filter(|row| filter_predicate(&row[col], *op, value))
                .cloned()
                .collect();
            Ok(Some(
                Table::new(table.columns().to_vec(), rows).expect("filter keeps shape"),
            ))
        }
        ToolCall::Sort { column, dir } => {
            let col = table
                .resolve_column(column)
                .ok_or_else(|| ToolErrorKind::UnknownColumn(column.clone()))?;
            let mut rows = table.rows().to_vec();
            rows.sort_by(|a, b| {
                let ord = cell_ordering(&a[col], &b[col]);
                match dir {
                    SortDir::Asc => ord,
                    SortDir::Desc => ord.reverse(),
                }
            });
            Ok(Some(
                Table::new(table.columns().to_vec(), rows).expect("sort keeps shape"),
            ))
        }
        ToolCall::Aggregate { kind, column } => {
            let col = table
                .resolve_column(column)
                .ok_or_else(|| ToolErrorKind::UnknownColumn(column.clone()))?;
            let name = format!("{}({})", kind.as_str(), table.columns()[col]);
            if *kind == AggKind::Count {
                let n = table
                    .column_values(col)
                    .filter(|v| !v.trim().is_empty())
                    .count();
                return Ok(Some(single_cell(name, n.to_string())));
            }
            if table.n_rows() == 0 && *kind != AggKind::Sum {
                return Err(ToolErrorKind::EmptyInput(format!(
                    "{} over zero rows",
                    kind.as_str()
                )));
            }
            // non-numeric cells are skipped; benchmark tables mix footnote
            // strings into numeric columns
            let numeric: Vec<(usize, f64)> = table
                .column_values(col)
                .enumerate()
                .filter_map(|(i, v)| parse_numeric(v).map(|x| (i, x)))
                .collect();
            if numeric.is_empty() {
                return Err(ToolErrorKind::NonNumericAggregate(column.clone()));
            }
            let text = match kind {
                AggKind::Sum => format_number(numeric.iter().map(|(_, v)| v).sum()),
                AggKind::Average => format_number(
                    numeric.iter().map(|(_, v)| v).sum::<f64>() / numeric.len() as f64,
                ),
                AggKind::Min => {
                    let (i, _) = numeric
                        .iter()
                        .copied()
                        .reduce(|best, cur| if cur.1 < best.1 { cur } else { best })
                        .expect("non-empty");
                    table.cell(i, col).expect("in range").to_string()
                }
                AggKind::Max => {
                    let (i, _) = numeric
                        .iter()
                        .copied()
                        .reduce(|best, cur| if cur.1 > best.1 { cur } else { best })
                        .expect("non-empty");
                    table.cell(i, col).expect("in range").to_string()
                }
                AggKind::Count => unreachable!(),
            };
            Ok(Some(single_cell(name, text)))
        }
        ToolCall::Lookup { column, row } => {
            let col = table
                .resolve_column(column)
                .ok_or_else(|| ToolErrorKind::UnknownColumn(column.clone()))?;
            if *row >= table.n_rows() {
                return Err(ToolErrorKind::RowOutOfRange {
                    row: *row,
                    n_rows: table.n_rows(),
                });
            }
            let value = table.cell(*row, col).expect("in range").to_string();
            Ok(Some(single_cell(table.columns()[col].clone(), value)))
        }
        ToolCall::Compare { left, right } => {
            let fetch = |arg: &CellArg| -> Result<String, ToolErrorKind> {
                let col = table
                    .resolve_column(&arg.column)
                    .ok_or_else(|| ToolErrorKind::UnknownColumn(arg.column.clone()))?;
                let row = arg.row.unwrap_or(0);
                if row >= table.n_rows() {
                    return Err(ToolErrorKind::RowOutOfRange {
                        row,
                        n_rows: table.n_rows(),
                    });
                }
                Ok(table.cell(row, col).expect("in range").to_string())
            };
            let a = fetch(left)?;
            let b = fetch(right)?;
            let verdict = match cell_ordering(&a, &b) {
                Ordering::Less => "lt",
                Ordering::Equal => "eq",
                Ordering::Greater => "gt",
            };
            Ok(Some(single_cell("compare".into(), verdict.into())))
        }
        ToolCall::Select { columns } => {
            if columns.is_empty() {
                return Err(ToolErrorKind::InvalidArgs("select needs columns".into()));
            }
            let mut cols: Vec<usize> = Vec::new();
            for name in columns {
                let c = table
                    .resolve_column(name)
                    .ok_or_else(|| ToolErrorKind::UnknownColumn(name.clone()))?;
                if !cols.contains(&c) {
                    cols.push(c);
                }
            }
            let columns = cols.iter().map(|&c| table.columns()[c].clone()).collect();
            let rows = table
                .rows()
                .iter()
                .map(|row| cols.iter().map(|&c| row[c].clone()).collect())
                .collect();
            Ok(Some(
                Table::new(columns, rows).expect("projection is valid"),
            ))
        }
        ToolCall::FinalAnswer { .. } => Ok(None),
    }
}

/// Execute one tool call against a state. Pure: the input state is never
/// mutated, and equal `(state, call)` pairs yield equal outcomes.
pub fn execute(state: &TableState, call: &ToolCall) -> StepOutcome {
    if let ToolCall::FinalAnswer { answer } = call {
        return StepOutcome {
            value: StepValue::Answer(answer.clone()),
            status: StepStatus::Ok,
        };
    }
    match run_tool(&state.table, call) {
        Ok(Some(table)) => StepOutcome::ok_state(state.advance(table, call)),
        Ok(None) => unreachable!("final answer handled above"),
        Err(kind) => StepOutcome {
            // error recorded, trajectory continues from the unchanged table
            value: StepValue::State(state.advance(state.table.clone(), call)),
            status: StepStatus::ToolError(kind),
        },
    }
}

/// FNV-1a over arbitrary bytes. Stable across runs and platforms, which keeps
/// trajectory logs byte-identical.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// 64-bit digest of the canonical serialization; equal tables hash equal.
pub fn state_hash(state: &TableState) -> u64 {
    let (text, _) = serialize(&state.table);
    fnv1a64(text.as_bytes())
}
