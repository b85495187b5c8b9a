//! Plan parsing and cell-mask compilation.
//!
//! A plan is free text in which each step names a tool from the closed
//! vocabulary and concludes with a `[target: col]` tag (or
//! `[target: col, row N]` for cell-level steps). Tags compile into binary
//! cell masks; anything that fails to parse degrades to an unparsed target
//! and the uniform-mask fallback, never an error.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::table::{CellMask, Table};

/// The closed tool vocabulary steps may name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ToolKind {
    Filter,
    Sort,
    Aggregate,
    Lookup,
    Compare,
    Select,
}

impl ToolKind {
    pub const ALL: [ToolKind; 6] = [
        ToolKind::Filter,
        ToolKind::Sort,
        ToolKind::Aggregate,
        ToolKind::Lookup,
        ToolKind::Compare,
        ToolKind::Select,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ToolKind::Filter => "filter",
            ToolKind::Sort => "sort",
            ToolKind::Aggregate => "aggregate",
            ToolKind::Lookup => "lookup",
            ToolKind::Compare => "compare",
            ToolKind::Select => "select",
        }
    }

    fn from_word(word: &str) -> Option<ToolKind> {
        let w = word.to_lowercase();
        Self::ALL.iter().copied().find(|k| k.as_str() == w)
    }
}

impl fmt::Display for ToolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One `(column, optional row)` designation inside a target tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetRef {
    pub column: String,
    pub row: Option<usize>,
}

/// Parsed designation list, or the marker for a tag that could not be read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepTarget {
    Parsed(Vec<TargetRef>),
    Unparsed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanStep {
    pub index: usize,
    pub tool: ToolKind,
    pub description: String,
    pub target: StepTarget,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub steps: Vec<PlanStep>,
    pub raw_text: String,
}

impl Plan {
    pub fn empty() -> Self {
        Plan {
            steps: Vec::new(),
            raw_text: String::new(),
        }
    }

    /// Re-serialize the structured plan to plan text. `parse_plan` on the
    /// output reproduces the same tools and targets.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for step in &self.steps {
            out.push_str(step.tool.as_str());
            out.push_str(": ");
            out.push_str(&step.description);
            if let StepTarget::Parsed(refs) = &step.target {
                let parts: Vec<String> = refs
                    .iter()
                    .map(|r| match r.row {
                        Some(n) => format!("{}, row {}", r.column, n),
                        None => r.column.clone(),
                    })
                    .collect();
                out.push_str(&format!(" [target: {}]", parts.join(", ")));
            }
            out.push('\n');
        }
        out
    }
}

/// Case-insensitive prefix strip.
fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    if s.len() >= prefix.len() && s[..prefix.len()].eq_ignore_ascii_case(prefix) {
        Some(&s[prefix.len()..])
    } else {
        None
    }
}

/// Tool keyword at line start or after a step number / bullet. Returns the
/// tool and the remainder after the keyword.
fn leading_tool(line: &str) -> Option<(ToolKind, &str)> {
    let mut s = line.trim_start();
    if let Some(rest) = s.strip_prefix(['-', '*']) {
        s = rest.trim_start();
    }
    if let Some(rest) = strip_prefix_ci(s, "step") {
        if rest.starts_with(|c: char| c.is_whitespace() || c.is_ascii_digit()) {
            s = rest.trim_start();
        }
    }
    let digits = s.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        s = s[digits..].trim_start();
        if let Some(rest) = s.strip_prefix(['.', ')', ':']) {
            s = rest.trim_start();
        }
    }
    let word_len: usize = s
        .chars()
        .take_while(|c| c.is_alphabetic())
        .map(|c| c.len_utf8())
        .sum();
    let tool = ToolKind::from_word(&s[..word_len])?;
    let mut rest = s[word_len..].trim_start();
    if let Some(r) = rest.strip_prefix(':') {
        rest = r.trim_start();
    }
    Some((tool, rest))
}

/// Last well-formed `[target: ...]` tag in the line: byte range and content.
fn find_target_tag(line: &str) -> Option<(std::ops::Range<usize>, &str)> {
    let mut found = None;
    let mut search_from = 0;
    while let Some(open_rel) = line[search_from..].find('[') {
        let open = search_from + open_rel;
        search_from = open + 1;
        let after = &line[open + 1..];
        let body = match strip_prefix_ci(after.trim_start(), "target") {
            Some(b) => b,
            None => continue,
        };
        let body = body.trim_start();
        let body = match body.strip_prefix(':') {
            Some(b) => b,
            None => continue,
        };
        // content runs to the first ']' after the colon
        let colon_offset = line.len() - body.len();
        let close_rel = match body.find(']') {
            Some(c) => c,
            None => continue,
        };
        let content = &line[colon_offset..colon_offset + close_rel];
        found = Some((open..colon_offset + close_rel + 1, content));
    }
    found
}

/// A part is a row designation only when it reads `row N` exactly.
fn parse_row_part(part: &str) -> Option<usize> {
    let rest = strip_prefix_ci(part, "row")?;
    if !rest.starts_with(|c: char| c.is_whitespace()) {
        return None;
    }
    let digits = rest.trim();
    if digits.is_empty() || !digits.chars().all(|c| c.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

fn parse_target_list(content: &str) -> Option<Vec<TargetRef>> {
    let mut refs: Vec<TargetRef> = Vec::new();
    for part in content.split(',') {
        let part = part.trim();
        if part.is_empty() {
            return None;
        }
        if let Some(row) = parse_row_part(part) {
            let last = refs.last_mut()?;
            if last.row.is_some() {
                return None;
            }
            last.row = Some(row);
        } else {
            refs.push(TargetRef {
                column: part.to_string(),
                row: None,
            });
        }
    }
    if refs.is_empty() {
        None
    } else {
        Some(refs)
    }
}

/// Parse a raw plan against a table schema. Total on strings: lines without a
/// recognizable tool keyword are skipped, and unreadable tags degrade to
/// [`StepTarget::Unparsed`]. The schema is not consulted here; resolution
/// happens at mask compilation.
pub fn parse_plan(raw: &str, _schema: &[String]) -> Plan {
    let mut steps = Vec::new();
    for line in raw.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (target, untagged) = match find_target_tag(line) {
            Some((range, content)) => {
                let mut rest = String::new();
                rest.push_str(&line[..range.start]);
                rest.push_str(&line[range.end..]);
                let target = match parse_target_list(content) {
                    Some(refs) => StepTarget::Parsed(refs),
                    None => StepTarget::Unparsed,
                };
                (target, rest)
            }
            None => (StepTarget::Unparsed, line.to_string()),
        };
        let (tool, rest) = match leading_tool(&untagged) {
            Some(found) => found,
            None => continue,
        };
        steps.push(PlanStep {
            index: steps.len(),
            tool,
            description: rest.trim().to_string(),
            target,
        });
    }
    Plan {
        steps,
        raw_text: raw.to_string(),
    }
}

/// Compile a step's designation into a cell mask over `table`. Never fails:
/// an unparsed target, an unresolvable column, or an out-of-range row all
/// yield the flagged uniform fallback for the whole step. A partially wrong
/// mask is worse supervision than an explicitly uninformative one.
pub fn compile_mask(step: &PlanStep, table: &Table) -> CellMask {
    let refs = match &step.target {
        StepTarget::Parsed(refs) => refs,
        StepTarget::Unparsed => return CellMask::uniform_fallback(table.n_rows(), table.n_cols()),
    };
    let mut resolved: Vec<(usize, Option<usize>)> = Vec::with_capacity(refs.len());
    for r in refs {
        let col = match table.resolve_column(&r.column) {
            Some(c) => c,
            None => return CellMask::uniform_fallback(table.n_rows(), table.n_cols()),
        };
        if let Some(row) = r.row {
            if row >= table.n_rows() {
                return CellMask::uniform_fallback(table.n_rows(), table.n_cols());
            }
        }
        resolved.push((col, r.row));
    }
    let mut mask = CellMask::zeros(
        table.n_rows(),
        table.n_cols(),
        crate::table::MaskProvenance::Parsed,
    );
    for (col, row) in resolved {
        match row {
            Some(r) => mask.set(r, col, true),
            None => {
                for r in 0..table.n_rows() {
                    mask.set(r, col, true);
                }
            }
        }
    }
    mask
}

/// Column-hallucination rates for one plan against a schema.
///
/// `per_step` is the fraction of steps whose target names at least one
/// column absent from the schema; unparsed targets count as hallucinatory.
/// `per_plan` is the fraction of all referenced column names that are absent.
/// An empty plan scores (0, 0).
pub fn hallucination_rate(plan: &Plan, schema: &[String]) -> (f64, f64) {
    if plan.steps.is_empty() {
        return (0.0, 0.0);
    }
    let normalized: Vec<String> = schema
        .iter()
        .map(|s| crate::table::normalize_name(s))
        .collect();
    let in_schema = |name: &str| normalized.contains(&crate::table::normalize_name(name));
    let mut bad_steps = 0usize;
    let mut refs_total = 0usize;
    let mut refs_bad = 0usize;
    for step in &plan.steps {
        match &step.target {
            StepTarget::Unparsed => bad_steps += 1,
            StepTarget::Parsed(refs) => {
                let mut step_bad = false;
                for r in refs {
                    refs_total += 1;
                    if !in_schema(&r.column) {
                        refs_bad += 1;
                        step_bad = true;
                    }
                }
                if step_bad {
                    bad_steps += 1;
                }
            }
        }
    }
    let per_plan = if refs_total == 0 {
        0.0
    } else {
        refs_bad as f64 / refs_total as f64
    };
    let per_step = bad_steps as f64 / plan.steps.len() as f64;
    (per_plan, per_step)
}
