//! Pluggable planner / reasoner / attention backends.
//!
//! Scripted backends are deterministic replay tables and synthetic
//! generators; they are the test oracle for all controller and pipeline
//! behavior and run without network or model weights. HTTP backends live in
//! [`crate::http`].

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use cellground_core::engine::{fnv1a64, ToolCall};
use cellground_core::plan::PlanStep;
use cellground_core::table::{CellMask, SpanIndex, Table};
use cellground_core::verifier::CellAttention;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("timeout after {0:?}")]
    Timeout(std::time::Duration),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("script: {0}")]
    Script(String),
    #[error("environment: {0}")]
    Env(String),
}

/// Everything an attention provider may key on. `mask_hint` carries the
/// plan-designated (or ground-truth) mask; synthetic generators use it, real
/// extractors ignore it.
pub struct AttentionQuery<'a> {
    pub record_id: &'a str,
    pub question: &'a str,
    pub table: &'a Table,
    pub text: &'a str,
    pub index: &'a SpanIndex,
    pub step: usize,
    pub mask_hint: Option<&'a CellMask>,
}

pub trait AttentionProvider: Send + Sync {
    fn attention(&self, query: &AttentionQuery) -> Result<CellAttention, BackendError>;
}

/// What the reasoner produced for one step: a well-formed tool call, or raw
/// text that failed strict JSON parsing. Parse failures are recoverable
/// per-step events, not transport errors.
#[derive(Debug, Clone)]
pub enum ReasonerReply {
    Call(ToolCall),
    Unparseable(String),
}

pub struct ReasonerQuery<'a> {
    pub question: &'a str,
    pub table_text: &'a str,
    pub plan_step: Option<&'a PlanStep>,
    pub step: usize,
    pub feedback: &'a [String],
}

pub trait ReasonerBackend: Send + Sync {
    fn next_call(&self, query: &ReasonerQuery) -> Result<ReasonerReply, BackendError>;
}

pub trait PlannerBackend: Send + Sync {
    fn plan_text(&self, question: &str, table: &Table) -> Result<String, BackendError>;
}

/// Attention payload a backend may return: pre-aggregated per-cell mass or
/// raw span scores keyed to the canonical serialization.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AttentionPayload {
    PerCell {
        per_cell: Vec<Vec<f64>>,
        #[serde(default)]
        per_header: Option<Vec<f64>>,
    },
    Spans {
        spans: Vec<SpanScore>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpanScore {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

impl AttentionPayload {
    pub fn resolve(&self, index: &SpanIndex) -> Result<CellAttention, BackendError> {
        match self {
            AttentionPayload::PerCell {
                per_cell,
                per_header,
            } => {
                let headers = per_header
                    .clone()
                    .unwrap_or_else(|| vec![0.0; index.n_cols()]);
                CellAttention::new(per_cell.clone(), headers)
                    .map_err(|e| BackendError::Protocol(e.to_string()))
            }
            AttentionPayload::Spans { spans } => {
                let tokens: Vec<(std::ops::Range<usize>, f64)> =
                    spans.iter().map(|s| (s.start..s.end, s.score)).collect();
                cellground_core::verifier::aggregate_cells(&tokens, index)
                    .map_err(|e| BackendError::Protocol(e.to_string()))
            }
        }
    }
}

fn mix(parts: &[&[u8]]) -> u64 {
    let mut buf = Vec::new();
    for (i, p) in parts.iter().enumerate() {
        buf.push(i as u8 ^ 0x5a);
        buf.extend_from_slice(p);
        buf.push(0x1f);
    }
    fnv1a64(&buf)
}

/// Hash to the open unit interval.
fn unit(h: u64) -> f64 {
    ((h >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// Synthetic attention generators. `Peaked`, `Random`, and `Oracle` key
/// scores off record id and cell content only, so they commute with row
/// permutation; `Fixed` keys off grid position and does not.
pub enum ScriptedAttention {
    /// Scores equal to the hinted mask bits. AUROC 1 by construction.
    Oracle,
    /// Equal mass on every cell.
    Uniform,
    /// Content-keyed noise, independent of any mask.
    Random { seed: u64 },
    /// Content-keyed noise with masked cells boosted by `snr`.
    Peaked { snr: f64, seed: u64 },
    /// Position-keyed noise; unstable under row permutation by design.
    Fixed { seed: u64 },
    /// Exact per-step overlap scores, realized against the hinted mask.
    Scores { per_step: Vec<f64> },
    /// Replay of explicit payloads, one per step.
    Replay { payloads: Vec<AttentionPayload> },
}

impl ScriptedAttention {
    fn content_score(seed: u64, q: &AttentionQuery, row: usize, col: usize) -> f64 {
        unit(mix(&[
            &seed.to_le_bytes(),
            q.record_id.as_bytes(),
            q.table.columns()[col].as_bytes(),
            q.table.cell(row, col).unwrap_or("").as_bytes(),
        ]))
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let text = fs::read_to_string(path)
            .map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?;
        let payloads: Vec<AttentionPayload> = serde_json::from_str(&text)
            .map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?;
        Ok(ScriptedAttention::Replay { payloads })
    }
}

impl AttentionProvider for ScriptedAttention {
    fn attention(&self, q: &AttentionQuery) -> Result<CellAttention, BackendError> {
        let n_rows = q.table.n_rows();
        let n_cols = q.table.n_cols();
        let mut attn = CellAttention::zeros(n_rows, n_cols);
        match self {
            ScriptedAttention::Oracle => {
                let mask = q.mask_hint.ok_or_else(|| {
                    BackendError::Script("oracle attention needs a mask hint".into())
                })?;
                for r in 0..n_rows {
                    for c in 0..n_cols {
                        if mask.get(r, c) {
                            attn.add(r, c, 1.0);
                        }
                    }
                }
            }
            ScriptedAttention::Uniform => {
                for r in 0..n_rows {
                    for c in 0..n_cols {
                        attn.add(r, c, 1.0);
                    }
                }
            }
            ScriptedAttention::Random { seed } => {
                for r in 0..n_rows {
                    for c in 0..n_cols {
                        attn.add(r, c, Self::content_score(*seed, q, r, c));
                    }
                }
            }
            ScriptedAttention::Peaked { snr, seed } => {
                let mask = q.mask_hint.ok_or_else(|| {
                    BackendError::Script("peaked attention needs a mask hint".into())
                })?;
                for r in 0..n_rows {
                    for c in 0..n_cols {
                        let base = Self::content_score(*seed, q, r, c);
                        let boost = if mask.get(r, c) { *snr } else { 1.0 };
                        attn.add(r, c, base * boost);
                    }
                }
            }
            ScriptedAttention::Fixed { seed } => {
                for r in 0..n_rows {
                    for c in 0..n_cols {
                        let h = mix(&[
                            &seed.to_le_bytes(),
                            q.record_id.as_bytes(),
                            &(r as u64).to_le_bytes(),
                            &(c as u64).to_le_bytes(),
                        ]);
                        attn.add(r, c, unit(h));
                    }
                }
            }
            ScriptedAttention::Scores { per_step } => {
                let target = *per_step
                    .get(q.step)
                    .or_else(|| per_step.last())
                    .ok_or_else(|| BackendError::Script("empty score script".into()))?;
                let mask = q.mask_hint.ok_or_else(|| {
                    BackendError::Script("scored attention needs a mask hint".into())
                })?;
                let k = mask.count_ones();
                let total = n_rows * n_cols;
                if k == 0 || k == total {
                    return Err(BackendError::Script(
                        "exact scores need a proper-subset mask".into(),
                    ));
                }
                for r in 0..n_rows {
                    for c in 0..n_cols {
                        let mass = if mask.get(r, c) {
                            target / k as f64
                        } else {
                            (1.0 - target) / (total - k) as f64
                        };
                        attn.add(r, c, mass);
                    }
                }
            }
            ScriptedAttention::Replay { payloads } => {
                let payload = payloads
                    .get(q.step)
                    .or_else(|| payloads.last())
                    .ok_or_else(|| BackendError::Script("empty attention replay".into()))?;
                return payload.resolve(q.index);
            }
        }
        Ok(attn)
    }
}

/// Replay reasoner keyed by step index. Script entries are arbitrary JSON
/// values: anything that fails to parse as a tool call replays as an
/// unparseable reply, mirroring how malformed model output is handled.
pub struct ScriptedReasoner {
    entries: Vec<ReasonerReply>,
}

impl ScriptedReasoner {
    pub fn new(calls: Vec<ToolCall>) -> Self {
        ScriptedReasoner {
            entries: calls.into_iter().map(ReasonerReply::Call).collect(),
        }
    }

    pub fn from_replies(entries: Vec<ReasonerReply>) -> Self {
        ScriptedReasoner { entries }
    }

    /// The plan-bypass shape: answer directly at step 1.
    pub fn from_answer(answer: &str) -> Self {
        Self::new(vec![ToolCall::FinalAnswer {
            answer: answer.to_string(),
        }])
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let text = fs::read_to_string(path)
            .map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?;
        let values: Vec<serde_json::Value> = serde_json::from_str(&text)
            .map_err(|e| BackendError::Script(format!("{}: {e}", path.display())))?;
        let entries = values
            .into_iter()
            .map(|v| match serde_json::from_value::<ToolCall>(v.clone()) {
                Ok(call) => ReasonerReply::Call(call),
                Err(_) => ReasonerReply::Unparseable(v.to_string()),
            })
            .collect();
        Ok(ScriptedReasoner { entries })
    }
}

impl ReasonerBackend for ScriptedReasoner {
    fn next_call(&self, query: &ReasonerQuery) -> Result<ReasonerReply, BackendError> {
        self.entries
            .get(query.step)
            .cloned()
            .ok_or_else(|| BackendError::Script(format!("script exhausted at step {}", query.step)))
    }
}

/// Fixed-text planner.
pub struct ScriptedPlanner {
    pub text: String,
}

impl PlannerBackend for ScriptedPlanner {
    fn plan_text(&self, _question: &str, _table: &Table) -> Result<String, BackendError> {
        Ok(self.text.clone())
    }
}

/// Parse an attention backend spec string. Scripted forms:
/// `scripted:oracle`, `scripted:uniform`, `scripted:random`,
/// `scripted:peaked[:SNR]`, `scripted:fixed`, `scripted:scores:a,b,c`,
/// `scripted:file:PATH`. HTTP form: `http[:URL]`.
pub fn parse_attention_spec(
    spec: &str,
    seed: u64,
) -> Result<Box<dyn AttentionProvider>, BackendError> {
    if let Some(rest) = spec.strip_prefix("scripted:") {
        let provider: ScriptedAttention = if rest == "oracle" {
            ScriptedAttention::Oracle
        } else if rest == "uniform" {
            ScriptedAttention::Uniform
        } else if rest == "random" {
            ScriptedAttention::Random { seed }
        } else if rest == "fixed" {
            ScriptedAttention::Fixed { seed }
        } else if rest == "peaked" {
            ScriptedAttention::Peaked { snr: 4.0, seed }
        } else if let Some(snr) = rest.strip_prefix("peaked:") {
            let snr: f64 = snr
                .parse()
                .map_err(|_| BackendError::Script(format!("bad SNR {snr:?}")))?;
            ScriptedAttention::Peaked { snr, seed }
        } else if let Some(csv) = rest.strip_prefix("scores:") {
            let per_step = csv
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<f64>, _>>()
                .map_err(|_| BackendError::Script(format!("bad score list {csv:?}")))?;
            ScriptedAttention::Scores { per_step }
        } else if let Some(path) = rest.strip_prefix("file:") {
            ScriptedAttention::from_file(Path::new(path))?
        } else {
            return Err(BackendError::Script(format!(
                "unknown scripted attention {rest:?}"
            )));
        };
        return Ok(Box::new(provider));
    }
    if spec == "http" || spec.starts_with("http:") {
        let cfg = crate::http::HttpConfig::from_spec(spec)?;
        return Ok(Box::new(crate::http::HttpAttention::new(cfg)));
    }
    Err(BackendError::Script(format!(
        "unknown backend spec {spec:?}"
    )))
}

/// Parse a reasoner backend spec: `scripted:answer:TEXT`, `scripted:PATH`,
/// or `http[:URL]`.
pub fn parse_reasoner_spec(spec: &str) -> Result<Box<dyn ReasonerBackend>, BackendError> {
    if let Some(rest) = spec.strip_prefix("scripted:") {
        if let Some(answer) = rest.strip_prefix("answer:") {
            return Ok(Box::new(ScriptedReasoner::from_answer(answer)));
        }
        return Ok(Box::new(ScriptedReasoner::from_file(Path::new(rest))?));
    }
    if spec == "http" || spec.starts_with("http:") {
        let cfg = crate::http::HttpConfig::from_spec(spec)?;
        return Ok(Box::new(crate::http::HttpReasoner::new(cfg)));
    }
    Err(BackendError::Script(format!(
        "unknown backend spec {spec:?}"
    )))
}

/// Parse a planner backend spec: `scripted:PATH` (plan text file) or
/// `http[:URL]`.
pub fn parse_planner_spec(spec: &str) -> Result<Box<dyn PlannerBackend>, BackendError> {
    if let Some(path) = spec.strip_prefix("scripted:") {
        let text =
            fs::read_to_string(path).map_err(|e| BackendError::Script(format!("{path}: {e}")))?;
        return Ok(Box::new(ScriptedPlanner { text }));
    }
    if spec == "http" || spec.starts_with("http:") {
        let cfg = crate::http::HttpConfig::from_spec(spec)?;
        return Ok(Box::new(crate::http::HttpPlanner::new(cfg)));
    }
    Err(BackendError::Script(format!(
        "unknown backend spec {spec:?}"
    )))
}
