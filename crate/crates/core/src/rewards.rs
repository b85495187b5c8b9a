//! Content-based reward baselines and answer scoring.
//!
//! The lexical state reward divides the longest-common-subsequence length
//! between the question and the serialized table state by the state's token
//! count, so diffuse states retaining irrelevant content score low. Tokens
//! are the whitespace-delimited words of the canonical serialization,
//! case-folded.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::TableState;
use crate::table::{parse_numeric, serialize};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("serialized state has zero tokens")]
    EmptyEncoding,
    #[error("reward value {0} outside [0, 1]")]
    InvalidValue(f64),
}

/// Case-folded whitespace tokenization.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

/// Longest common subsequence length under exact case-folded token equality.
/// O(|a|*|b|) time, linear space.
pub fn lcs_length<S: AsRef<str>, T: AsRef<str>>(a: &[S], b: &[T]) -> usize {
    let a: Vec<String> = a.iter().map(|t| t.as_ref().to_lowercase()).collect();
    let b: Vec<String> = b.iter().map(|t| t.as_ref().to_lowercase()).collect();
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for ai in &a {
        for (j, bj) in b.iter().enumerate() {
            cur[j + 1] = if ai == bj {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// The lexical reward broken into its parts: encoding length `L`, common
/// subsequence length `c`, and the score `c / L`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TabRougeState {
    pub enc_len: usize,
    pub lcs_len: usize,
    pub score: f64,
}

/// Score a table state against the question.
pub fn tabrouge(question: &str, state: &TableState) -> Result<TabRougeState, RewardError> {
    let (text, _) = serialize(&state.table);
    let enc = tokenize(&text);
    if enc.is_empty() {
        return Err(RewardError::EmptyEncoding);
    }
    let q = tokenize(question);
    let lcs = lcs_length(&q, &enc);
    Ok(TabRougeState {
        enc_len: enc.len(),
        lcs_len: lcs,
        score: lcs as f64 / enc.len() as f64,
    })
}

/// Answer matching: case/whitespace-normalized exact match, with a 2%
/// relative tolerance when both sides parse as numbers. A zero gold requires
/// an exact zero.
pub fn match_answer(pred: &str, gold: &str) -> bool {
    let norm = |s: &str| tokenize(s).join(" ");
    if norm(pred) == norm(gold) {
        return true;
    }
    match (parse_numeric(pred), parse_numeric(gold)) {
        (Some(p), Some(g)) => {
            if g == 0.0 {
                p == 0.0
            } else {
                (p - g).abs() <= 0.02 * g.abs()
            }
        }
        _ => false,
    }
}

/// One named scalar reward with a short in-loop rationale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSignal {
    pub name: String,
    pub value: f64,
    pub rationale: String,
}

impl RewardSignal {
    pub fn new(name: &str, value: f64, rationale: &str) -> Result<Self, RewardError> {
        if !(0.0..=1.0).contains(&value) || !value.is_finite() {
            return Err(RewardError::InvalidValue(value));
        }
        Ok(RewardSignal {
            name: name.to_string(),
            value,
            rationale: rationale.to_string(),
        })
    }
}

/// A reward computed from the produced state alone. Embedding-based signals
/// (cosine similarity, numeric F1) arrive through this same interface from a
/// backend; only the lexical baseline is built in.
pub trait ContentReward: Send + Sync {
    fn name(&self) -> &'static str;
    fn score(&self, question: &str, state: &TableState) -> Result<RewardSignal, RewardError>;
}

pub struct TabRouge;

impl ContentReward for TabRouge {
    fn name(&self) -> &'static str {
        "tabrouge"
    }

    fn score(&self, question: &str, state: &TableState) -> Result<RewardSignal, RewardError> {
        let s = tabrouge(question, state)?;
        RewardSignal::new(
            "tabrouge",
            s.score,
            &format!("question-token coverage {}/{}", s.lcs_len, s.enc_len),
        )
    }
}
