//! Trajectory controller: compile the step mask, ask the reasoner for a tool
//! call, execute it, score the step's attention overlap, feed the score back,
//! and halt on final answer, stagnation, or the step cap.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use cellground_core::engine::{execute, state_hash, StepStatus, StepValue, TableState, ToolCall};
use cellground_core::plan::{compile_mask, Plan};
use cellground_core::rewards::{ContentReward, RewardSignal};
use cellground_core::table::{serialize, CellMask, Table};
use cellground_core::verifier::{r_attn_with, CalibrationParams, OverlapConfig};

use crate::backend::{
    AttentionProvider, AttentionQuery, ReasonerBackend, ReasonerQuery, ReasonerReply,
};

/// Stagnation-halt parameters. Defaults are the production constants: stop
/// when the overlap score fails to improve by more than 0.02 for 2
/// consecutive steps on an unchanged table, with at most 6 tool steps.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HaltConfig {
    pub delta_stag: f64,
    pub k_stag: usize,
    pub t_max: usize,
}

impl Default for HaltConfig {
    fn default() -> Self {
        HaltConfig {
            delta_stag: 0.02,
            k_stag: 2,
            t_max: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HaltReason {
    FinalAnswer,
    Stagnation,
    StepCap,
    BackendError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum StepLogStatus {
    Ok,
    ToolError(String),
    ParseError,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepEntry {
    pub step_index: usize,
    /// The executed call, absent when the reply failed to parse.
    pub call: Option<ToolCall>,
    pub status: StepLogStatus,
    /// FNV-1a digest of the post-step table, hex.
    pub state_hash: String,
    pub rewards: Vec<RewardSignal>,
    /// True when table-attention mass was below the epsilon floor; such
    /// steps are excluded from calibration samples.
    pub attention_excluded: bool,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub plan_secs: f64,
    pub reason_secs: f64,
}

/// The audit log of one trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub question: String,
    pub table: Table,
    pub plan: Plan,
    pub steps: Vec<StepEntry>,
    pub halt_reason: HaltReason,
    pub final_answer: String,
    pub timings: PhaseTimings,
    /// Set when the run ended on a backend failure.
    pub backend_error: Option<String>,
}

pub struct Backends<'a> {
    pub reasoner: &'a dyn ReasonerBackend,
    pub attention: &'a dyn AttentionProvider,
    pub content_rewards: &'a [Box<dyn ContentReward>],
}

#[derive(Default)]
pub struct RunConfig {
    pub halt: HaltConfig,
    pub calibration: Option<CalibrationParams>,
    pub overlap: OverlapConfig,
    /// Wall-clock capture is off by default so scripted replays are
    /// byte-identical across runs.
    pub record_timings: bool,
    pub record_id: String,
}

/// Answer a step implies when no terminal call was made: the single cell of
/// a 1x1 result state.
fn implied_answer(table: &Table) -> Option<String> {
    if table.n_rows() == 1 && table.n_cols() == 1 {
        table.cell(0, 0).map(|s| s.to_string())
    } else {
        None
    }
}

/// Run one trajectory. The reasoner sees the plan step, the current table
/// state, and all prior verifier feedback; the verifier scores each step's
/// attention against the plan-designated mask. On stagnation or the step
/// cap, the answer associated with the highest-scoring step is emitted,
/// empty if that step implies none.
pub fn run_trajectory(
    question: &str,
    table: Table,
    plan: &Plan,
    backends: &Backends,
    cfg: &RunConfig,
) -> TrajectoryRecord {
    let reason_clock = Instant::now();
    let mut state = TableState::initial(table.clone());
    let (mut text, mut index) = serialize(&state.table);
    let mut prev_hash = state_hash(&state);

    let mut steps: Vec<StepEntry> = Vec::new();
    let mut feedback: Vec<String> = Vec::new();
    let mut scores: Vec<f64> = Vec::new();
    let mut implied: Vec<Option<String>> = Vec::new();

    let mut best_score = f64::NEG_INFINITY;
    let mut stagnant_run = 0usize;
    let mut halt_reason = HaltReason::StepCap;
    let mut final_answer: Option<String> = None;
    let mut backend_error: Option<String> = None;

    for t in 0..cfg.halt.t_max {
        let plan_step = plan.steps.get(t);
        let mask: CellMask = match plan_step {
            Some(step) => compile_mask(step, &state.table),
            None => CellMask::uniform_fallback(state.table.n_rows(), state.table.n_cols()),
        };

        let reply = match backends.reasoner.next_call(&ReasonerQuery {
            question,
            table_text: &text,
            plan_step,
            step: t,
            feedback: &feedback,
        }) {
            Ok(reply) => reply,
            Err(e) => {
                halt_reason = HaltReason::BackendError;
                backend_error = Some(e.to_string());
                break;
            }
        };

        let attention = match backends.attention.attention(&AttentionQuery {
            record_id: &cfg.record_id,
            question,
            table: &state.table,
            text: &text,
            index: &index,
            step: t,
            mask_hint: Some(&mask),
        }) {
            Ok(a) => a,
            Err(e) => {
                halt_reason = HaltReason::BackendError;
                backend_error = Some(e.to_string());
                break;
            }
        };
        let overlap = match r_attn_with(&attention, &mask, &cfg.overlap) {
            Ok(s) => s,
            Err(e) => {
                halt_reason = HaltReason::BackendError;
                backend_error = Some(format!("attention shape: {e}"));
                break;
            }
        };

        let (logged_call, status, next_state, terminal) = match reply {
            ReasonerReply::Unparseable(_) => {
                let next = TableState {
                    table: state.table.clone(),
                    step_index: state.step_index + 1,
                    provenance: None,
                };
                (None, StepLogStatus::ParseError, next, None)
            }
            ReasonerReply::Call(call) => {
                let outcome = execute(&state, &call);
                match outcome.value {
                    StepValue::Answer(ans) => {
                        let next = TableState {
                            table: state.table.clone(),
                            step_index: state.step_index + 1,
                            provenance: Some(call.clone()),
                        };
                        (Some(call), StepLogStatus::Ok, next, Some(ans))
                    }
                    StepValue::State(next) => {
                        let status = match outcome.status {
                            StepStatus::Ok => StepLogStatus::Ok,
                            StepStatus::ToolError(kind) => {
                                StepLogStatus::ToolError(kind.to_string())
                            }
                        };
                        (Some(call), status, next, None)
                    }
                }
            }
        };

        let mut rewards = Vec::new();
        if let Ok(sig) = RewardSignal::new(
            "r_attn",
            overlap.value,
            "fraction of table attention on plan-designated cells",
        ) {
            rewards.push(sig);
        }
        if let Some(params) = &cfg.calibration {
            if let Ok(sig) = RewardSignal::new(
                "r_attn_calibrated",
                params.calibrate(overlap.value),
                "logistic-calibrated overlap",
            ) {
                rewards.push(sig);
            }
        }
        for reward in backends.content_rewards {
            if let Ok(sig) = reward.score(question, &next_state) {
                rewards.push(sig);
            }
        }

        let next_hash = state_hash(&next_state);
        steps.push(StepEntry {
            step_index: t,
            call: logged_call,
            status,
            state_hash: format!("{next_hash:016x}"),
            rewards,
            attention_excluded: !overlap.informative,
        });
        scores.push(overlap.value);
        implied.push(implied_answer(&next_state.table));
        feedback.push(format!(
            "[verifier] step={} score={:.3} rationale=attention overlap with step mask",
            t, overlap.value
        ));

        if let Some(ans) = terminal {
            final_answer = Some(ans);
            halt_reason = HaltReason::FinalAnswer;
            break;
        }

        // improvement is measured against the best score so far; the halt
        // needs both a sub-delta improvement and an unchanged state hash
        let improvement = overlap.value - best_score;
        if improvement <= cfg.halt.delta_stag && next_hash == prev_hash {
            stagnant_run += 1;
        } else {
            stagnant_run = 0;
        }
        if overlap.value > best_score {
            best_score = overlap.value;
        }
        prev_hash = next_hash;
        state = next_state;
        let serialized = serialize(&state.table);
        text = serialized.0;
        index = serialized.1;

        if stagnant_run >= cfg.halt.k_stag {
            halt_reason = HaltReason::Stagnation;
            break;
        }
    }

    let final_answer = final_answer.unwrap_or_else(|| {
        // highest-scoring step's implied answer, earliest on ties
        let mut best: Option<(f64, usize)> = None;
        for (i, &s) in scores.iter().enumerate() {
            if best.is_none_or(|(bs, _)| s > bs) {
                best = Some((s, i));
            }
        }
        best.and_then(|(_, i)| implied[i].clone())
            .unwrap_or_default()
    });

    let reason_secs = if cfg.record_timings {
        reason_clock.elapsed().as_secs_f64()
    } else {
        0.0
    };

    TrajectoryRecord {
        question: question.to_string(),
        table,
        plan: plan.clone(),
        steps,
        halt_reason,
        final_answer,
        timings: PhaseTimings {
            plan_secs: 0.0,
            reason_secs,
        },
        backend_error,
    }
}

/// Step-level error-mode counters over a batch of trajectory logs: parse
/// errors, tool runtime failures, and how often a run reached a terminal
/// answer, by trajectory share.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorModeSummary {
    pub n_trajectories: usize,
    pub n_steps: usize,
    pub parse_error_steps: usize,
    pub tool_error_steps: usize,
    pub final_answer_rate: f64,
    pub plan_bypass_rate: f64,
}

pub fn summarize_error_modes(records: &[TrajectoryRecord]) -> ErrorModeSummary {
    let n_trajectories = records.len();
    let mut n_steps = 0usize;
    let mut parse_error_steps = 0usize;
    let mut tool_error_steps = 0usize;
    let mut final_answers = 0usize;
    let mut bypasses = 0usize;
    for record in records {
        n_steps += record.steps.len();
        for step in &record.steps {
            match step.status {
                StepLogStatus::ParseError => parse_error_steps += 1,
                StepLogStatus::ToolError(_) => tool_error_steps += 1,
                StepLogStatus::Ok => {}
            }
        }
        if record.halt_reason == HaltReason::FinalAnswer {
            final_answers += 1;
            // answered at step 1 while the plan had more to say
            if record.steps.len() == 1 && record.plan.steps.len() > 1 {
                bypasses += 1;
            }
        }
    }
    let denom = n_trajectories.max(1) as f64;
    ErrorModeSummary {
        n_trajectories,
        n_steps,
        parse_error_steps,
        tool_error_steps,
        final_answer_rate: final_answers as f64 / denom,
        plan_bypass_rate: bypasses as f64 / denom,
    }
}
