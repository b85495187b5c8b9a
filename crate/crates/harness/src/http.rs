//! HTTP backends speaking an OpenAI-compatible chat-completions protocol
//! (planner, reasoner) plus a JSON attention endpoint.
//!
//! Tool calls are requested as strict JSON in the assistant message and
//! parsed with the same degrade-to-error policy as plans: malformed content
//! becomes an unparseable reply, transport failures are backend errors.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use cellground_core::engine::ToolCall;
use cellground_core::table::Table;
use cellground_core::verifier::CellAttention;

use crate::backend::{
    AttentionPayload, AttentionQuery, BackendError, PlannerBackend, ReasonerBackend, ReasonerQuery,
    ReasonerReply,
};

pub const ENV_ENDPOINT: &str = "CELLGROUND_ENDPOINT";
pub const ENV_MODEL: &str = "CELLGROUND_MODEL";
pub const ENV_API_KEY: &str = "CELLGROUND_API_KEY";
pub const ENV_TIMEOUT_SECS: &str = "CELLGROUND_TIMEOUT_SECS";

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout: Duration,
    pub api_key: Option<String>,
}

impl HttpConfig {
    /// Build from a backend spec string (`http` or `http:URL`), filling the
    /// rest from the environment.
    pub fn from_spec(spec: &str) -> Result<Self, BackendError> {
        let endpoint = match spec.strip_prefix("http:") {
            Some(url) if !url.is_empty() => url.to_string(),
            _ => std::env::var(ENV_ENDPOINT)
                .map_err(|_| BackendError::Env(format!("{ENV_ENDPOINT} is not set")))?,
        };
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "default".to_string());
        let api_key = std::env::var(ENV_API_KEY).ok();
        let timeout_secs = std::env::var(ENV_TIMEOUT_SECS)
            .ok()
            .and_then(|v| v.parse().ok())
            .unwrap_or(120);
        Ok(HttpConfig {
            endpoint,
            model,
            timeout: Duration::from_secs(timeout_secs),
            api_key,
        })
    }

    fn chat_url(&self) -> String {
        if self.endpoint.contains("/chat/completions") {
            self.endpoint.clone()
        } else {
            format!(
                "{}/v1/chat/completions",
                self.endpoint.trim_end_matches('/')
            )
        }
    }
}

fn client(cfg: &HttpConfig) -> Result<reqwest::blocking::Client, BackendError> {
    reqwest::blocking::Client::builder()
        .timeout(cfg.timeout)
        .build()
        .map_err(|e| BackendError::Transport(e.to_string()))
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Serialize, Deserialize)]
struct ChatMessage {
    role: String,
    content: String,
}

fn chat(cfg: &HttpConfig, messages: Vec<serde_json::Value>) -> Result<String, BackendError> {
    let body = json!({ "model": cfg.model, "messages": messages });
    let mut req = client(cfg)?.post(cfg.chat_url()).json(&body);
    if let Some(key) = &cfg.api_key {
        req = req.bearer_auth(key);
    }
    let resp = req.send().map_err(|e| {
        if e.is_timeout() {
            BackendError::Timeout(cfg.timeout)
        } else {
            BackendError::Transport(e.to_string())
        }
    })?;
    if !resp.status().is_success() {
        return Err(BackendError::Protocol(format!("status {}", resp.status())));
    }
    let parsed: ChatResponse = resp
        .json()
        .map_err(|e| BackendError::Protocol(e.to_string()))?;
    parsed
        .choices
        .into_iter()
        .next()
        .map(|c| c.message.content)
        .ok_or_else(|| BackendError::Protocol("no choices in response".into()))
}

/// First balanced JSON object inside free-form model output; tolerates code
/// fences and prose around the payload.
fn extract_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, ch) in text[start..].char_indices() {
        if in_string {
            if escaped {
                escaped = false;
            } else if ch == '\\' {
                escaped = true;
            } else if ch == '"' {
                in_string = false;
            }
            continue;
        }
        match ch {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i + ch.len_utf8()]);
                }
            }
            _ => {}
        }
    }
    None
}

const TOOL_INSTRUCTIONS: &str = "You operate a table with six tools plus termination. Respond with \
exactly one JSON object, no prose:\n\
{\"tool\":\"filter\",\"args\":{\"column\":C,\"op\":\"=\"|\"!=\"|\"<\"|\"<=\"|\">\"|\">=\"|\"contains\",\"value\":V}}\n\
{\"tool\":\"sort\",\"args\":{\"column\":C,\"dir\":\"asc\"|\"desc\"}}\n\
{\"tool\":\"aggregate\",\"args\":{\"kind\":\"sum\"|\"count\"|\"average\"|\"min\"|\"max\",\"column\":C}}\n\
{\"tool\":\"lookup\",\"args\":{\"column\":C,\"row\":N}}\n\
{\"tool\":\"compare\",\"args\":{\"left\":{\"column\":C,\"row\":N},\"right\":{\"column\":C,\"row\":N}}}\n\
{\"tool\":\"select\",\"args\":{\"columns\":[C,...]}}\n\
{\"tool\":\"f_final_answer\",\"args\":{\"answer\":A}}";

pub struct HttpReasoner {
    cfg: HttpConfig,
}

impl HttpReasoner {
    pub fn new(cfg: HttpConfig) -> Self {
        HttpReasoner { cfg }
    }
}

impl ReasonerBackend for HttpReasoner {
    fn next_call(&self, query: &ReasonerQuery) -> Result<ReasonerReply, BackendError> {
        let mut user = format!(
            "Question: {}\n\nCurrent table state:\n{}\n",
            query.question, query.table_text
        );
        if let Some(step) = query.plan_step {
            user.push_str(&format!(
                "\nPlan step {}: {} {}\n",
                step.index + 1,
                step.tool,
                step.description
            ));
        }
        for line in query.feedback {
            user.push_str(line);
            user.push('\n');
        }
        user.push_str("\nEmit the next tool call.");
        let content = chat(
            &self.cfg,
            vec![
                json!({"role": "system", "content": TOOL_INSTRUCTIONS}),
                json!({"role": "user", "content": user}),
            ],
        )?;
        let parsed = extract_json_object(&content)
            .and_then(|blob| serde_json::from_str::<ToolCall>(blob).ok());
        Ok(match parsed {
            Some(call) => ReasonerReply::Call(call),
            None => ReasonerReply::Unparseable(content),
        })
    }
}

pub struct HttpPlanner {
    cfg: HttpConfig,
}

impl HttpPlanner {
    pub fn new(cfg: HttpConfig) -> Self {
        HttpPlanner { cfg }
    }
}

impl PlannerBackend for HttpPlanner {
    fn plan_text(&self, question: &str, table: &Table) -> Result<String, BackendError> {
        let sample_rows: Vec<&Vec<String>> = table.rows().iter().take(15).collect();
        let system = "Write a numbered tool-use plan for answering a question over a table. \
Tools: filter, sort, aggregate, lookup, compare, select. Each step is one line and ends with \
a [target: col] tag (or [target: col, row N] for a single cell) naming the cells it consults.";
        let user = format!(
            "Question: {question}\nColumns: {}\nSample rows: {}",
            table.columns().join(", "),
            serde_json::to_string(&sample_rows).unwrap_or_default()
        );
        chat(
            &self.cfg,
            vec![
                json!({"role": "system", "content": system}),
                json!({"role": "user", "content": user}),
            ],
        )
    }
}

pub struct HttpAttention {
    cfg: HttpConfig,
}

impl HttpAttention {
    pub fn new(cfg: HttpConfig) -> Self {
        HttpAttention { cfg }
    }
}

impl crate::backend::AttentionProvider for HttpAttention {
    fn attention(&self, query: &AttentionQuery) -> Result<CellAttention, BackendError> {
        let body = json!({
            "model": self.cfg.model,
            "id": query.record_id,
            "question": query.question,
            "table": query.table,
            "text": query.text,
            "step": query.step,
        });
        let mut req = client(&self.cfg)?.post(&self.cfg.endpoint).json(&body);
        if let Some(key) = &self.cfg.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout(self.cfg.timeout)
            } else {
                BackendError::Transport(e.to_string())
            }
        })?;
        if !resp.status().is_success() {
            return Err(BackendError::Protocol(format!("status {}", resp.status())));
        }
        let payload: AttentionPayload = resp
            .json()
            .map_err(|e| BackendError::Protocol(e.to_string()))?;
        payload.resolve(query.index)
    }
}
