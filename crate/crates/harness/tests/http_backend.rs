//! HTTP backend tests against a canned local responder: one accept loop per
//! test, no external network.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::thread;
use std::time::Duration;

use cellground_core::engine::ToolCall;
use cellground_core::table::{serialize, CellMask, MaskProvenance, Table};
use cellground_harness::backend::{
    AttentionProvider, AttentionQuery, ReasonerBackend, ReasonerQuery, ReasonerReply,
};
use cellground_harness::http::{HttpAttention, HttpConfig, HttpReasoner};

/// Serve `n` requests with a fixed JSON body, then stop. Returns the bound
/// address and captured request bodies.
fn canned_server(body: &'static str, n: usize) -> (String, thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
    let addr = format!("http://{}", listener.local_addr().unwrap());
    let handle = thread::spawn(move || {
        let mut captured = Vec::new();
        for _ in 0..n {
            let (mut stream, _) = listener.accept().expect("accept");
            stream
                .set_read_timeout(Some(Duration::from_secs(5)))
                .unwrap();
            let mut buf = Vec::new();
            let mut chunk = [0u8; 4096];
            let mut content_length = 0usize;
            let mut header_end = 0usize;
            loop {
                let read = stream.read(&mut chunk).expect("read request");
                if read == 0 {
                    break;
                }
                buf.extend_from_slice(&chunk[..read]);
                if header_end == 0 {
                    if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
                        header_end = pos + 4;
                        let headers = String::from_utf8_lossy(&buf[..pos]).to_lowercase();
                        for line in headers.lines() {
                            if let Some(v) = line.strip_prefix("content-length:") {
                                content_length = v.trim().parse().unwrap_or(0);
                            }
                        }
                    }
                }
                if header_end > 0 && buf.len() >= header_end + content_length {
                    break;
                }
            }
            captured.push(String::from_utf8_lossy(&buf[header_end..]).to_string());
            let response = format!(
                "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}",
                body.len(),
                body
            );
            stream
                .write_all(response.as_bytes())
                .expect("write response");
        }
        captured
    });
    (addr, handle)
}

fn cfg(endpoint: String) -> HttpConfig {
    HttpConfig {
        endpoint,
        model: "test-model".into(),
        timeout: Duration::from_secs(5),
        api_key: None,
    }
}

#[test]
fn reasoner_speaks_chat_completions_and_parses_tool_calls() {
    let body = r#"{"choices":[{"message":{"role":"assistant","content":"{\"tool\":\"filter\",\"args\":{\"column\":\"Country\",\"op\":\"=\",\"value\":\"Algeria\"}}"}}]}"#;
    let (addr, server) = canned_server(body, 1);
    let reasoner = HttpReasoner::new(cfg(addr));
    let reply = reasoner
        .next_call(&ReasonerQuery {
            question: "how many plants are in Algeria?",
            table_text: "| Country |\n| --- |\n| Algeria |\n",
            plan_step: None,
            step: 0,
            feedback: &["[verifier] step=0 score=0.500 rationale=overlap".to_string()],
        })
        .expect("reasoner call");
    match reply {
        ReasonerReply::Call(ToolCall::Filter { column, value, .. }) => {
            assert_eq!(column, "Country");
            assert_eq!(value, "Algeria");
        }
        other => panic!("unexpected reply {other:?}"),
    }
    let requests = server.join().unwrap();
    let request: serde_json::Value = serde_json::from_str(&requests[0]).unwrap();
    assert_eq!(request["model"], "test-model");
    let messages = request["messages"].as_array().unwrap();
    assert_eq!(messages[0]["role"], "system");
    assert_eq!(messages[1]["role"], "user");
    let user = messages[1]["content"].as_str().unwrap();
    assert!(user.contains("Algeria"));
    assert!(user.contains("[verifier] step=0"));
}

#[test]
fn unparseable_model_output_degrades_not_errors() {
    let body =
        r#"{"choices":[{"message":{"role":"assistant","content":"I think the answer is 3."}}]}"#;
    let (addr, server) = canned_server(body, 1);
    let reasoner = HttpReasoner::new(cfg(addr));
    let reply = reasoner
        .next_call(&ReasonerQuery {
            question: "q",
            table_text: "",
            plan_step: None,
            step: 0,
            feedback: &[],
        })
        .expect("transport is fine");
    assert!(matches!(reply, ReasonerReply::Unparseable(_)));
    server.join().unwrap();
}

#[test]
fn attention_endpoint_returns_per_cell_payload() {
    let body = r#"{"per_cell":[[0.7,0.1],[0.1,0.1]],"per_header":[0.0,0.0]}"#;
    let (addr, server) = canned_server(body, 1);
    let attention = HttpAttention::new(cfg(addr));
    let table = Table::new(
        vec!["A".into(), "B".into()],
        vec![vec!["1".into(), "2".into()], vec!["3".into(), "4".into()]],
    )
    .unwrap();
    let (text, index) = serialize(&table);
    let mask = CellMask::uniform_fallback(2, 2).with_provenance(MaskProvenance::Oracle);
    let attn = attention
        .attention(&AttentionQuery {
            record_id: "r1",
            question: "q",
            table: &table,
            text: &text,
            index: &index,
            step: 0,
            mask_hint: Some(&mask),
        })
        .expect("attention call");
    assert!((attn.score(0, 0) - 0.7).abs() < 1e-12);
    let requests = server.join().unwrap();
    let request: serde_json::Value = serde_json::from_str(&requests[0]).unwrap();
    assert_eq!(request["id"], "r1");
    assert!(request["table"]["columns"].is_array());
}

#[test]
fn transport_failure_is_a_backend_error() {
    // nothing listens here
    let reasoner = HttpReasoner::new(cfg("http://127.0.0.1:1".into()));
    let result = reasoner.next_call(&ReasonerQuery {
        question: "q",
        table_text: "",
        plan_step: None,
        step: 0,
        feedback: &[],
    });
    assert!(result.is_err());
}
