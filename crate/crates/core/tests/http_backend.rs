//! HttpBackend against a local stub server speaking just enough HTTP/1.1.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use docmt_core::llm::{wire_body, GenerationSettings};
use docmt_core::{ChatBackend, ChatRequest, HttpBackend, LlmError, RetryPolicy};

struct Captured {
    path: String,
    auth: Option<String>,
    body: Vec<u8>,
}

/// Serves one canned `(status, body)` per connection, in order.
fn stub(responses: Vec<(u16, &'static str)>) -> (String, Arc<Mutex<Vec<Captured>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = Arc::clone(&seen);
    thread::spawn(move || {
        for (status, body) in responses {
            let Ok((stream, _)) = listener.accept() else { return };
            let mut reader = BufReader::new(stream);
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let path = request_line.split_whitespace().nth(1).unwrap_or("").to_string();
            let mut len = 0;
            let mut auth = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (k, v) = line.split_once(':').unwrap();
                match k.to_ascii_lowercase().as_str() {
                    "content-length" => len = v.trim().parse().unwrap(),
                    "authorization" => auth = Some(v.trim().to_string()),
                    _ => {}
                }
            }
            let mut req_body = vec![0; len];
            reader.read_exact(&mut req_body).unwrap();
            log.lock().unwrap().push(Captured {
                path,
                auth,
                body: req_body,
            });
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
            stream.flush().unwrap();
        }
    });
    (base, seen)
}

const OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"ok"}}]}"#;

fn request() -> ChatRequest {
    ChatRequest::prompt("translator", &GenerationSettings::default(), "Übersetze: \"x\"\n".to_string())
}

fn backend(base: &str, attempts: u32) -> HttpBackend {
    HttpBackend::new(base, Some("k-123".into()), Duration::from_secs(5), RetryPolicy::no_delay(attempts))
}

#[test]
fn retries_rate_limits_then_succeeds() {
    let (base, seen) = stub(vec![(429, "{}"), (429, "{}"), (200, OK)]);
    let out = backend(&base, 3).complete(&request()).unwrap();
    assert_eq!(out, "ok");
    let seen = seen.lock().unwrap();
    assert_eq!(seen.len(), 3);
    assert!(seen.iter().all(|c| c.path == "/v1/chat/completions"));
    assert_eq!(seen[0].auth.as_deref(), Some("Bearer k-123"));
}

#[test]
fn exhausted_retries_are_a_transport_error() {
    let (base, seen) = stub(vec![(503, "{}"), (429, "{}")]);
    let err = backend(&base, 2).complete(&request()).unwrap_err();
    assert!(matches!(err, LlmError::Transport { attempts: 2, .. }), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn auth_failure_is_not_retried() {
    let (base, seen) = stub(vec![(401, r#"{"error":"bad key"}"#), (200, OK)]);
    let err = backend(&base, 3).complete(&request()).unwrap_err();
    assert!(matches!(err, LlmError::Auth { status: 401, .. }), "{err:?}");
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn malformed_body_is_a_protocol_error() {
    let (base, _) = stub(vec![(200, r#"{"choices":[]}"#)]);
    let err = backend(&base, 3).complete(&request()).unwrap_err();
    assert!(matches!(err, LlmError::Protocol(_)), "{err:?}");
}

#[test]
fn server_sees_exact_request_bytes() {
    let (base, seen) = stub(vec![(200, OK)]);
    let req = request();
    backend(&base, 1).complete(&req).unwrap();
    let seen = seen.lock().unwrap();
    assert_eq!(seen[0].body, wire_body(&req));
    let json: serde_json::Value = serde_json::from_slice(&seen[0].body).unwrap();
    assert_eq!(json["messages"][0]["content"], "Übersetze: \"x\"\n");
    assert_eq!(json["max_tokens"], 2048);
    assert!(json.get("tag").is_none());
}

#[test]
fn unreachable_server_exhausts_retries() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let err = backend(&base, 2).complete(&request()).unwrap_err();
    assert!(matches!(err, LlmError::Transport { .. }), "{err:?}");
}
