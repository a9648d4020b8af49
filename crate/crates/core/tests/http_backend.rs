//! HTTP completion client against a minimal in-process server: request
//! shape, retry behavior, and failure mapping.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use toolforge_core::backend::{
    BackendError, CompletionClient, CompletionRequest, HttpCompletionClient,
};

/// Serves canned HTTP responses; each connection consumes the next status
/// from `plan` (the last entry repeats).
struct MockServer {
    addr: String,
    hits: Arc<AtomicUsize>,
    last_body: Arc<std::sync::Mutex<String>>,
}

fn start_server(plan: Vec<(u16, String)>) -> MockServer {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
    let addr = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let last_body = Arc::new(std::sync::Mutex::new(String::new()));
    let hits_thread = hits.clone();
    let body_thread = last_body.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let mut stream = match stream {
                Ok(s) => s,
                Err(_) => break,
            };
            let n = hits_thread.fetch_add(1, Ordering::SeqCst);
            let (status, body) = plan[n.min(plan.len() - 1)].clone();

            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut content_length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).is_err() || line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(value) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    content_length = value.trim().parse().unwrap_or(0);
                }
            }
            let mut request_body = vec![0u8; content_length];
            reader.read_exact(&mut request_body).ok();
            *body_thread.lock().unwrap() = String::from_utf8_lossy(&request_body).into_owned();

            let reason = if status == 200 { "OK" } else { "ERR" };
            let response = format!(
                "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(response.as_bytes()).ok();
        }
    });
    MockServer {
        addr,
        hits,
        last_body,
    }
}

fn request() -> CompletionRequest {
    CompletionRequest::new(
        "test-model",
        "Task: do the thing\nAction:\n",
        64,
        vec!["Task:".into()],
    )
}

fn fast_client(addr: &str) -> HttpCompletionClient {
    HttpCompletionClient::new(addr)
        .with_api_key(Some("k".into()))
        .with_backoff(Duration::from_millis(1))
}

#[test]
fn successful_completion_round_trip() {
    let server = start_server(vec![(
        200,
        r#"{"choices":[{"text":"API.search()"}]}"#.to_string(),
    )]);
    let client = fast_client(&server.addr);
    let text = client.complete(&request()).unwrap();
    assert_eq!(text, "API.search()");
    assert_eq!(server.hits.load(Ordering::SeqCst), 1);

    // The JSON body carries the protocol fields.
    let body: serde_json::Value = serde_json::from_str(&server.last_body.lock().unwrap()).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["prompt"], "Task: do the thing\nAction:\n");
    assert_eq!(body["max_tokens"], 64);
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["stop"][0], "Task:");
}

#[test]
fn transient_errors_are_retried() {
    let server = start_server(vec![
        (500, "oops".to_string()),
        (500, "oops".to_string()),
        (200, r#"{"choices":[{"text":"API.inc()"}]}"#.to_string()),
    ]);
    let client = fast_client(&server.addr);
    let text = client.complete(&request()).unwrap();
    assert_eq!(text, "API.inc()");
    assert_eq!(server.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn three_failures_exhaust_attempts() {
    let server = start_server(vec![(500, "oops".to_string())]);
    let client = fast_client(&server.addr);
    match client.complete(&request()) {
        Err(BackendError::Unavailable { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected Unavailable, got {other:?}"),
    }
    assert_eq!(server.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_fail_fast() {
    let server = start_server(vec![(401, "denied".to_string())]);
    let client = fast_client(&server.addr);
    match client.complete(&request()) {
        Err(BackendError::Unavailable { attempts, .. }) => assert_eq!(attempts, 1),
        other => panic!("expected Unavailable, got {other:?}"),
    }
    assert_eq!(server.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn connection_refused_maps_to_unavailable() {
    // Bind then drop to get an unused port.
    let port = {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        listener.local_addr().unwrap().port()
    };
    let client = HttpCompletionClient::new(format!("http://127.0.0.1:{port}"))
        .with_backoff(Duration::from_millis(1));
    assert!(matches!(
        client.complete(&request()),
        Err(BackendError::Unavailable { .. })
    ));
}
