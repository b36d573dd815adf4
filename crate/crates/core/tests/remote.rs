use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use serde_json::{json, Value};

use ras_core::embed::{Embedder, RemoteEmbedder, RemoteEmbedderConfig};
use ras_core::gateway::{
    render_plan_prompt, GatewayError, LanguageModel, RemoteBackend, RemoteConfig, INST_PLAN,
};
use ras_core::http::RetryPolicy;

struct Received {
    headers: Vec<String>,
    body: Value,
}

/// Serves one canned `(status, body)` per connection, in order, and reports
/// each request it saw.
fn serve(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<Received>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut headers = Vec::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end().to_string();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                headers.push(line);
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            let _ = tx.send(Received {
                headers,
                body: serde_json::from_slice(&buf).unwrap_or(Value::Null),
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, rx)
}

fn fast_retry() -> RetryPolicy {
    RetryPolicy {
        max_attempts: 3,
        initial_backoff_ms: 1,
        timeout_ms: 5_000,
    }
}

fn backend(url: &str) -> RemoteBackend {
    RemoteBackend::new(RemoteConfig {
        endpoint: url.into(),
        model: "planner-7b".into(),
        api_key: Some("k".into()),
        temperature: 0.0,
        retry: fast_retry(),
    })
}

fn reply(text: &str) -> String {
    json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

#[test]
fn request_carries_instruction_verbatim() {
    let (url, rx) = serve(vec![(200, reply("[SUFFICIENT]"))]);
    let prompt = render_plan_prompt(&[], "Who?", None, None);
    let out = backend(&url).complete(&prompt, Some(64)).unwrap();
    assert_eq!(out, "[SUFFICIENT]");
    let got = rx.recv().unwrap();
    assert_eq!(got.body["messages"][0]["role"], "system");
    assert_eq!(got.body["messages"][0]["content"], INST_PLAN);
    assert_eq!(got.body["messages"][1]["content"], "Question: Who?");
    assert_eq!(got.body["max_tokens"], 64);
    assert_eq!(got.body["model"], "planner-7b");
    assert!(got
        .headers
        .iter()
        .any(|h| h == "authorization: Bearer k" || h == "Authorization: Bearer k"));
}

#[test]
fn server_errors_are_retried() {
    let (url, rx) = serve(vec![(503, "{}".into()), (200, reply("ok"))]);
    let out = backend(&url)
        .complete(&render_plan_prompt(&[], "Q", None, None), Some(8))
        .unwrap();
    assert_eq!(out, "ok");
    assert_eq!(rx.try_iter().count(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, rx) = serve(vec![
        (400, "{\"error\":\"bad\"}".into()),
        (200, reply("unused")),
    ]);
    let err = backend(&url)
        .complete(&render_plan_prompt(&[], "Q", None, None), Some(8))
        .unwrap_err();
    match err {
        GatewayError::Transport(t) => {
            assert_eq!(t.status, Some(400));
            assert_eq!(t.attempts, 1);
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(rx.recv().unwrap().body["max_tokens"], 8);
}

#[test]
fn missing_text_is_malformed() {
    let (url, _rx) = serve(vec![(200, "{\"unexpected\": true}".into())]);
    let err = backend(&url)
        .complete(&render_plan_prompt(&[], "Q", None, None), Some(8))
        .unwrap_err();
    assert!(matches!(err, GatewayError::Malformed(_)));
}

#[test]
fn remote_embedder_validates_shape() {
    let (url, rx) = serve(vec![
        (200, "[[1.0, 0.0], [0.0, 2.0]]".into()),
        (200, "[[1.0, 0.0, 3.0]]".into()),
    ]);
    let e = RemoteEmbedder::new(RemoteEmbedderConfig {
        endpoint: url,
        dimension: 2,
        api_key: None,
        retry: fast_retry(),
    });
    let v = e.embed_batch(&["a", "b"]).unwrap();
    assert_eq!(v, vec![vec![1.0, 0.0], vec![0.0, 2.0]]);
    assert_eq!(rx.recv().unwrap().body, json!(["a", "b"]));
    assert!(e.embed_batch(&["c"]).is_err());
}
