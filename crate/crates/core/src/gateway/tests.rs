use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use super::*;

fn script(json: &str) -> MockScript {
    MockScript::from_json(json).unwrap()
}

fn no_backoff() -> RetryPolicy {
    RetryPolicy {
        max_retries: 2,
        base_backoff_ms: 10,
        max_backoff_ms: 100,
    }
}

#[test]
fn scripted_echo() {
    let gw = Gateway::mock(
        script(r#"{"rules":[{"match":{"contains":["classify"]},"response":"CreateWallDetail"}]}"#),
        no_backoff(),
    )
    .unwrap();
    let r = gw
        .client(1)
        .complete(&ChatRequest::new("classify", "Please classify the task.", "hi"))
        .unwrap();
    assert_eq!(r.content, "CreateWallDetail");
    assert_eq!(r.attempt, 1);
    assert_eq!(r.backend_id, "mock");
}

#[test]
fn timeout_exhausts_retries() {
    let gw = Gateway::mock(
        script(r#"{"rules":[{"match":{},"response":"x","failure":{"mode":"timeout","p":1.0}}]}"#),
        no_backoff(),
    )
    .unwrap();
    let client = gw.client(1);
    let err = client.complete(&ChatRequest::new("classify", "s", "u")).unwrap_err();
    assert!(matches!(err, GatewayError::BackendUnreachable { attempts: 3, .. }));
    // Backoff 10 + 20 ms on the virtual clock.
    assert_eq!(client.clock().now_ms(), 30);
}

#[test]
fn timeout_then_success_reports_attempt() {
    // p = 0.5 with a fixed seed: find the attempt count, then assert it is reproducible.
    let s = script(r#"{"seed":3,"rules":[{"match":{},"response":"ok","failure":{"mode":"timeout","p":0.5}}]}"#);
    let gw = Gateway::mock(s, RetryPolicy { max_retries: 10, ..no_backoff() }).unwrap();
    let a = gw.client(9).complete(&ChatRequest::new("x", "s", "u")).unwrap();
    let b = gw.client(9).complete(&ChatRequest::new("x", "s", "u")).unwrap();
    assert_eq!(a, b);
    assert!(a.attempt >= 1);
}

#[test]
fn mock_is_deterministic() {
    let s = script(
        r#"{"seed":11,"rules":[{"match":{"step":"structure"},
            "response":"{\"wall_detail_name\":\"W\",\"layers\":[{\"material\":\"timber\",\"layer_type\":\"structure\",\"thermal_conductivity\":0.13,\"thickness\":140}]}",
            "failure":{"mode":"rule_violation","rule":"*","p":0.5}}]}"#,
    );
    let gw = Gateway::mock(s, no_backoff()).unwrap();
    let run = |seed| {
        let c = gw.client(seed);
        (0..40)
            .map(|_| c.complete(&ChatRequest::new("structure", "s", "u")).unwrap().content)
            .collect::<Vec<_>>()
    };
    let first = run(5);
    assert_eq!(first, run(5));
    assert_ne!(first, run(6));
    assert!(first.iter().any(|c| c.contains("concrete masonry unit")));
    assert!(first.iter().any(|c| c.contains("\"thickness\":140")));
}

#[test]
fn regex_captures_expand() {
    let gw = Gateway::mock(
        script(r#"{"rules":[{"match":{"regex":"thickness of (?P<t>\\d+) mm"},"response":"{\"min_thickness\": ${t}}"}]}"#),
        no_backoff(),
    )
    .unwrap();
    let r = gw
        .client(0)
        .complete(&ChatRequest::new("extract", "s", "ensuring a minimum thickness of 184 mm."))
        .unwrap();
    assert_eq!(r.content, r#"{"min_thickness": 184}"#);
}

#[test]
fn unmatched_is_empty() {
    let gw = Gateway::mock(script(r#"{"rules":[]}"#), no_backoff()).unwrap();
    assert_eq!(
        gw.client(0).complete(&ChatRequest::new("x", "s", "u")),
        Err(GatewayError::ResponseEmpty)
    );
}

#[test]
fn request_validation() {
    let gw = Gateway::mock(script(r#"{"rules":[]}"#), no_backoff()).unwrap();
    let mut req = ChatRequest::new("x", "s", "u");
    req.messages.push(ChatMessage::user("again"));
    assert!(matches!(gw.client(0).complete(&req), Err(GatewayError::InvalidRequest(_))));
    req.messages.clear();
    assert!(matches!(gw.client(0).complete(&req), Err(GatewayError::InvalidRequest(_))));
}

#[test]
fn transcription_mock() {
    let audio = b"RIFF fake wav bytes";
    let digest = audio_digest(audio);
    let gw = Gateway::mock(
        script(&format!(
            r#"{{"rules":[],"transcripts":{{"{digest}":{{"text":"Create an exterior wall for Alaska.","duration":2.1}}}}}}"#
        )),
        no_backoff(),
    )
    .unwrap();
    let c = gw.client(0);
    let t = c.transcribe(audio, "audio/wav").unwrap();
    assert_eq!(t.text, "Create an exterior wall for Alaska.");
    assert!(matches!(c.transcribe(b"", "audio/wav"), Err(GatewayError::UnsupportedMedia(_))));
    assert!(matches!(c.transcribe(audio, "text/plain"), Err(GatewayError::UnsupportedMedia(_))));
    assert_eq!(c.transcribe(b"other", "audio/webm"), Err(GatewayError::ResponseEmpty));
}

#[test]
fn register_script_validates_and_replaces() {
    let gw = Gateway::live(LiveConfig::default(), no_backoff());
    assert!(!gw.is_mock());
    let bad = MockScript {
        rules: vec![MockRule {
            name: None,
            matcher: Matcher::default(),
            response: "x".into(),
            failure: Some(FailureSpec {
                mode: FailureMode::Timeout,
                p: 1.5,
            }),
            latency_ms: 0,
        }],
        ..Default::default()
    };
    assert!(matches!(gw.register_script(bad), Err(GatewayError::InvalidScript(_))));
    assert!(!gw.is_mock());

    gw.register_script(script(r#"{"rules":[{"match":{},"response":"first"}]}"#)).unwrap();
    gw.register_script(script(r#"{"rules":[{"match":{},"response":"second"}]}"#)).unwrap();
    let r = gw.client(0).complete(&ChatRequest::new("x", "s", "u")).unwrap();
    assert_eq!(r.content, "second");
}

/// Minimal HTTP/1.1 responder: answers each connection with the next canned response.
fn serve(responses: Vec<(u16, &'static str, String)>) -> (String, mpsc::Receiver<String>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, extra_headers, body) in responses {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            let mut head = String::new();
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" || line.is_empty() {
                    break;
                }
            }
            let mut body_in = vec![0; len];
            reader.read_exact(&mut body_in).unwrap();
            tx.send(format!("{head}{}", String::from_utf8_lossy(&body_in))).unwrap();
            let reply = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\n{extra_headers}content-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
    });
    (format!("http://{addr}/v1"), rx)
}

fn live_client(url: String, retries: u32) -> ChatClient {
    let cfg = LiveConfig {
        chat_url: url,
        api_key_env: "NLBIM_TEST_KEY_UNSET".into(),
        routing: BTreeMap::from([("structure".to_string(), "gpt-4-0613".to_string())]),
        default_model: "gpt-3.5-turbo-1106".into(),
        ..Default::default()
    };
    ChatClient::new(
        std::sync::Arc::new(LiveTransport::new(cfg)),
        std::sync::Arc::new(VirtualClock::default()),
        RetryPolicy {
            max_retries: retries,
            ..no_backoff()
        },
    )
}

const OK_BODY: &str = r#"{"choices":[{"message":{"role":"assistant","content":"TIMBER"}}]}"#;

#[test]
fn live_retries_server_errors() {
    let (url, rx) = serve(vec![(503, "", "{}".into()), (200, "", OK_BODY.into())]);
    let mut req = ChatRequest::new("structure", "sys", "hello");
    req.response_hint = ResponseHint::JsonObject;
    let r = live_client(url, 2).complete(&req).unwrap();
    assert_eq!(r.content, "TIMBER");
    assert_eq!(r.attempt, 2);
    let first = rx.recv().unwrap();
    assert!(first.starts_with("POST /v1/chat/completions"));
    assert!(first.contains(r#""model":"gpt-4-0613""#));
    assert!(first.contains(r#""response_format":{"type":"json_object"}"#));
}

#[test]
fn live_rate_limit_surfaces() {
    let (url, _rx) = serve(vec![(429, "retry-after: 0\r\n", "{}".into()), (429, "retry-after: 0\r\n", "{}".into())]);
    let err = live_client(url, 1).complete(&ChatRequest::new("classify", "s", "u")).unwrap_err();
    assert_eq!(err, GatewayError::RateLimited { retry_after_s: Some(0) });
}

#[test]
fn live_client_error_not_retried() {
    let (url, _rx) = serve(vec![(400, "", r#"{"error":"bad"}"#.into())]);
    let err = live_client(url, 3).complete(&ChatRequest::new("classify", "s", "u")).unwrap_err();
    assert!(matches!(err, GatewayError::Http { status: 400, .. }));
}

#[test]
fn live_unreachable() {
    // Bind then drop to get a port with nothing listening.
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = live_client(format!("http://127.0.0.1:{port}/v1"), 1)
        .complete(&ChatRequest::new("classify", "s", "u"))
        .unwrap_err();
    assert!(matches!(err, GatewayError::BackendUnreachable { attempts: 2, .. }));
}

#[test]
fn live_transcription() {
    let (url, rx) = serve(vec![(
        200,
        "",
        r#"{"text":"Create an exterior wall for Alaska.","language":"english","duration":2.5}"#.into(),
    )]);
    let cfg = LiveConfig {
        transcription_url: url,
        api_key_env: "NLBIM_TEST_KEY_UNSET".into(),
        ..Default::default()
    };
    let t = LiveTransport::new(cfg).transcribe(b"abc", "audio/webm").unwrap();
    assert_eq!(t.text, "Create an exterior wall for Alaska.");
    assert_eq!(t.duration, 2.5);
    let req = rx.recv().unwrap();
    assert!(req.starts_with("POST /v1/audio/transcriptions"));
    assert!(req.contains("whisper-1"));
}
