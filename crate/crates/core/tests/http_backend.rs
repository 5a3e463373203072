use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use promptscan::backend::http::{ChatTransport, FixtureTransport, HttpReply, ReqwestTransport};
use promptscan::backend::{BackendError, CallContext, HttpBackend, HttpConfig, LearnerBackend};
use promptscan::context::{Playbook, Section};
use promptscan::harness::ingest_traces;
use promptscan::pipeline::{run_iteration, StrategyConfig, TaskSample};

fn fixtures(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/http")
        .join(name)
}

/// Shares a fixture transport so the test can inspect it after the run.
struct Shared(Arc<FixtureTransport>);

impl ChatTransport for Shared {
    fn post(
        &self,
        url: &str,
        key: &str,
        body: &serde_json::Value,
    ) -> Result<HttpReply, BackendError> {
        self.0.post(url, key, body)
    }
}

#[test]
fn naive_iteration_replays_with_repair() {
    let dir = fixtures("naive_iteration");
    let transport = Arc::new(FixtureTransport::new(&dir));
    let backend = HttpBackend::new(
        HttpConfig::new("http://fixture.invalid/v1", "fixture-model"),
        "test-key",
        Box::new(Shared(transport.clone())),
    );
    let corpus = ingest_traces(&dir.join("traces.jsonl")).unwrap();
    // one worker keeps the request order equal to the fixture order
    let out = run_iteration(
        &corpus,
        &Playbook::new(),
        &StrategyConfig::naive(2, 1),
        &backend,
        0,
        1,
    )
    .unwrap();

    // two reflections (the second needs one repair) and one curation
    assert_eq!(transport.consumed(), 4);
    assert_eq!(backend.request_count(), 4);
    let pb = out.playbook;
    assert_eq!(pb.len(), 2);
    assert_eq!(pb.get("strat-00001").unwrap().section, Section::Strategies);
    let calc = pb.get("calc-00002").unwrap();
    assert!(calc.text.starts_with("Convert percentage rates"));
    assert_eq!(calc.created_iter, 0);
}

#[test]
fn fixture_mismatch_is_reported() {
    let dir = fixtures("naive_iteration");
    let backend = HttpBackend::new(
        HttpConfig::new("http://fixture.invalid/v1", "another-model"),
        "k",
        Box::new(FixtureTransport::new(&dir)),
    );
    let corpus = ingest_traces(&dir.join("traces.jsonl")).unwrap();
    let traj = corpus[0].offline_trajectory.clone().unwrap();
    let err = backend
        .reflect(&corpus[0], &traj, &Playbook::new(), &CallContext::new(1, 0))
        .unwrap_err();
    assert!(matches!(err, BackendError::Fixture(m) if m.contains("does not match")));
}

#[test]
fn rate_limit_backs_off_then_succeeds() {
    let slept = Arc::new(Mutex::new(Vec::new()));
    let s2 = slept.clone();
    let backend = HttpBackend::new(
        HttpConfig::new("http://fixture.invalid/v1", "fixture-model"),
        "k",
        Box::new(FixtureTransport::new(fixtures("rate_limited"))),
    )
    .with_sleep(move |d| s2.lock().unwrap().push(d));
    let task = TaskSample::new("q3", "Total the Q3 column.");
    let t = backend.http_chat_execute(&task, &Playbook::new()).unwrap();
    assert_eq!(t.steps.len(), 3);
    let slept = slept.lock().unwrap();
    assert_eq!(slept.len(), 2);
    // exponential schedule with jitter in [0.5, 1) of the nominal delay
    assert!(slept[0] >= Duration::from_millis(500) && slept[0] <= Duration::from_secs(1));
    assert!(slept[1] >= Duration::from_secs(1) && slept[1] <= Duration::from_secs(2));
}

#[test]
fn rate_limit_exhaustion() {
    let mut cfg = HttpConfig::new("http://fixture.invalid/v1", "fixture-model");
    cfg.max_attempts = 2;
    let backend = HttpBackend::new(
        cfg,
        "k",
        Box::new(FixtureTransport::new(fixtures("rate_limited"))),
    )
    .with_sleep(|_| {});
    let err = backend
        .http_chat_execute(&TaskSample::new("q3", "x"), &Playbook::new())
        .unwrap_err();
    assert!(matches!(err, BackendError::RateLimited { attempts: 2 }));
}

/// Serves `replies` in order on a local socket and returns captured requests.
fn serve(replies: Vec<(u16, &'static str)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let handle = std::thread::spawn(move || {
        let mut seen = Vec::new();
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut head = String::new();
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut buf = vec![0u8; len];
            reader.read_exact(&mut buf).unwrap();
            seen.push(head + &String::from_utf8(buf).unwrap());
            let resp = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            reader.get_mut().write_all(resp.as_bytes()).unwrap();
        }
        seen
    });
    (format!("http://{addr}/v1"), handle)
}

#[test]
fn reqwest_transport_over_local_socket() {
    let ok = r#"{"choices":[{"message":{"role":"assistant","content":"{\"steps\":[\"a\"],\"outcome\":\"failure\"}"}}]}"#;
    let (base, server) = serve(vec![(503, r#"{"error":"busy"}"#), (200, ok)]);
    let transport = ReqwestTransport::new(Duration::from_secs(10)).unwrap();
    let backend = HttpBackend::new(
        HttpConfig::new(base, "local-model"),
        "sekrit",
        Box::new(transport),
    )
    .with_sleep(|_| {});
    let t = backend
        .http_chat_execute(&TaskSample::new("t1", "do it"), &Playbook::new())
        .unwrap();
    assert_eq!(t.steps, vec!["a"]);
    let requests = server.join().unwrap();
    assert_eq!(requests.len(), 2);
    let first = requests[0].to_ascii_lowercase();
    assert!(first.starts_with("post /v1/chat/completions "));
    assert!(first.contains("authorization: bearer sekrit"));
    assert!(requests[0].contains(r#""model":"local-model""#));
}

#[test]
fn client_errors_are_not_retried() {
    let (base, server) = serve(vec![(401, r#"{"error":"bad key"}"#)]);
    let backend = HttpBackend::new(
        HttpConfig::new(base, "m"),
        "wrong",
        Box::new(ReqwestTransport::new(Duration::from_secs(10)).unwrap()),
    );
    let err = backend
        .http_chat_execute(&TaskSample::new("t1", "x"), &Playbook::new())
        .unwrap_err();
    assert!(matches!(err, BackendError::Status { status: 401, .. }));
    assert_eq!(server.join().unwrap().len(), 1);
}

#[test]
fn missing_key_env() {
    let mut cfg = HttpConfig::new("http://fixture.invalid/v1", "m");
    cfg.api_key_env = "PROMPTSCAN_TEST_KEY_THAT_IS_NOT_SET".into();
    assert!(matches!(
        HttpBackend::from_env(cfg),
        Err(BackendError::MissingApiKey(_))
    ));
}
