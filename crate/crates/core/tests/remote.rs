use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use proptest::prelude::*;
use serde_json::{json, Value};
use tracekit::explain::{exact_shap, shap_sample, ShapOptions};
use tracekit::models::Predictor;
use tracekit::remote::*;
use tracekit::Error;

// ---- stub chat-completions server ----

type Handler = dyn Fn(&Value) -> (u16, String) + Send + Sync;

struct StubHttp {
    url: String,
    hits: Arc<AtomicUsize>,
}

fn read_http_request(stream: &mut TcpStream) -> Option<Value> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut len = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        let lower = line.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            len = v.trim().parse().ok()?;
        }
        if line == "\r\n" {
            break;
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    serde_json::from_slice(&body).ok()
}

fn stub_http(handler: Box<Handler>) -> StubHttp {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    let handler: Arc<Handler> = handler.into();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let handler = handler.clone();
            let counter = counter.clone();
            thread::spawn(move || {
                let Some(req) = read_http_request(&mut stream) else { return };
                let n = counter.fetch_add(1, Ordering::SeqCst);
                let (status, body) = handler(&json!({"n": n, "req": req}));
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
            });
        }
    });
    StubHttp { url, hits }
}

/// lp("1") = -0.1 * words, lp("0") = -1, so log-odds = 1 - 0.1 * words.
fn completion_for(req: &Value) -> String {
    let user = req["messages"][1]["content"].as_str().unwrap();
    let words = user.split_whitespace().count() as f64;
    json!({"choices": [{"message": {"content": "0"}, "logprobs": {"content": [{"token": "0", "logprob": -1.0,
        "top_logprobs": [{"token": "1", "logprob": -0.1 * words}, {"token": "0", "logprob": -1.0}]}]}}]})
    .to_string()
}

fn word_oracle(text: &str) -> f64 {
    1.0 - 0.1 * text.split_whitespace().count() as f64
}

fn api_config(url: &str, cache: Option<PathBuf>) -> ApiPredictorConfig {
    ApiPredictorConfig {
        endpoint: url.to_string(),
        timeout_secs: 10.0,
        backoff_ms: 1,
        cache_dir: cache,
        ..Default::default()
    }
}

#[test]
fn api_predictor_against_stub() {
    let stub = stub_http(Box::new(|v| {
        let req = &v["req"];
        assert_eq!(req["temperature"], 0.0);
        assert_eq!(req["logprobs"], true);
        assert!(req["messages"][0]["content"].as_str().unwrap().contains(ANSWER_INSTRUCTION));
        (200, completion_for(req))
    }));
    let p = ApiPredictor::with_key(api_config(&stub.url, None), Some("k".into())).unwrap();
    let texts: Vec<String> = ["I was wounded", "nothing happened today at all", "a"].map(String::from).to_vec();
    let z = p.predict_batch(&texts).unwrap();
    for (t, z) in texts.iter().zip(&z) {
        assert!((z - word_oracle(t)).abs() < 1e-12);
    }
}

#[test]
fn api_retries_then_succeeds() {
    let stub = stub_http(Box::new(|v| {
        if v["n"].as_u64().unwrap() < 2 {
            (503, "{}".into())
        } else {
            (200, completion_for(&v["req"]))
        }
    }));
    let p = ApiPredictor::with_key(api_config(&stub.url, None), Some("k".into())).unwrap();
    assert!((p.predict_log_odds("two words").unwrap() - 0.8).abs() < 1e-12);
    assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn api_gives_up_after_retries() {
    let stub = stub_http(Box::new(|_| (500, "{}".into())));
    let mut cfg = api_config(&stub.url, None);
    cfg.max_retries = 2;
    let p = ApiPredictor::with_key(cfg, Some("k".into())).unwrap();
    assert!(matches!(p.predict_log_odds("x"), Err(Error::ApiUnavailable(_))));
    assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn api_client_error_is_not_retried() {
    let stub = stub_http(Box::new(|_| (401, "{\"error\":\"bad key\"}".into())));
    let p = ApiPredictor::with_key(api_config(&stub.url, None), Some("k".into())).unwrap();
    let err = p.predict_log_odds("x").unwrap_err();
    assert!(err.to_string().contains("401"));
    assert_eq!(stub.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn api_cache_makes_reruns_offline() {
    let dir = tempfile::tempdir().unwrap();
    let stub = stub_http(Box::new(|v| (200, completion_for(&v["req"]))));
    let cfg = api_config(&stub.url, Some(dir.path().to_path_buf()));
    let first = ApiPredictor::with_key(cfg.clone(), Some("k".into())).unwrap().predict_log_odds("one two three").unwrap();
    assert_eq!(stub.hits.load(Ordering::SeqCst), 1);

    // point at a dead endpoint without a key: only the cache can answer
    let mut offline = cfg;
    offline.endpoint = "http://127.0.0.1:9/".into();
    let again = ApiPredictor::with_key(offline, None).unwrap().predict_log_odds("one two three").unwrap();
    assert_eq!(first.to_bits(), again.to_bits());
    assert_eq!(stub.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn api_concurrency_is_bounded() {
    let in_flight = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let (f, pk) = (in_flight.clone(), peak.clone());
    let stub = stub_http(Box::new(move |v| {
        let now = f.fetch_add(1, Ordering::SeqCst) + 1;
        pk.fetch_max(now, Ordering::SeqCst);
        thread::sleep(std::time::Duration::from_millis(20));
        f.fetch_sub(1, Ordering::SeqCst);
        (200, completion_for(&v["req"]))
    }));
    let mut cfg = api_config(&stub.url, None);
    cfg.max_concurrency = 2;
    let p = ApiPredictor::with_key(cfg, Some("k".into())).unwrap();
    let texts: Vec<String> = (0..12).map(|i| "w ".repeat(i + 1)).collect();
    let z = p.predict_batch(&texts).unwrap();
    assert_eq!(z.len(), 12);
    assert!(peak.load(Ordering::SeqCst) <= 2);
    assert!(peak.load(Ordering::SeqCst) >= 1);
}

#[test]
fn api_predictor_supports_shap() {
    let stub = stub_http(Box::new(|v| (200, completion_for(&v["req"]))));
    let dir = tempfile::tempdir().unwrap();
    let p = ApiPredictor::with_key(api_config(&stub.url, Some(dir.path().into())), Some("k".into())).unwrap();
    let exact = exact_shap(&p, "my brother was killed").unwrap();
    for phi in &exact.phi {
        assert!((phi + 0.1).abs() < 1e-9);
    }
}

proptest! {
    #[test]
    fn extraction_is_antisymmetric(
        entries in proptest::collection::vec((prop_oneof!["0", "1", " 1", "yes", "no"], -20.0f64..0.0), 0..6),
        completion in prop_oneof!["0", "1", "maybe"],
    ) {
        let labels = ["0".to_string(), "1".to_string()];
        let swapped = ["1".to_string(), "0".to_string()];
        let top: Vec<(String, f64)> = entries.into_iter().map(|(t, p)| (t.to_string(), p)).collect();
        let a = log_odds_from_top(&top, Some(&completion), &labels);
        let b = log_odds_from_top(&top, Some(&completion), &swapped);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a, -b),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a, b),
        }
    }
}

// ---- bridge ----

fn python() -> Option<String> {
    ["python3", "python"]
        .into_iter()
        .find(|p| std::process::Command::new(p).arg("--version").output().is_ok())
        .map(String::from)
}

fn echo_script() -> String {
    concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/echo_bridge.py").to_string()
}

fn length_oracle(text: &str) -> f64 {
    text.chars().count() as f64 - 5.0
}

/// In-process TCP bridge server; `respond` maps a request to a response line.
fn tcp_bridge(handshake: &'static str, respond: fn(&Value) -> Option<String>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { break };
            thread::spawn(move || {
                let mut w = stream.try_clone().unwrap();
                writeln!(w, "{handshake}").unwrap();
                for line in BufReader::new(stream).lines() {
                    let Ok(line) = line else { return };
                    let req: Value = serde_json::from_str(&line).unwrap();
                    match respond(&req) {
                        Some(resp) => {
                            if writeln!(w, "{resp}").is_err() {
                                return;
                            }
                        }
                        None => return,
                    }
                }
            });
        }
    });
    addr
}

fn echo_response(req: &Value) -> Option<String> {
    let texts: Vec<&str> = req["texts"].as_array()?.iter().map(|t| t.as_str().unwrap()).collect();
    Some(match req["kind"].as_str()? {
        "predict" => json!({"id": req["id"], "log_odds": texts.iter().map(|t| length_oracle(t)).collect::<Vec<_>>()}),
        _ => json!({"id": req["id"], "vectors": texts.iter().map(|t| vec![t.len() as f64, 1.0]).collect::<Vec<_>>()}),
    }
    .to_string())
}

const HANDSHAKE_2: &str = r#"{"protocol":"trace-bridge/1","latent_dim":2}"#;

#[test]
fn tcp_bridge_echo() {
    let addr = tcp_bridge(HANDSHAKE_2, echo_response);
    let mut s = BridgeEndpoint::tcp(&addr).connect().unwrap();
    assert_eq!(s.latent_dim(), Some(2));
    let texts: Vec<String> = ["a", "hello world", "I was wounded"].map(String::from).to_vec();
    let z = s.predict(&texts).unwrap();
    assert_eq!(z.len(), 3);
    for (t, z) in texts.iter().zip(&z) {
        assert_eq!(*z, length_oracle(t));
    }
    let v = s.latent(&texts[..2]).unwrap();
    assert_eq!(v.len(), 2);
    assert!(v.iter().all(|x| x.len() == 2));
}

#[test]
fn pipelined_batch_preserves_order() {
    let addr = tcp_bridge(HANDSHAKE_2, echo_response);
    let mut s = BridgeEndpoint::tcp(&addr).connect().unwrap();
    let batch: Vec<(BridgeKind, Vec<String>)> = (0..20)
        .map(|i| (if i % 3 == 0 { BridgeKind::Latent } else { BridgeKind::Predict }, vec!["x".repeat(i + 1)]))
        .collect();
    let out = s.call_pipelined(&batch).unwrap();
    for (i, o) in out.iter().enumerate() {
        match o {
            BridgeOutput::LogOdds(z) => assert_eq!(z[0], (i + 1) as f64 - 5.0),
            BridgeOutput::Vectors(v) => assert_eq!(v[0][0], (i + 1) as f64),
        }
    }
}

#[test]
fn out_of_order_ids_are_rejected() {
    fn shifted(req: &Value) -> Option<String> {
        let mut v: Value = serde_json::from_str(&echo_response(req)?).unwrap();
        v["id"] = json!(req["id"].as_u64()? + 1);
        Some(v.to_string())
    }
    let addr = tcp_bridge(HANDSHAKE_2, shifted);
    let mut s = BridgeEndpoint::tcp(&addr).connect().unwrap();
    let err = s.predict(&["a".into()]).unwrap_err();
    match err {
        Error::Protocol { line, .. } => assert!(line.contains("\"id\":1")),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn wrong_lengths_and_dims_are_protocol_errors() {
    fn short(req: &Value) -> Option<String> {
        Some(match req["kind"].as_str()? {
            "predict" => json!({"id": req["id"], "log_odds": [1.0]}),
            _ => json!({"id": req["id"], "vectors": [[1.0, 2.0, 3.0]]}),
        }
        .to_string())
    }
    let addr = tcp_bridge(HANDSHAKE_2, short);
    let mut s = BridgeEndpoint::tcp(&addr).connect().unwrap();
    assert!(matches!(s.predict(&["a".into(), "b".into()]), Err(Error::Protocol { .. })));
    let mut s = BridgeEndpoint::tcp(&addr).connect().unwrap();
    assert!(matches!(s.latent(&["a".into()]), Err(Error::Protocol { .. })));
}

#[test]
fn server_error_response_surfaces() {
    fn failing(req: &Value) -> Option<String> {
        Some(json!({"id": req["id"], "error": "model exploded"}).to_string())
    }
    let addr = tcp_bridge(HANDSHAKE_2, failing);
    let mut s = BridgeEndpoint::tcp(&addr).connect().unwrap();
    assert!(s.predict(&["a".into()]).unwrap_err().to_string().contains("model exploded"));
}

#[test]
fn bad_handshake() {
    let addr = tcp_bridge(r#"{"protocol":"trace-bridge/9","latent_dim":null}"#, echo_response);
    assert!(matches!(BridgeEndpoint::tcp(&addr).connect(), Err(Error::Protocol { .. })));
}

#[test]
fn server_hangup_is_bridge_closed() {
    let addr = tcp_bridge(HANDSHAKE_2, |_| None);
    let mut s = BridgeEndpoint::tcp(&addr).connect().unwrap();
    assert!(matches!(s.predict(&["a".into()]), Err(Error::BridgeClosed)));
}

#[test]
fn tcp_bridge_predictor_supports_shap() {
    let addr = tcp_bridge(HANDSHAKE_2, echo_response);
    let p = BridgePredictor::connect(&BridgeEndpoint::tcp(&addr)).unwrap();
    let text = "my brother was killed";
    let exact = exact_shap(&p, text).unwrap();
    let sampled = shap_sample(&p, text, &ShapOptions { n_samples: 200, ..Default::default() }).unwrap();
    assert!(sampled.efficiency_holds(3.0));
    assert!((exact.full_value - length_oracle(text)).abs() < 1e-12);
    assert_eq!(p.predict_batch(&["abc".into(), "abcdef".into()]).unwrap(), vec![-2.0, 1.0]);
}

#[test]
fn stdio_bridge_echo() {
    let Some(py) = python() else {
        eprintln!("python not found; skipping stdio bridge test");
        return;
    };
    let p = BridgePredictor::connect(&BridgeEndpoint::stdio(py, [echo_script()])).unwrap();
    assert_eq!(p.latent_dim(), Some(3));
    let texts: Vec<String> = ["a", "trauma é", "I was wounded badly"].map(String::from).to_vec();
    let z = p.predict_batch(&texts).unwrap();
    for (t, z) in texts.iter().zip(&z) {
        assert_eq!(*z, length_oracle(t));
    }
    let v = p.latent_batch(&texts).unwrap();
    assert_eq!(v[2], vec![19.0, 4.0, 1.0]);
}

#[test]
fn stdio_bridge_failures() {
    let Some(py) = python() else { return };
    let p = BridgeEndpoint::stdio(&py, [echo_script(), "exit".into()]).connect().unwrap();
    let mut p = p;
    assert!(matches!(p.predict(&["a".into()]), Err(Error::BridgeClosed)));

    let mut g = BridgeEndpoint::stdio(&py, [echo_script(), "garbage".into()]).connect().unwrap();
    match g.predict(&["a".into()]) {
        Err(Error::Protocol { line, .. }) => assert_eq!(line, "this is not json"),
        other => panic!("unexpected {other:?}"),
    }
}
