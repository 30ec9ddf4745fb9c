mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use base64::Engine as _;
use common::{dead_address, serve, Reply};
use dsg::backends::{
    BackendError, CompleteRequest, GenerationBackend, HttpGenerator, HttpQa, QaBackend, QaQuery,
    MAX_INLINE_IMAGE_BYTES,
};
use dsg::dataset::{PromptRecord, Source};
use dsg::fixtures;
use dsg::pipeline::{generate_dsg, PreambleSet, RetryConfig, Stage};
use serde::Deserialize;
use serde_json::Value;

#[derive(Debug, Deserialize)]
struct Vector {
    name: String,
    endpoint: String,
    request: Value,
    status: u16,
    response: String,
    expect: Value,
}

fn vectors() -> Vec<Vector> {
    serde_json::from_str(include_str!("../testdata/wire_vectors.json")).unwrap()
}

const TIMEOUT: Duration = Duration::from_secs(5);

fn send(url: &str, v: &Vector) -> Result<String, BackendError> {
    let s = |k: &str| v.request[k].as_str().unwrap_or_default().to_string();
    match v.endpoint.as_str() {
        "/v1/complete" => HttpGenerator::new(url, TIMEOUT, None)?.complete(&s("preamble"), &s("input")),
        "/v1/vqa" => {
            let image_ref = s("image_ref");
            let question = s("question");
            HttpQa::new(url, TIMEOUT, None)?.ask(&QaQuery {
                image_ref: &image_ref,
                question: &question,
                tuple: None,
            })
        }
        e => panic!("unknown endpoint {e}"),
    }
}

#[test]
fn replays_every_vector() {
    let all = vectors();
    assert!(all.len() >= 8);
    for v in all {
        let (status, body) = (v.status, v.response.clone());
        let server = serve(move |_| Reply::json(status, body.clone()));
        let got = send(&server.url(), &v);

        let reqs = server.requests();
        assert_eq!(reqs.len(), 1, "{}", v.name);
        assert_eq!(reqs[0].path, v.endpoint, "{}", v.name);
        let sent: Value = serde_json::from_str(&reqs[0].body).unwrap();
        assert_eq!(sent, v.request, "{}: request body", v.name);

        if let Some(text) = v.expect.get("ok") {
            assert_eq!(got.as_deref(), Ok(text.as_str().unwrap()), "{}", v.name);
            continue;
        }
        let err = got.expect_err(&v.name);
        match v.expect["error"].as_str().unwrap() {
            "http_status" => match err {
                BackendError::HttpStatus { status, message } => {
                    assert_eq!(u64::from(status), v.expect["status"].as_u64().unwrap(), "{}", v.name);
                    assert_eq!(message, v.expect["message"].as_str().unwrap(), "{}", v.name);
                }
                e => panic!("{}: expected HttpStatus, got {e:?}", v.name),
            },
            "malformed_response" => {
                assert!(matches!(err, BackendError::MalformedResponse(_)), "{}: {err:?}", v.name)
            }
            other => panic!("unknown expectation {other}"),
        }
    }
}

#[test]
fn server_error_500_is_transient_http_status() {
    let server = serve(|_| Reply::json(500, r#"{"error":"boom"}"#));
    let err = HttpGenerator::new(&server.url(), TIMEOUT, None)
        .unwrap()
        .complete("p ${INPUT}", "x")
        .unwrap_err();
    assert_eq!(
        err,
        BackendError::HttpStatus {
            status: 500,
            message: "boom".into()
        }
    );
    assert!(err.is_transient());
}

#[test]
fn unreachable_endpoint_times_out() {
    let err = HttpGenerator::new(&dead_address(), Duration::from_millis(500), None)
        .unwrap()
        .complete("p ${INPUT}", "x")
        .unwrap_err();
    assert_eq!(err, BackendError::Timeout);
}

#[test]
fn slow_server_times_out() {
    let server = serve(|_| Reply {
        status: 200,
        body: r#"{"answer":"yes"}"#.into(),
        delay: Duration::from_secs(3),
    });
    let err = HttpQa::new(&server.url(), Duration::from_millis(300), None)
        .unwrap()
        .ask(&QaQuery {
            image_ref: "a.png",
            question: "Is there a cat?",
            tuple: None,
        })
        .unwrap_err();
    assert_eq!(err, BackendError::Timeout);
}

#[test]
fn bearer_token_is_sent() {
    let server = serve(|_| Reply::json(200, r#"{"text":"ok"}"#));
    HttpGenerator::new(&server.url(), TIMEOUT, Some("s3cret".into()))
        .unwrap()
        .complete("p ${INPUT}", "x")
        .unwrap();
    assert_eq!(
        server.requests()[0].header("authorization"),
        Some("Bearer s3cret")
    );
}

#[test]
fn inline_images_are_base64_and_capped() {
    let server = serve(|_| Reply::json(200, r#"{"answer":"no"}"#));
    let dir = tempfile::tempdir().unwrap();
    let small = dir.path().join("small.png");
    std::fs::write(&small, b"\x89PNG fake bytes").unwrap();
    let qa = HttpQa::new(&server.url(), TIMEOUT, None)
        .unwrap()
        .with_inline_images(true);
    let small_ref = small.to_str().unwrap();
    assert_eq!(
        qa.ask(&QaQuery {
            image_ref: small_ref,
            question: "Is there a cat?",
            tuple: None
        })
        .unwrap(),
        "no"
    );
    let sent: Value = serde_json::from_str(&server.requests()[0].body).unwrap();
    assert_eq!(sent["image_ref"], Value::Null);
    let decoded = base64::engine::general_purpose::STANDARD
        .decode(sent["image_b64"].as_str().unwrap())
        .unwrap();
    assert_eq!(decoded, b"\x89PNG fake bytes");

    let big = dir.path().join("big.png");
    std::fs::File::create(&big)
        .unwrap()
        .set_len(MAX_INLINE_IMAGE_BYTES + 1)
        .unwrap();
    let err = qa
        .ask(&QaQuery {
            image_ref: big.to_str().unwrap(),
            question: "Is there a cat?",
            tuple: None,
        })
        .unwrap_err();
    assert!(matches!(err, BackendError::Unavailable(_)));
    assert_eq!(server.requests().len(), 1, "oversized image must not be sent");
}

#[test]
fn pipeline_over_http_retries_transient_errors() {
    let scenes = fixtures::synthetic_corpus(1, 11);
    let preambles = PreambleSet::builtin();
    let scripted = Arc::new(fixtures::scripted_generator(&scenes, &preambles));
    let hits = Arc::new(AtomicUsize::new(0));
    let (s, h) = (scripted.clone(), hits.clone());
    let server = serve(move |req| {
        // the first two calls fail with 500s
        if h.fetch_add(1, Ordering::SeqCst) < 2 {
            return Reply::json(500, r#"{"error":"warming up"}"#);
        }
        let body: CompleteRequest = serde_json::from_str(&req.body).unwrap();
        match s.complete(&body.preamble, &body.input) {
            Ok(text) => Reply::json(200, serde_json::json!({ "text": text }).to_string()),
            Err(e) => Reply::json(404, serde_json::json!({ "error": e.to_string() }).to_string()),
        }
    });
    let backend = HttpGenerator::new(&server.url(), TIMEOUT, None).unwrap();
    let out = generate_dsg(&scenes[0].prompt, &backend, &preambles, &RetryConfig::default()).unwrap();
    assert_eq!(out.graph, scenes[0].graph());
    assert_eq!(out.trace.stage(Stage::Tuples).unwrap().retries, 2);
    assert_eq!(hits.load(Ordering::SeqCst), 5);
}

#[test]
fn client_error_is_not_retried() {
    let server = serve(|_| Reply::json(400, r#"{"error":"bad preamble"}"#));
    let backend = HttpGenerator::new(&server.url(), TIMEOUT, None).unwrap();
    let prompt = PromptRecord {
        prompt_id: "p".into(),
        text: "a cat".into(),
        source: Source::Tifa160,
        notes: None,
    };
    let err = generate_dsg(&prompt, &backend, &PreambleSet::builtin(), &RetryConfig::default()).unwrap_err();
    assert!(err.error.is_backend());
    assert_eq!(server.requests().len(), 1);
}
