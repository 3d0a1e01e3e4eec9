//! Remote client against a local stub server, including fault injection.
#![cfg(feature = "remote")]

use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use exovip::backends::remote::{RemoteBackend, RemoteConfig};
use exovip::backends::{BackendError, Captioner, Detector};
use exovip::runtime::value::ImageHandle;

/// Minimal one-thread HTTP stub: each request gets the reply chosen by
/// `script(request_index)`, as `(status_line, body)`.
fn spawn_stub(
    script: impl Fn(usize) -> (&'static str, String) + Send + 'static,
) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let hits2 = hits.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { break };
            let mut buf = Vec::new();
            let mut tmp = [0u8; 1024];
            let (mut header_end, mut content_len) = (None, 0usize);
            loop {
                let n = match stream.read(&mut tmp) {
                    Ok(0) | Err(_) => break,
                    Ok(n) => n,
                };
                buf.extend_from_slice(&tmp[..n]);
                if header_end.is_none() {
                    if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
                        header_end = Some(pos + 4);
                        let head = String::from_utf8_lossy(&buf[..pos]);
                        content_len = head
                            .lines()
                            .find_map(|l| {
                                l.to_ascii_lowercase()
                                    .strip_prefix("content-length:")
                                    .map(|v| v.trim().parse().unwrap_or(0))
                            })
                            .unwrap_or(0);
                    }
                }
                if let Some(end) = header_end {
                    if buf.len() >= end + content_len {
                        break;
                    }
                }
            }
            let i = hits2.fetch_add(1, Ordering::SeqCst);
            let (status, body) = script(i);
            let reply = format!(
                "HTTP/1.1 {status}\r\nContent-Type: application/json\r\n\
                 Content-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(reply.as_bytes());
        }
    });
    (format!("http://{addr}"), hits)
}

fn backend(base: &str) -> RemoteBackend {
    let mut cfg = RemoteConfig::new(base);
    cfg.timeout_ms = 2_000;
    cfg.retries = 2;
    cfg.backoff_ms = 1;
    RemoteBackend::new(cfg)
}

fn img() -> ImageHandle {
    ImageHandle { handle: "img1".into(), width: 64, height: 64 }
}

#[test]
fn detect_round_trips_scored_boxes() {
    let body = r#"{"ok":true,"output":[{"bbox":{"x0":1.0,"y0":2.0,"x1":3.0,"y1":4.0},"p":0.9}]}"#;
    let (base, hits) = spawn_stub(move |_| ("200 OK", body.to_string()));
    let boxes = backend(&base).detect(&img(), "lamp").unwrap();
    assert_eq!(boxes.len(), 1);
    assert_eq!(boxes[0].p, 0.9);
    assert_eq!(boxes[0].bbox.x1, 3.0);
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn transient_server_errors_are_retried_until_success() {
    let (base, hits) = spawn_stub(|i| {
        if i < 2 {
            ("500 Internal Server Error", r#"{"ok":false,"error":"flaky"}"#.into())
        } else {
            ("200 OK", r#"{"ok":true,"output":"a lamp"}"#.into())
        }
    });
    let caption = backend(&base).caption(&img()).unwrap();
    assert_eq!(caption, "a lamp");
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn persistent_failure_exhausts_retries() {
    let (base, hits) = spawn_stub(|_| ("500 Internal Server Error", "boom".into()));
    let err = backend(&base).caption(&img()).unwrap_err();
    assert!(matches!(err, BackendError::Server(_)), "{err:?}");
    assert_eq!(hits.load(Ordering::SeqCst), 3); // first try + 2 retries
}

#[test]
fn client_errors_are_protocol_failures_without_retry() {
    let (base, hits) = spawn_stub(|_| ("404 Not Found", "no such task".into()));
    let err = backend(&base).caption(&img()).unwrap_err();
    assert!(matches!(err, BackendError::Protocol(_)), "{err:?}");
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn application_level_error_is_reported() {
    let (base, _) = spawn_stub(|_| ("200 OK", r#"{"ok":false,"error":"model missing"}"#.into()));
    let err = backend(&base).caption(&img()).unwrap_err();
    match err {
        // Application errors answer 200 and are retried as server faults.
        BackendError::Server(msg) => assert!(msg.contains("model missing")),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn malformed_body_is_a_protocol_error() {
    let (base, hits) = spawn_stub(|_| ("200 OK", "not json at all".into()));
    let err = backend(&base).caption(&img()).unwrap_err();
    assert!(matches!(err, BackendError::Protocol(_)), "{err:?}");
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn wrong_output_shape_is_a_protocol_error() {
    let (base, _) = spawn_stub(|_| ("200 OK", r#"{"ok":true,"output":42}"#.into()));
    let err = backend(&base).caption(&img()).unwrap_err();
    assert!(matches!(err, BackendError::Protocol(_)), "{err:?}");
}

#[test]
fn health_probe_hits_the_health_route() {
    let (base, hits) = spawn_stub(|_| ("200 OK", "{}".into()));
    Detector::health(&backend(&base)).unwrap();
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}
