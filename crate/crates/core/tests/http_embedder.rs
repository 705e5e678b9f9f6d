//! The HTTP embedding client against an in-process mock service.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;

use hfo_core::encoding::{hash_embed, Embedder, EncodingError, HttpEmbedder, SB_DIM};
use serde_json::{json, Value};

#[derive(Clone, Copy)]
enum Behaviour {
    Healthy,
    EmbedFails,
    WrongDim,
    DropsAVector,
}

struct Mock {
    url: String,
    embed_calls: Arc<AtomicUsize>,
}

fn read_request(reader: &mut BufReader<TcpStream>) -> Option<(String, String, Vec<u8>)> {
    let mut line = String::new();
    if reader.read_line(&mut line).ok()? == 0 {
        return None;
    }
    let mut parts = line.split_whitespace();
    let method = parts.next()?.to_string();
    let path = parts.next()?.to_string();
    let mut length = 0;
    loop {
        let mut header = String::new();
        reader.read_line(&mut header).ok()?;
        let header = header.trim_end();
        if header.is_empty() {
            break;
        }
        if let Some((k, v)) = header.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).ok()?;
    Some((method, path, body))
}

fn respond(stream: &mut TcpStream, status: u16, body: &Value) {
    let text = body.to_string();
    let reason = if status == 200 { "OK" } else { "Error" };
    let _ = write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{text}",
        text.len()
    );
    let _ = stream.flush();
}

fn serve(stream: TcpStream, behaviour: Behaviour, embed_calls: Arc<AtomicUsize>) {
    let mut writer = stream.try_clone().unwrap();
    let mut reader = BufReader::new(stream);
    while let Some((method, path, body)) = read_request(&mut reader) {
        let dim = if matches!(behaviour, Behaviour::WrongDim) { 128 } else { SB_DIM };
        match (method.as_str(), path.as_str()) {
            ("GET", "/health") => respond(&mut writer, 200, &json!({"status": "ok", "dim": dim})),
            ("POST", "/embed") => {
                embed_calls.fetch_add(1, Ordering::SeqCst);
                if matches!(behaviour, Behaviour::EmbedFails) {
                    respond(&mut writer, 503, &json!({"error": "model not loaded"}));
                    continue;
                }
                let request: Value = serde_json::from_slice(&body).unwrap();
                let texts: Vec<String> = serde_json::from_value(request["texts"].clone()).unwrap();
                let mut vectors: Vec<Vec<f64>> = texts.iter().map(|t| hash_embed(t)).collect();
                if matches!(behaviour, Behaviour::DropsAVector) {
                    vectors.pop();
                }
                respond(&mut writer, 200, &json!({"vectors": vectors, "model": "mock", "dim": dim}));
            }
            _ => respond(&mut writer, 404, &json!({"error": "not found"})),
        }
    }
}

fn start(behaviour: Behaviour) -> Mock {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let embed_calls = Arc::new(AtomicUsize::new(0));
    let calls = Arc::clone(&embed_calls);
    thread::spawn(move || {
        for stream in listener.incoming().flatten() {
            let calls = Arc::clone(&calls);
            thread::spawn(move || serve(stream, behaviour, calls));
        }
    });
    Mock { url, embed_calls }
}

fn texts(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("job{i}, run_job{i}.sh, acct_{}", i % 7)).collect()
}

#[test]
fn round_trips_a_batch_of_64() {
    let mock = start(Behaviour::Healthy);
    let client = HttpEmbedder::connect(&mock.url).unwrap();
    let health = client.health().unwrap();
    assert_eq!((health.status.as_str(), health.dim), ("ok", SB_DIM));

    let batch = texts(64);
    let vectors = client.embed_batch(&batch).unwrap();
    assert_eq!(vectors.len(), 64);
    for (text, v) in batch.iter().zip(&vectors) {
        assert_eq!(v.len(), SB_DIM);
        assert_eq!(v, &hash_embed(text), "order must be preserved");
    }
    assert_eq!(mock.embed_calls.load(Ordering::SeqCst), 1);
}

#[test]
fn large_batches_are_split_into_requests() {
    let mock = start(Behaviour::Healthy);
    let client = HttpEmbedder::connect(&mock.url).unwrap();
    let batch = texts(130);
    let vectors = client.embed_batch(&batch).unwrap();
    assert_eq!(vectors.len(), 130);
    assert_eq!(vectors[129], hash_embed(&batch[129]));
    assert_eq!(mock.embed_calls.load(Ordering::SeqCst), 3);

    let single = client.embed(&batch[5]).unwrap();
    assert_eq!(single, vectors[5]);
}

#[test]
fn non_200_is_unavailable() {
    let mock = start(Behaviour::EmbedFails);
    let client = HttpEmbedder::connect(&mock.url).unwrap();
    let err = client.embed("job1").unwrap_err();
    assert!(matches!(err, EncodingError::EmbedderUnavailable(_)), "{err:?}");
}

#[test]
fn wrong_dimension_is_rejected_at_connect() {
    let mock = start(Behaviour::WrongDim);
    let err = HttpEmbedder::connect(&mock.url).err().unwrap();
    assert!(
        matches!(err, EncodingError::Dimension { expected: SB_DIM, found: 128 }),
        "{err:?}"
    );
}

#[test]
fn short_response_is_unavailable() {
    let mock = start(Behaviour::DropsAVector);
    let client = HttpEmbedder::connect(&mock.url).unwrap();
    let err = client.embed_batch(&texts(3)).unwrap_err();
    assert!(matches!(err, EncodingError::EmbedderUnavailable(_)), "{err:?}");
}

#[test]
fn unreachable_service_is_unavailable() {
    // Bind and drop to get a port nobody listens on.
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let err = HttpEmbedder::connect(&format!("http://127.0.0.1:{port}")).err().unwrap();
    assert!(matches!(err, EncodingError::EmbedderUnavailable(_)), "{err:?}");
}
