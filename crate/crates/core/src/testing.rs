//! Test support: an in-process completion server and synthetic suites.
//!
//! [`StubServer`] serves any [`GenerationBackend`] over the HTTP JSON
//! completion protocol, optionally injecting transport failures, so the
//! remote path can be exercised end to end without a real inference
//! service. The fixtures build scripted suites whose accuracies are
//! fixed by construction and are shared between the crate's integration
//! tests and the acceptance suite.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::datamodel::{Passage, QARecord};
use crate::gateway::{GenerationBackend, GenerationRequest, ScriptedModel};

#[derive(Deserialize)]
struct WireRequest {
    prompt: String,
    #[serde(default)]
    max_tokens: Option<u32>,
    #[serde(default)]
    temperature: Option<f64>,
}

/// In-process HTTP completion server wrapping a backend.
///
/// With a nonzero failure rate, requests are rejected before reaching
/// the backend: half the failures answer 503, half drop the connection.
/// The failure sequence is fixed by the seed.
pub struct StubServer {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    requests: Arc<AtomicUsize>,
    failures: Arc<AtomicUsize>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Starts a reliable server.
    pub fn start(backend: impl GenerationBackend + 'static) -> Self {
        Self::start_flaky(backend, 0.0, 0)
    }

    /// Starts a server that fails the given fraction of requests.
    pub fn start_flaky(
        backend: impl GenerationBackend + 'static,
        failure_rate: f64,
        seed: u64,
    ) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub server");
        let addr = listener.local_addr().expect("local addr");
        listener.set_nonblocking(true).expect("nonblocking");

        let shutdown = Arc::new(AtomicBool::new(false));
        let requests = Arc::new(AtomicUsize::new(0));
        let failures = Arc::new(AtomicUsize::new(0));
        let backend: Arc<dyn GenerationBackend> = Arc::new(backend);
        let rng = Arc::new(Mutex::new(ChaCha8Rng::seed_from_u64(seed)));

        let handle = {
            let shutdown = shutdown.clone();
            let requests = requests.clone();
            let failures = failures.clone();
            std::thread::spawn(move || {
                while !shutdown.load(Ordering::SeqCst) {
                    match listener.accept() {
                        Ok((stream, _)) => {
                            let backend = backend.clone();
                            let rng = rng.clone();
                            let requests = requests.clone();
                            let failures = failures.clone();
                            std::thread::spawn(move || {
                                handle_connection(
                                    stream,
                                    &*backend,
                                    failure_rate,
                                    &rng,
                                    &requests,
                                    &failures,
                                );
                            });
                        }
                        Err(ref e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                            std::thread::sleep(Duration::from_millis(2));
                        }
                        Err(_) => break,
                    }
                }
            })
        };

        StubServer {
            addr,
            shutdown,
            requests,
            failures,
            handle: Some(handle),
        }
    }

    pub fn url(&self) -> String {
        format!("http://{}/complete", self.addr)
    }

    /// Requests seen, including ones that were failed on purpose.
    pub fn request_count(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    /// Requests rejected by fault injection.
    pub fn failure_count(&self) -> usize {
        self.failures.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection(
    mut stream: TcpStream,
    backend: &dyn GenerationBackend,
    failure_rate: f64,
    rng: &Mutex<ChaCha8Rng>,
    requests: &AtomicUsize,
    failures: &AtomicUsize,
) {
    let Some(body) = read_request_body(&mut stream) else {
        return;
    };
    requests.fetch_add(1, Ordering::SeqCst);

    let (fail, drop_connection) = {
        let mut rng = rng.lock().expect("rng lock");
        let fail = failure_rate > 0.0 && rng.gen_bool(failure_rate);
        (fail, fail && rng.gen_bool(0.5))
    };
    if fail {
        failures.fetch_add(1, Ordering::SeqCst);
        if !drop_connection {
            let _ = write_response(&mut stream, 503, "Service Unavailable", "");
        }
        return;
    }

    let Ok(wire) = serde_json::from_slice::<WireRequest>(&body) else {
        let _ = write_response(&mut stream, 400, "Bad Request", "");
        return;
    };
    let mut request = GenerationRequest::new(wire.prompt);
    if let Some(max) = wire.max_tokens {
        request.max_new_tokens = max;
    }
    if let Some(temperature) = wire.temperature {
        request.temperature = temperature;
    }

    match backend.complete(&request) {
        Ok(text) => {
            let body = serde_json::json!({ "text": text }).to_string();
            let _ = write_response(&mut stream, 200, "OK", &body);
        }
        Err(_) => {
            let _ = write_response(&mut stream, 500, "Internal Server Error", "");
        }
    }
}

fn read_request_body(stream: &mut TcpStream) -> Option<Vec<u8>> {
    stream
        .set_read_timeout(Some(Duration::from_secs(5)))
        .ok()?;
    let mut reader = BufReader::new(stream);
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some(value) = line
            .to_ascii_lowercase()
            .strip_prefix("content-length:")
            .map(str::trim)
            .and_then(|v| v.parse::<usize>().ok())
        {
            content_length = value;
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body).ok()?;
    Some(body)
}

fn write_response(
    stream: &mut TcpStream,
    status: u16,
    reason: &str,
    body: &str,
) -> std::io::Result<()> {
    let response = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    stream.write_all(response.as_bytes())?;
    stream.flush()
}

/// A scripted suite: records, a matching corpus, and the scripted model
/// whose behavior fixes every accuracy by construction.
pub struct SuiteFixture {
    pub records: Vec<QARecord>,
    pub passages: Vec<Passage>,
    pub model: ScriptedModel,
}

fn suite_record(i: usize, passage: Option<String>) -> QARecord {
    QARecord {
        id: format!("q{i:03}"),
        question: format!("what is the codeword for item k{i:03}?"),
        answers: vec![format!("zq{i:03}x")],
        passage,
        popularity: None,
    }
}

/// The 100-question construction: 40 known questions, 30 unknown
/// questions whose gold passage is retrievable, 30 unknown questions the
/// corpus cannot rescue. By construction:
///
/// - adaptive accuracy 0.70, retrieval usage 0.60
/// - never-retrieve accuracy 0.40
/// - always-retrieve accuracy 0.30 (distractor passages outrank nothing
///   for the known questions, and their spans are absent)
pub fn rescue_suite() -> SuiteFixture {
    let mut records = Vec::new();
    let mut passages = Vec::new();

    for i in 0..100 {
        let gold_body = format!("the codeword for item k{i:03} is zq{i:03}x");
        let record = suite_record(i, Some(gold_body.clone()));
        if i < 40 {
            // Known: distractor passage shares the key token but not the
            // answer span.
            passages.push(Passage {
                id: format!("d{i:03}"),
                title: None,
                body: format!("notes about item k{i:03} with nothing of note"),
            });
        } else if i < 70 {
            // Unknown but rescuable: the gold passage is in the corpus.
            passages.push(Passage {
                id: format!("p{i:03}"),
                title: None,
                body: gold_body,
            });
        }
        // i in 70..100: unknown and absent from the corpus.
        records.push(record);
    }

    let model = ScriptedModel::new()
        .knowing_records(&records[..40])
        .with_record_spans(&records);

    SuiteFixture {
        records,
        passages,
        model,
    }
}

/// An 8-question suite small enough to tabulate by hand:
///
/// - q1, q2 known and right; q3 "known" but wrong.
/// - q4..q8 unknown; gold passages exist for q4 and q5 only; q6 has a
///   lucky direct-fallback answer.
///
/// Hand tabulation: retrieval fraction 5/8; retrieve subset accuracy 2/5
/// with context and 1/5 without; direct subset accuracy 2/3 without
/// context and 1/3 with.
pub fn decision_suite() -> SuiteFixture {
    let records: Vec<QARecord> = (1..=8).map(|i| suite_record(i, None)).collect();

    let mut passages = Vec::new();
    for record in &records {
        let i: usize = record.id[1..].parse().unwrap();
        let keyed = |body: String| Passage {
            id: format!("x{i:03}"),
            title: None,
            body,
        };
        if i == 1 || i == 4 || i == 5 {
            passages.push(keyed(format!(
                "the codeword for item k{i:03} is zq{i:03}x"
            )));
        } else {
            passages.push(keyed(format!(
                "notes about item k{i:03} with nothing of note"
            )));
        }
    }

    let model = ScriptedModel::new()
        .knowing_records(&records[..2])
        .know(&records[2].question, "not the codeword")
        .know_direct_fallback(&records[5].question, &records[5].answers[0])
        .with_record_spans(&records);

    SuiteFixture {
        records,
        passages,
        model,
    }
}
