//! Fixture-driven chat-completions server speaking the same wire format as
//! the real endpoints, for offline tests and demos.
//!
//! A request is answered by the first fixture entry whose `match` string
//! occurs in its user message. Entries hand out their completions in order,
//! cycling, with a cursor per entry. Requests that match nothing get a
//! synthetic list of spans drawn from the document text, seeded by the server
//! seed and the request content.

use std::collections::HashMap;
use std::hash::{DefaultHasher, Hash, Hasher};
use std::io;
use std::net::{SocketAddr, TcpListener};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use axum::extract::State;
use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::oneshot;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Fixture {
    /// When set, requests must carry `Authorization: Bearer <api_key>`.
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default)]
    pub entries: Vec<FixtureEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureEntry {
    #[serde(rename = "match")]
    pub pattern: String,
    #[serde(default)]
    pub completions: Vec<FixtureCompletion>,
    /// Status codes returned, in order, before the entry starts answering.
    #[serde(default)]
    pub fail_first: Vec<u16>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureCompletion {
    pub text: String,
    #[serde(default)]
    pub logprobs: Option<Vec<f64>>,
    #[serde(default)]
    pub finish_reason: Option<String>,
}

impl Fixture {
    pub fn load(path: &Path) -> io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

#[derive(Default)]
struct Cursors {
    served: Vec<usize>,
    failed: Vec<usize>,
    synthetic: HashMap<u64, usize>,
}

struct AppState {
    fixture: Fixture,
    seed: u64,
    cursors: Mutex<Cursors>,
    requests: Arc<AtomicUsize>,
}

pub struct MockServer {
    addr: SocketAddr,
    requests: Arc<AtomicUsize>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    /// Starts on 127.0.0.1 with an ephemeral port, on its own thread.
    pub fn start(fixture: Fixture, seed: u64) -> io::Result<Self> {
        Self::bind(fixture, seed, SocketAddr::from(([127, 0, 0, 1], 0)))
    }

    pub fn bind(fixture: Fixture, seed: u64, addr: SocketAddr) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let requests = Arc::new(AtomicUsize::new(0));
        let app = router(fixture, seed, requests.clone());
        let (tx, rx) = oneshot::channel::<()>();
        let runtime = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
        let thread = std::thread::Builder::new().name("kpagg-mock".into()).spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener).expect("listener handoff");
                let _ = axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        })?;
        Ok(MockServer {
            addr,
            requests,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL to pass as the endpoint.
    pub fn url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }

    /// Number of HTTP requests received so far.
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }

    /// Blocks until the server thread exits.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn router(fixture: Fixture, seed: u64, requests: Arc<AtomicUsize>) -> Router {
    let n = fixture.entries.len();
    let state = Arc::new(AppState {
        fixture,
        seed,
        cursors: Mutex::new(Cursors {
            served: vec![0; n],
            failed: vec![0; n],
            synthetic: HashMap::new(),
        }),
        requests,
    });
    Router::new()
        .route("/v1/chat/completions", post(chat))
        .route("/chat/completions", post(chat))
        .with_state(state)
}

fn error(status: StatusCode, message: &str) -> (StatusCode, Json<Value>) {
    (status, Json(json!({"error": {"message": message, "code": status.as_u16()}})))
}

async fn chat(State(state): State<Arc<AppState>>, headers: HeaderMap, Json(body): Json<Value>) -> (StatusCode, Json<Value>) {
    state.requests.fetch_add(1, Ordering::SeqCst);
    if let Some(key) = &state.fixture.api_key {
        let given = headers
            .get("authorization")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if given != Some(key.as_str()) {
            return error(StatusCode::UNAUTHORIZED, "invalid api key");
        }
    }
    let messages = body["messages"].as_array().cloned().unwrap_or_default();
    let user = messages
        .iter()
        .filter(|m| m["role"] == "user")
        .filter_map(|m| m["content"].as_str())
        .collect::<Vec<_>>()
        .join("\n");
    let prefilled = messages
        .last()
        .is_some_and(|m| m["role"] == "assistant" && m["content"] == "[");
    let n = body["n"].as_u64().unwrap_or(1).max(1) as usize;
    let want_logprobs = body["logprobs"].as_bool().unwrap_or(false);

    let completions: Vec<FixtureCompletion> = {
        let mut cursors = state.cursors.lock().expect("mock state");
        match state.fixture.entries.iter().position(|e| user.contains(&e.pattern)) {
            Some(i) => {
                let entry = &state.fixture.entries[i];
                if let Some(&code) = entry.fail_first.get(cursors.failed[i]) {
                    cursors.failed[i] += 1;
                    let status = StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
                    return error(status, "scripted failure");
                }
                if entry.completions.is_empty() {
                    return error(StatusCode::INTERNAL_SERVER_ERROR, "fixture entry has no completions");
                }
                let start = cursors.served[i];
                cursors.served[i] += n;
                (start..start + n)
                    .map(|k| entry.completions[k % entry.completions.len()].clone())
                    .collect()
            }
            None => {
                let mut hasher = DefaultHasher::new();
                user.hash(&mut hasher);
                prefilled.hash(&mut hasher);
                let key = hasher.finish();
                let start = *cursors.synthetic.get(&key).unwrap_or(&0);
                cursors.synthetic.insert(key, start + n);
                (start..start + n)
                    .map(|k| synthesize(&user, prefilled, state.seed ^ key, k))
                    .collect()
            }
        }
    };

    let choices: Vec<Value> = completions
        .into_iter()
        .enumerate()
        .map(|(index, c)| {
            let logprobs = match (&c.logprobs, want_logprobs) {
                (Some(lps), true) => json!({"content": lps.iter().map(|lp| json!({"token": "", "logprob": lp})).collect::<Vec<_>>()}),
                _ => Value::Null,
            };
            json!({
                "index": index,
                "message": {"role": "assistant", "content": c.text},
                "finish_reason": c.finish_reason.unwrap_or_else(|| "stop".to_string()),
                "logprobs": logprobs,
            })
        })
        .collect();
    (
        StatusCode::OK,
        Json(json!({
            "id": format!("mock-{}", state.requests.load(Ordering::SeqCst)),
            "object": "chat.completion",
            "model": body["model"],
            "choices": choices,
        })),
    )
}

/// Deterministic keyphrase-like list: mostly spans copied from the text,
/// sometimes a pair of distant words.
fn synthesize(user: &str, prefilled: bool, seed: u64, k: usize) -> FixtureCompletion {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k as u64));
    let text = user.split_once("Title: ").map_or(user, |(_, t)| t);
    let words: Vec<&str> = text
        .split(|c: char| !c.is_alphanumeric() && c != '-')
        .filter(|w| w.len() >= 3 && w.chars().any(char::is_alphabetic))
        .filter(|w| *w != "Abstract")
        .collect();
    let mut phrases: Vec<String> = Vec::new();
    if !words.is_empty() {
        for _ in 0..rng.gen_range(3..9) {
            let start = rng.gen_range(0..words.len());
            let phrase = if rng.gen_bool(0.2) {
                format!("{} {}", words[start], words[rng.gen_range(0..words.len())])
            } else {
                let len = rng.gen_range(1..=3).min(words.len() - start);
                words[start..start + len].join(" ")
            };
            let phrase = phrase.to_lowercase();
            if !phrases.contains(&phrase) {
                phrases.push(phrase);
            }
        }
    }
    let quoted: Vec<String> = phrases.iter().map(|p| format!("\"{p}\"")).collect();
    let body = format!("{}]", quoted.join(", "));
    let text = if prefilled { body } else { format!("[{body}") };
    let tokens = text.split_whitespace().count().max(1);
    let logprobs = (0..tokens).map(|_| -rng.gen_range(0.01..1.5)).collect();
    FixtureCompletion {
        text,
        logprobs: Some(logprobs),
        finish_reason: None,
    }
}
