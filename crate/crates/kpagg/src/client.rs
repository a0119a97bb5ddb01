//! OpenAI-compatible chat-completions client with logprobs and retries.

use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use kpagg_core::sample::FINISH_FAILED;
use kpagg_core::{RawSample, RenderedPrompt};
use log::{debug, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("authentication rejected by endpoint (HTTP {status}): {body}")]
    Auth { status: u16, body: String },
    #[error("could not build HTTP client: {0}")]
    Build(#[source] reqwest::Error),
}

/// How the n samples of one prompt are requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RequestMode {
    /// One request with `n` choices.
    #[default]
    Multi,
    /// `n` sequential requests with one choice each.
    Single,
}

impl FromStr for RequestMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "multi" => Ok(RequestMode::Multi),
            "single" => Ok(RequestMode::Single),
            _ => Err(format!("unknown request mode {s:?} (expected multi|single)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 5,
            base_delay_ms: 500,
            max_delay_ms: 20_000,
        }
    }
}

impl RetryPolicy {
    fn delay(&self, attempt: u32) -> Duration {
        let factor = 1u64.checked_shl(attempt).unwrap_or(u64::MAX);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    /// Base URL; `/chat/completions` is appended unless already present.
    pub endpoint: String,
    pub api_key: Option<String>,
    pub model: String,
    pub mode: RequestMode,
    pub retry: RetryPolicy,
    pub timeout: Duration,
}

/// One prompt's sampling parameters.
#[derive(Debug, Clone, Copy)]
pub struct SampleRequest<'a> {
    pub doc_id: &'a str,
    pub prompt: &'a RenderedPrompt,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    #[serde(default)]
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    #[serde(default)]
    index: Option<usize>,
    message: Message,
    #[serde(default)]
    finish_reason: Option<String>,
    #[serde(default)]
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Debug, Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ChoiceLogprobs {
    #[serde(default)]
    content: Option<Vec<TokenLogprob>>,
}

#[derive(Debug, Deserialize)]
struct TokenLogprob {
    logprob: f64,
}

/// A completion before it is tied to a cache key.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub token_logprobs: Option<Vec<f64>>,
    pub finish_reason: String,
}

impl Completion {
    fn failed() -> Self {
        Completion {
            text: String::new(),
            token_logprobs: None,
            finish_reason: FINISH_FAILED.to_string(),
        }
    }
}

enum Attempt {
    Done(ChatResponse),
    Failed(String),
}

pub struct Client {
    http: reqwest::Client,
    url: String,
    config: ClientConfig,
    retries: AtomicU64,
    requests: AtomicU64,
}

impl Client {
    pub fn new(config: ClientConfig) -> Result<Self, ClientError> {
        let http = reqwest::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(ClientError::Build)?;
        let base = config.endpoint.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        };
        Ok(Client {
            http,
            url,
            config,
            retries: AtomicU64::new(0),
            requests: AtomicU64::new(0),
        })
    }

    pub fn retries(&self) -> u64 {
        self.retries.load(Ordering::Relaxed)
    }

    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    fn body(&self, req: &SampleRequest<'_>, n: usize) -> Value {
        let mut messages = vec![
            json!({"role": "system", "content": req.prompt.system}),
            json!({"role": "user", "content": req.prompt.user}),
        ];
        let mut body = json!({
            "model": self.config.model,
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
            "n": n,
            "logprobs": true,
        });
        if !req.prompt.assistant_prefill.is_empty() {
            messages.push(json!({"role": "assistant", "content": req.prompt.assistant_prefill}));
            // vLLM-style servers need these to continue the partial turn
            body["continue_final_message"] = json!(true);
            body["add_generation_prompt"] = json!(false);
        }
        body["messages"] = Value::Array(messages);
        body
    }

    async fn post(&self, body: &Value) -> Result<Attempt, ClientError> {
        let policy = self.config.retry;
        let mut attempt = 0;
        loop {
            self.requests.fetch_add(1, Ordering::Relaxed);
            let mut builder = self.http.post(&self.url).json(body);
            if let Some(key) = &self.config.api_key {
                builder = builder.bearer_auth(key);
            }
            let failure = match builder.send().await {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        match resp.json::<ChatResponse>().await {
                            Ok(parsed) => return Ok(Attempt::Done(parsed)),
                            Err(e) => return Ok(Attempt::Failed(format!("undecodable response: {e}"))),
                        }
                    }
                    let code = status.as_u16();
                    let text = resp.text().await.unwrap_or_default();
                    if code == 401 || code == 403 {
                        return Err(ClientError::Auth { status: code, body: text });
                    }
                    if code != 429 && !status.is_server_error() {
                        return Ok(Attempt::Failed(format!("HTTP {code}: {text}")));
                    }
                    format!("HTTP {code}")
                }
                Err(e) => format!("transport error: {e}"),
            };
            if attempt >= policy.max_retries {
                return Ok(Attempt::Failed(format!("{failure} after {attempt} retries")));
            }
            let delay = policy.delay(attempt);
            debug!("{failure}; retrying in {delay:?}");
            self.retries.fetch_add(1, Ordering::Relaxed);
            attempt += 1;
            tokio::time::sleep(delay).await;
        }
    }

    /// Requests `n` completions in the configured mode. Failures after
    /// retries come back as [`FINISH_FAILED`] entries; only authentication
    /// errors abort.
    pub async fn completions(&self, req: &SampleRequest<'_>, n: usize) -> Result<Vec<Completion>, ClientError> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let want = match self.config.mode {
                RequestMode::Multi => n - out.len(),
                RequestMode::Single => 1,
            };
            match self.post(&self.body(req, want)).await? {
                Attempt::Done(resp) => {
                    let got = to_completions(resp, want);
                    if got.is_empty() {
                        warn!("{}: endpoint returned no choices", req.doc_id);
                        out.resize(n, Completion::failed());
                    }
                    out.extend(got);
                }
                Attempt::Failed(reason) => {
                    warn!("{}: request failed: {reason}", req.doc_id);
                    out.extend(std::iter::repeat_n(Completion::failed(), want));
                }
            }
        }
        out.truncate(n);
        Ok(out)
    }

    /// Fetches completions for the given sample indices, keyed for the cache.
    pub async fn sample_completions(
        &self,
        req: &SampleRequest<'_>,
        indices: &[usize],
    ) -> Result<Vec<RawSample>, ClientError> {
        let completions = self.completions(req, indices.len()).await?;
        Ok(indices
            .iter()
            .zip(completions)
            .map(|(&sample_index, c)| RawSample {
                doc_id: req.doc_id.to_string(),
                prompt_hash: req.prompt.prompt_hash.clone(),
                sample_index,
                text: c.text,
                token_logprobs: c.token_logprobs,
                finish_reason: c.finish_reason,
            })
            .collect())
    }
}

fn to_completions(resp: ChatResponse, want: usize) -> Vec<Completion> {
    let mut choices = resp.choices;
    choices.sort_by_key(|c| c.index.unwrap_or(usize::MAX));
    choices
        .into_iter()
        .take(want)
        .map(|c| Completion {
            text: c.message.content.unwrap_or_default(),
            token_logprobs: c
                .logprobs
                .and_then(|l| l.content)
                .filter(|tokens| !tokens.is_empty())
                .map(|tokens| tokens.iter().map(|t| t.logprob.min(0.0)).collect()),
            finish_reason: c.finish_reason.unwrap_or_else(|| "stop".to_string()),
        })
        .collect()
}
