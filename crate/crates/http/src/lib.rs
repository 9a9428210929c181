//! HTTP backends: an OpenAI-compatible chat-completions client for the
//! prompt optimizer and response model, and a JSON scoring client for the
//! reference and heuristic scorers.
//!
//! Chat requests go to `POST {base_url}/v1/chat/completions`. Scoring
//! requests go to `POST {base_url}/v1/score` with
//! `{"objective", "prompt", "response"}` (reference) or
//! `{"objective", "prompt", "response_model_id"}` (heuristic) and expect
//! `{"score": <number>}` back.
//!
//! Transport failures, 429 and 5xx replies are retried up to `max_retries`
//! times with an identical payload. Budget charging happens in the core
//! wrappers before any request, so retries never cost extra budget.

pub mod mock;

use std::sync::Arc;
use std::time::Duration;

use goalsteer_core::config::{BackendConfig, ModelEndpoint, ScoringEndpoint};
use goalsteer_core::policies::{
    Backends, CallSite, ChatMessage, HeuristicScorer, PromptOptimizer, ReferenceScorer, ResponseModel,
};
use goalsteer_core::{BackendError, BeamState, ObjectiveSpec};
use reqwest::blocking::Client;
use reqwest::header::{AUTHORIZATION, CONTENT_TYPE};
use serde::{Deserialize, Serialize};

const DEFAULT_BACKOFF: Duration = Duration::from_millis(250);

#[derive(Debug, Clone)]
struct JsonPoster {
    client: Client,
    api_key: Option<String>,
    max_retries: u32,
    backoff: Duration,
}

impl JsonPoster {
    fn new(timeout_secs: f64, max_retries: u32, api_key: Option<String>) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(Duration::from_secs_f64(timeout_secs))
            .build()
            .map_err(|e| BackendError::protocol(format!("building http client: {e}")))?;
        Ok(Self {
            client,
            api_key,
            max_retries,
            backoff: DEFAULT_BACKOFF,
        })
    }

    /// Sends `body` until it succeeds, fails permanently, or retries run
    /// out. The backoff doubles after each failed attempt.
    fn post<T: for<'de> Deserialize<'de>>(&self, url: &str, body: &str) -> Result<T, BackendError> {
        let mut last = None;
        for attempt in 0..=self.max_retries {
            if attempt > 0 && !self.backoff.is_zero() {
                std::thread::sleep(self.backoff * 2u32.saturating_pow(attempt - 1));
            }
            match self.post_once(url, body) {
                Ok(text) => {
                    return serde_json::from_str(&text)
                        .map_err(|e| BackendError::protocol(format!("{url}: malformed reply: {e}")))
                }
                Err(Attempt::Permanent(e)) => return Err(e),
                Err(Attempt::Transient(e)) => last = Some(e),
            }
        }
        let e = last.expect("at least one attempt");
        Err(BackendError::unavailable(format!(
            "{url}: giving up after {} attempts: {}",
            self.max_retries + 1,
            e.message
        )))
    }

    fn post_once(&self, url: &str, body: &str) -> Result<String, Attempt> {
        let mut req = self.client.post(url).header(CONTENT_TYPE, "application/json").body(body.to_string());
        if let Some(key) = &self.api_key {
            req = req.header(AUTHORIZATION, format!("Bearer {key}"));
        }
        let resp = req
            .send()
            .map_err(|e| Attempt::Transient(BackendError::unavailable(e.to_string())))?;
        let status = resp.status();
        let text = resp
            .text()
            .map_err(|e| Attempt::Transient(BackendError::unavailable(e.to_string())))?;
        if status.is_success() {
            Ok(text)
        } else if status.as_u16() == 429 || status.is_server_error() {
            Err(Attempt::Transient(BackendError::unavailable(format!("{url}: HTTP {status}"))))
        } else {
            Err(Attempt::Permanent(BackendError::protocol(format!("{url}: HTTP {status}: {text}"))))
        }
    }
}

enum Attempt {
    Transient(BackendError),
    Permanent(BackendError),
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
    n: usize,
}

#[derive(Deserialize)]
struct ChatReply {
    #[serde(default)]
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    content: Option<String>,
}

/// Chat-completions client for one model endpoint.
#[derive(Debug, Clone)]
pub struct ChatClient {
    endpoint: ModelEndpoint,
    poster: JsonPoster,
}

impl ChatClient {
    pub fn new(endpoint: ModelEndpoint, api_key: Option<String>) -> Result<Self, BackendError> {
        let poster = JsonPoster::new(endpoint.request_timeout_secs, endpoint.max_retries, api_key)?;
        Ok(Self { endpoint, poster })
    }

    /// Wait before retry `i` is `backoff · 2^(i-1)`.
    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.poster.backoff = backoff;
        self
    }

    pub fn endpoint(&self) -> &ModelEndpoint {
        &self.endpoint
    }

    fn url(&self) -> String {
        format!("{}/v1/chat/completions", self.endpoint.base_url.trim_end_matches('/'))
    }

    fn request(&self, messages: &[ChatMessage], n: usize) -> Result<Vec<String>, BackendError> {
        let body = serde_json::to_string(&ChatRequest {
            model: &self.endpoint.model_id,
            messages,
            temperature: self.endpoint.temperature,
            max_tokens: self.endpoint.max_tokens,
            n,
        })
        .map_err(|e| BackendError::protocol(e.to_string()))?;
        let reply: ChatReply = self.poster.post(&self.url(), &body)?;
        reply
            .choices
            .into_iter()
            .take(n)
            .map(|c| {
                c.message
                    .content
                    .ok_or_else(|| BackendError::protocol("choice without message content"))
            })
            .collect()
    }

    /// Exactly `n` completions. Short replies are topped up with further
    /// requests for the remainder; a request that yields nothing counts
    /// against the retry limit.
    pub fn complete(&self, messages: &[ChatMessage], n: usize) -> Result<Vec<String>, BackendError> {
        let mut out = Vec::with_capacity(n);
        let mut empty_replies = 0;
        while out.len() < n {
            let want = if self.endpoint.use_n_param { n - out.len() } else { 1 };
            let got = self.request(messages, want)?;
            if got.is_empty() {
                empty_replies += 1;
                if empty_replies > self.endpoint.max_retries {
                    return Err(BackendError::unavailable(format!(
                        "{}: no choices after {empty_replies} requests",
                        self.url()
                    )));
                }
                continue;
            }
            out.extend(got);
        }
        Ok(out)
    }
}

/// Prompt optimizer backed by a chat model.
pub struct ChatOptimizer(pub ChatClient);

impl PromptOptimizer for ChatOptimizer {
    fn complete(&self, _: &BeamState, messages: &[ChatMessage], n: usize, _: CallSite) -> Result<Vec<String>, BackendError> {
        self.0.complete(messages, n)
    }
}

/// Response model backed by a chat model; the prompt is sent as a single
/// user message.
pub struct ChatResponder(pub ChatClient);

impl ResponseModel for ChatResponder {
    fn respond(&self, prompt: &str, _: CallSite) -> Result<String, BackendError> {
        let mut out = self.0.complete(&[ChatMessage::user(prompt)], 1)?;
        Ok(out.remove(0))
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    objective: &'a str,
    prompt: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    response: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    response_model_id: Option<&'a str>,
}

#[derive(Deserialize)]
struct ScoreReply {
    score: f64,
}

/// Reference and heuristic scoring over HTTP.
#[derive(Debug, Clone)]
pub struct ScoringClient {
    base_url: String,
    poster: JsonPoster,
}

impl ScoringClient {
    pub fn new(endpoint: &ScoringEndpoint, api_key: Option<String>) -> Result<Self, BackendError> {
        Ok(Self {
            base_url: endpoint.base_url.trim_end_matches('/').to_string(),
            poster: JsonPoster::new(endpoint.request_timeout_secs, endpoint.max_retries, api_key)?,
        })
    }

    pub fn with_backoff(mut self, backoff: Duration) -> Self {
        self.poster.backoff = backoff;
        self
    }

    fn score(&self, req: &ScoreRequest<'_>) -> Result<f64, BackendError> {
        let body = serde_json::to_string(req).map_err(|e| BackendError::protocol(e.to_string()))?;
        let reply: ScoreReply = self.poster.post(&format!("{}/v1/score", self.base_url), &body)?;
        if reply.score.is_finite() {
            Ok(reply.score)
        } else {
            Err(BackendError::protocol("non-finite score"))
        }
    }
}

impl ReferenceScorer for ScoringClient {
    fn score(&self, prompt: &str, response: &str, objective: &ObjectiveSpec) -> Result<f64, BackendError> {
        ScoringClient::score(
            self,
            &ScoreRequest {
                objective: &objective.id,
                prompt,
                response: Some(response),
                response_model_id: None,
            },
        )
    }
}

impl HeuristicScorer for ScoringClient {
    fn score(&self, prompt: &str, response_model_id: &str, objective: &ObjectiveSpec) -> Result<f64, BackendError> {
        ScoringClient::score(
            self,
            &ScoreRequest {
                objective: &objective.id,
                prompt,
                response: None,
                response_model_id: Some(response_model_id),
            },
        )
    }
}

/// Builds all four roles from config. The bearer token is read from the
/// environment variable named by `api_key_env`; if it is unset, requests
/// carry no `Authorization` header.
pub fn http_backends(cfg: &BackendConfig) -> Result<Backends, BackendError> {
    let key = std::env::var(&cfg.api_key_env).ok().filter(|k| !k.is_empty());
    http_backends_with_key(cfg, key, DEFAULT_BACKOFF)
}

pub fn http_backends_with_key(cfg: &BackendConfig, api_key: Option<String>, backoff: Duration) -> Result<Backends, BackendError> {
    let optimizer = ChatClient::new(cfg.optimizer.clone(), api_key.clone())?.with_backoff(backoff);
    let response = ChatClient::new(cfg.response.clone(), api_key.clone())?.with_backoff(backoff);
    let scoring = Arc::new(ScoringClient::new(&cfg.scoring, api_key)?.with_backoff(backoff));
    Ok(Backends {
        optimizer: Arc::new(ChatOptimizer(optimizer)),
        response: Arc::new(ChatResponder(response)),
        reference: scoring.clone(),
        heuristic: scoring,
        response_model_id: cfg.response.model_id.clone(),
    })
}
