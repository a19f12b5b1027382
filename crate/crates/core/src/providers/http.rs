//! Live chat-completion adapters for three wire formats.

use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Query, QueryParams, RateLimiter, RawResponse, Respondent, RetryPolicy};
use crate::error::ProviderError;
use crate::prompts::PromptBundle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    /// OpenAI-compatible `/v1/chat/completions`.
    OpenAi,
    /// Anthropic `/v1/messages`.
    Anthropic,
    /// Google `/v1beta/models/{model}:generateContent`.
    Gemini,
}

impl ProviderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProviderKind::OpenAi => "openai",
            ProviderKind::Anthropic => "anthropic",
            ProviderKind::Gemini => "gemini",
        }
    }

    pub fn api_key_env(self) -> &'static str {
        match self {
            ProviderKind::OpenAi => "OPENAI_API_KEY",
            ProviderKind::Anthropic => "ANTHROPIC_API_KEY",
            ProviderKind::Gemini => "GEMINI_API_KEY",
        }
    }

    pub fn default_base_url(self) -> &'static str {
        match self {
            ProviderKind::OpenAi => "https://api.openai.com",
            ProviderKind::Anthropic => "https://api.anthropic.com",
            ProviderKind::Gemini => "https://generativelanguage.googleapis.com",
        }
    }

    pub fn accepts_seed(self) -> bool {
        matches!(self, ProviderKind::OpenAi)
    }
}

impl std::str::FromStr for ProviderKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "openai" => Ok(ProviderKind::OpenAi),
            "anthropic" => Ok(ProviderKind::Anthropic),
            "gemini" => Ok(ProviderKind::Gemini),
            other => Err(format!("unknown provider `{other}` (expected openai, anthropic or gemini)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl HttpReply {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TransportFailure {
    Timeout(String),
    Network(String),
}

/// Minimal POST-JSON transport so adapters can run against in-process fakes.
pub trait HttpTransport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpReply, TransportFailure>;
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Ok(ReqwestTransport { client })
    }
}

impl HttpTransport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpReply, TransportFailure> {
        let mut req = self.client.post(url).timeout(timeout).json(body);
        for (k, v) in headers {
            req = req.header(k.as_str(), v.as_str());
        }
        let resp = req.send().map_err(classify)?;
        let status = resp.status().as_u16();
        let headers = resp
            .headers()
            .iter()
            .filter_map(|(k, v)| v.to_str().ok().map(|v| (k.as_str().to_string(), v.to_string())))
            .collect();
        let body = resp.text().map_err(classify)?;
        Ok(HttpReply { status, headers, body })
    }
}

fn classify(e: reqwest::Error) -> TransportFailure {
    if e.is_timeout() {
        TransportFailure::Timeout(e.to_string())
    } else {
        TransportFailure::Network(e.to_string())
    }
}

/// A live model endpoint.
pub struct LiveRespondent {
    kind: ProviderKind,
    api_key: String,
    base_url: String,
    transport: Arc<dyn HttpTransport>,
    retry: RetryPolicy,
    limiter: Arc<RateLimiter>,
    /// When false the survey instruction is prepended to the user turn.
    system_slot: bool,
}

impl LiveRespondent {
    pub fn new(
        kind: ProviderKind,
        api_key: impl Into<String>,
        transport: Arc<dyn HttpTransport>,
    ) -> Result<Self, ProviderError> {
        let api_key = api_key.into();
        if api_key.trim().is_empty() {
            return Err(ProviderError::Auth(format!("empty API key for {}", kind.as_str())));
        }
        Ok(LiveRespondent {
            kind,
            api_key,
            base_url: kind.default_base_url().to_string(),
            transport,
            retry: RetryPolicy::default(),
            limiter: Arc::new(RateLimiter::unlimited()),
            system_slot: true,
        })
    }

    /// Reads the provider's key variable; fails before any network traffic
    /// when it is missing.
    pub fn from_env(kind: ProviderKind, transport: Arc<dyn HttpTransport>) -> Result<Self, ProviderError> {
        let var = kind.api_key_env();
        match std::env::var(var) {
            Ok(key) if !key.trim().is_empty() => Self::new(kind, key, transport),
            _ => Err(ProviderError::Auth(format!("environment variable {var} is not set"))),
        }
    }

    pub fn with_base_url(mut self, url: impl Into<String>) -> Self {
        self.base_url = url.into().trim_end_matches('/').to_string();
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_limiter(mut self, limiter: Arc<RateLimiter>) -> Self {
        self.limiter = limiter;
        self
    }

    pub fn with_system_slot(mut self, system_slot: bool) -> Self {
        self.system_slot = system_slot;
        self
    }

    pub fn kind(&self) -> ProviderKind {
        self.kind
    }

    fn build_request(&self, bundle: &PromptBundle, params: &QueryParams) -> (String, Vec<(String, String)>, Value) {
        let (system, user) = if self.system_slot {
            (Some(bundle.system_text.as_str()), bundle.user_text.clone())
        } else {
            (None, bundle.inline())
        };
        match self.kind {
            ProviderKind::OpenAi => {
                let mut messages = Vec::new();
                if let Some(s) = system {
                    messages.push(json!({"role": "system", "content": s}));
                }
                messages.push(json!({"role": "user", "content": user}));
                let mut body = json!({
                    "model": params.model_name,
                    "messages": messages,
                    "temperature": params.temperature,
                    "max_tokens": params.max_tokens,
                });
                if let Some(seed) = params.seed {
                    body["seed"] = json!(seed);
                }
                (
                    format!("{}/v1/chat/completions", self.base_url),
                    vec![("Authorization".into(), format!("Bearer {}", self.api_key))],
                    body,
                )
            }
            ProviderKind::Anthropic => {
                let mut body = json!({
                    "model": params.model_name,
                    "max_tokens": params.max_tokens,
                    "temperature": params.temperature,
                    "messages": [{"role": "user", "content": user}],
                });
                if let Some(s) = system {
                    body["system"] = json!(s);
                }
                (
                    format!("{}/v1/messages", self.base_url),
                    vec![
                        ("x-api-key".into(), self.api_key.clone()),
                        ("anthropic-version".into(), "2023-06-01".into()),
                    ],
                    body,
                )
            }
            ProviderKind::Gemini => {
                let mut body = json!({
                    "contents": [{"role": "user", "parts": [{"text": user}]}],
                    "generationConfig": {
                        "temperature": params.temperature,
                        "maxOutputTokens": params.max_tokens,
                    },
                });
                if let Some(s) = system {
                    body["systemInstruction"] = json!({"parts": [{"text": s}]});
                }
                (
                    format!("{}/v1beta/models/{}:generateContent", self.base_url, params.model_name),
                    vec![("x-goog-api-key".into(), self.api_key.clone())],
                    body,
                )
            }
        }
    }

    /// Sends one prompt, retrying 429/5xx/timeouts under the shared policy.
    pub fn query(&self, bundle: &PromptBundle, params: &QueryParams) -> Result<RawResponse, ProviderError> {
        let (url, headers, body) = self.build_request(bundle, params);
        let seed_note = match (params.seed, self.kind.accepts_seed()) {
            (None, _) => "none",
            (Some(_), true) => "forwarded",
            (Some(_), false) => "unsupported",
        };
        let started = Instant::now();
        let mut retries = 0u32;
        loop {
            self.limiter.acquire();
            let outcome = self.transport.post_json(&url, &headers, &body, params.timeout);
            let (retry_after, failure) = match outcome {
                Ok(reply) if (200..300).contains(&reply.status) => {
                    let (text, request_id) = extract_completion(self.kind, &reply)?;
                    let meta = json!({
                        "provider": self.kind.as_str(),
                        "request_id": request_id,
                        "retries": retries,
                        "seed": seed_note,
                        "status": reply.status,
                    });
                    return Ok(RawResponse {
                        text,
                        latency: started.elapsed(),
                        provider: self.kind.as_str().to_string(),
                        transport_meta: meta.to_string(),
                    });
                }
                Ok(reply) if reply.status == 401 || reply.status == 403 => {
                    return Err(ProviderError::Auth(format!("HTTP {}: {}", reply.status, snippet(&reply.body))));
                }
                Ok(reply) if reply.status == 429 => {
                    let hint = reply
                        .header("retry-after")
                        .and_then(|v| v.trim().parse::<f64>().ok())
                        .filter(|s| s.is_finite() && *s >= 0.0)
                        .map(Duration::from_secs_f64);
                    (hint, ProviderError::RateLimited { attempts: retries + 1 })
                }
                Ok(reply) if reply.status == 408 || reply.status >= 500 => (
                    None,
                    ProviderError::Transport(format!("HTTP {}: {}", reply.status, snippet(&reply.body))),
                ),
                Ok(reply) => {
                    return Err(ProviderError::Transport(format!(
                        "HTTP {}: {}",
                        reply.status,
                        snippet(&reply.body)
                    )));
                }
                Err(TransportFailure::Timeout(m)) => (None, ProviderError::Transport(format!("timeout: {m}"))),
                Err(TransportFailure::Network(m)) => (None, ProviderError::Transport(m)),
            };
            if retries >= self.retry.max_retries {
                return Err(failure);
            }
            retries += 1;
            let wait = self.retry.delay_for(retries, retry_after);
            if !wait.is_zero() {
                std::thread::sleep(wait);
            }
        }
    }
}

impl Respondent for LiveRespondent {
    fn provider(&self) -> &str {
        self.kind.as_str()
    }

    fn respond(&self, query: &Query<'_>) -> Result<RawResponse, ProviderError> {
        self.query(query.bundle, query.params)
    }
}

fn snippet(body: &str) -> String {
    body.chars().take(200).collect()
}

fn extract_completion(kind: ProviderKind, reply: &HttpReply) -> Result<(String, Option<String>), ProviderError> {
    let v: Value = serde_json::from_str(&reply.body)
        .map_err(|e| ProviderError::Transport(format!("malformed response body: {e}")))?;
    let str_at = |v: &Value, key: &str| v.get(key).and_then(Value::as_str).map(str::to_string);
    let (text, request_id) = match kind {
        ProviderKind::OpenAi => {
            let choice = v
                .get("choices")
                .and_then(|c| c.get(0))
                .ok_or_else(|| ProviderError::Refusal("no choices in response".into()))?;
            if let Some(r) = choice.pointer("/message/refusal").and_then(Value::as_str) {
                return Err(ProviderError::Refusal(r.to_string()));
            }
            if choice.get("finish_reason").and_then(Value::as_str) == Some("content_filter") {
                return Err(ProviderError::Refusal("content_filter".into()));
            }
            let text = choice.pointer("/message/content").and_then(Value::as_str).unwrap_or_default();
            let id = reply.header("x-request-id").map(str::to_string).or_else(|| str_at(&v, "id"));
            (text.to_string(), id)
        }
        ProviderKind::Anthropic => {
            if v.get("stop_reason").and_then(Value::as_str) == Some("refusal") {
                return Err(ProviderError::Refusal("stop_reason refusal".into()));
            }
            let text: String = v
                .get("content")
                .and_then(Value::as_array)
                .map(|parts| {
                    parts
                        .iter()
                        .filter(|p| p.get("type").and_then(Value::as_str) == Some("text"))
                        .filter_map(|p| p.get("text").and_then(Value::as_str))
                        .collect()
                })
                .unwrap_or_default();
            let id = reply.header("request-id").map(str::to_string).or_else(|| str_at(&v, "id"));
            (text, id)
        }
        ProviderKind::Gemini => {
            if let Some(reason) = v.pointer("/promptFeedback/blockReason").and_then(Value::as_str) {
                return Err(ProviderError::Refusal(format!("blocked: {reason}")));
            }
            let cand = v.pointer("/candidates/0");
            let text: String = cand
                .and_then(|c| c.pointer("/content/parts"))
                .and_then(Value::as_array)
                .map(|parts| parts.iter().filter_map(|p| p.get("text").and_then(Value::as_str)).collect())
                .unwrap_or_default();
            if text.is_empty() {
                let reason = cand
                    .and_then(|c| c.get("finishReason"))
                    .and_then(Value::as_str)
                    .unwrap_or("no candidates");
                return Err(ProviderError::Refusal(format!("empty completion ({reason})")));
            }
            (text, str_at(&v, "responseId"))
        }
    };
    if text.is_empty() {
        return Err(ProviderError::Refusal("empty completion".into()));
    }
    Ok((text, request_id))
}
