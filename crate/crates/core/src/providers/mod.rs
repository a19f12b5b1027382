//! Respondents: live LLM endpoints and the simulated oracle.
//!
//! Everything the runner talks to implements [`Respondent`]. Live adapters
//! share one [`RetryPolicy`] and a per-provider [`RateLimiter`]; the oracle
//! is a pure function of its inputs.

mod http;
mod limiter;
mod oracle;
mod retry;

use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::design::Vignette;
use crate::error::ProviderError;
use crate::prompts::PromptBundle;

pub use http::{HttpReply, HttpTransport, LiveRespondent, ProviderKind, ReqwestTransport, TransportFailure};
pub use limiter::RateLimiter;
pub use oracle::{latent_score, mock_respond, LatentModel, OracleRespondent};
pub use retry::RetryPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryParams {
    pub model_name: String,
    pub temperature: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    pub max_tokens: u32,
    #[serde(rename = "timeout_ms", with = "millis")]
    pub timeout: Duration,
}

impl QueryParams {
    pub fn new(model_name: impl Into<String>) -> Self {
        QueryParams {
            model_name: model_name.into(),
            temperature: 1.0,
            seed: None,
            max_tokens: 8,
            timeout: Duration::from_secs(60),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.temperature >= 0.0) {
            return Err(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if self.max_tokens < 1 {
            return Err("max_tokens must be >= 1".into());
        }
        Ok(())
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// One completion as returned by a respondent. `text` is untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct RawResponse {
    pub text: String,
    pub latency: Duration,
    pub provider: String,
    /// Opaque JSON object: request id, retry count, seed handling.
    pub transport_meta: String,
}

/// Everything a respondent may need to answer one schedule entry.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub vignette: &'a Vignette,
    pub run_index: u32,
    /// 0 for the first ask, then 1.. for re-asks after unparseable output.
    pub attempt: u32,
    pub bundle: &'a PromptBundle,
    pub params: &'a QueryParams,
}

pub trait Respondent: Send + Sync {
    fn provider(&self) -> &str;

    fn respond(&self, query: &Query<'_>) -> Result<RawResponse, ProviderError>;
}

impl<R: Respondent + ?Sized> Respondent for &R {
    fn provider(&self) -> &str {
        (**self).provider()
    }

    fn respond(&self, query: &Query<'_>) -> Result<RawResponse, ProviderError> {
        (**self).respond(query)
    }
}

impl<R: Respondent + ?Sized> Respondent for Box<R> {
    fn provider(&self) -> &str {
        (**self).provider()
    }

    fn respond(&self, query: &Query<'_>) -> Result<RawResponse, ProviderError> {
        (**self).respond(query)
    }
}
