//! JSON-over-HTTP implementations of the model client interfaces.
//!
//! Every request is a `POST` with a JSON body, an `Idempotency-Key` header
//! that stays fixed across retries, and a bearer token when an API key is
//! configured. Timeouts, transport failures, 429 and 5xx responses are
//! retried with exponential backoff; authentication failures and malformed
//! responses are returned immediately as distinct [`ClientError`] variants.

mod clients;
mod limiter;

pub use clients::{HttpCaptioner, HttpEmbedder, HttpEncoder, HttpStatementConverter, HttpVlm};
pub use limiter::RateLimiter;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use diffurank_core::clients::ClientError;

pub const API_KEY_VAR: &str = "DIFFURANK_API_KEY";
pub const ENDPOINT_VAR_PREFIX: &str = "DIFFURANK_ENDPOINT_";

/// Which backend a configuration addresses; names the endpoint variable
/// `DIFFURANK_ENDPOINT_<KIND>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientKind {
    Captioner,
    Encoder,
    Vlm,
    Statements,
    Embedder,
}

impl ClientKind {
    pub fn name(self) -> &'static str {
        match self {
            ClientKind::Captioner => "captioner",
            ClientKind::Encoder => "encoder",
            ClientKind::Vlm => "vlm",
            ClientKind::Statements => "statements",
            ClientKind::Embedder => "embedder",
        }
    }

    pub fn env_var(self) -> String {
        format!("{ENDPOINT_VAR_PREFIX}{}", self.name().to_ascii_uppercase())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Base URL; request paths such as `/caption` are appended.
    pub endpoint: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    /// Per-endpoint request rate; `None` disables limiting.
    pub requests_per_second: Option<f64>,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            endpoint: String::new(),
            api_key: None,
            timeout_ms: 30_000,
            max_retries: 3,
            backoff_base_ms: 200,
            requests_per_second: None,
        }
    }
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpConfig {
            endpoint: endpoint.into(),
            ..Default::default()
        }
    }

    /// Endpoint from `DIFFURANK_ENDPOINT_<KIND>` and key from
    /// `DIFFURANK_API_KEY`. Returns `None` when the endpoint is unset.
    pub fn from_env(kind: ClientKind) -> Option<Self> {
        let endpoint = std::env::var(kind.env_var()).ok()?;
        Some(HttpConfig {
            endpoint,
            api_key: std::env::var(API_KEY_VAR).ok(),
            ..Default::default()
        })
    }
}

/// Shared request machinery for one endpoint.
pub struct HttpTransport {
    client: &'static str,
    config: HttpConfig,
    agent: ureq::Agent,
    limiter: Option<RateLimiter>,
    retries: AtomicUsize,
    requests: AtomicUsize,
}

impl HttpTransport {
    pub fn new(client: &'static str, config: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        let limiter = config.requests_per_second.map(RateLimiter::per_second);
        HttpTransport {
            client,
            config,
            agent,
            limiter,
            retries: AtomicUsize::new(0),
            requests: AtomicUsize::new(0),
        }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    /// Retries performed so far, across all requests.
    pub fn retries(&self) -> usize {
        self.retries.load(Ordering::Relaxed)
    }

    /// Logical requests issued (retries of one request count once).
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::Relaxed)
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.endpoint.trim_end_matches('/'), path)
    }

    fn attempt(&self, url: &str, key: &str, body: &Value) -> Result<Value, ClientError> {
        if let Some(limiter) = &self.limiter {
            limiter.acquire();
        }
        let mut request = self
            .agent
            .post(url)
            .header("Idempotency-Key", key)
            .header("Accept", "application/json");
        if let Some(api_key) = &self.config.api_key {
            request = request.header("Authorization", &format!("Bearer {api_key}"));
        }
        let mut response = request.send_json(body).map_err(|e| self.transport_error(e))?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| self.transport_error(e))?;
        match status {
            200..=299 => serde_json::from_str(&text).map_err(|e| ClientError::Malformed {
                client: self.client.into(),
                reason: e.to_string(),
                body: text,
            }),
            401 | 403 => Err(ClientError::Auth {
                client: self.client.into(),
                status,
            }),
            _ => Err(ClientError::Status {
                client: self.client.into(),
                status,
                body: text,
            }),
        }
    }

    fn transport_error(&self, error: ureq::Error) -> ClientError {
        match error {
            ureq::Error::Timeout(_) => ClientError::Timeout {
                client: self.client.into(),
                millis: self.config.timeout_ms,
            },
            other => ClientError::Transport {
                client: self.client.into(),
                message: other.to_string(),
            },
        }
    }

    /// POSTs `body` to `path`, retrying transient failures.
    pub fn post_json(&self, path: &str, body: &Value) -> Result<Value, ClientError> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        let url = self.url(path);
        let key = uuid::Uuid::new_v4().to_string();
        let mut attempt = 0u32;
        loop {
            match self.attempt(&url, &key, body) {
                Err(e) if e.is_transient() && attempt < self.config.max_retries => {
                    let delay = self.config.backoff_base_ms.saturating_mul(1 << attempt.min(16));
                    attempt += 1;
                    self.retries.fetch_add(1, Ordering::Relaxed);
                    log::warn!("{} retry {attempt}/{} after {delay} ms: {e}", self.client, self.config.max_retries);
                    std::thread::sleep(Duration::from_millis(delay));
                }
                other => return other,
            }
        }
    }

    /// Reads field `name` of a response, mapping absence or a type mismatch
    /// to [`ClientError::Malformed`] carrying the raw body.
    pub fn field<T: serde::de::DeserializeOwned>(&self, response: &Value, name: &str) -> Result<T, ClientError> {
        let malformed = |reason: String| ClientError::Malformed {
            client: self.client.into(),
            reason,
            body: response.to_string(),
        };
        let value = response
            .get(name)
            .ok_or_else(|| malformed(format!("missing field `{name}`")))?;
        serde_json::from_value(value.clone()).map_err(|e| malformed(format!("field `{name}`: {e}")))
    }
}
