//! Blocking JSON-over-HTTP with a bounded retry policy, shared by the remote
//! embedder and the chat backend.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("could not decode response: {0}")]
    Decode(String),
    #[error("gave up after {attempts} attempt(s): {last}")]
    Exhausted { attempts: u32, last: Box<HttpError> },
}

impl HttpError {
    /// Transport failures, rate limits and server errors are worth retrying.
    pub fn is_retryable(&self) -> bool {
        match self {
            HttpError::Transport(_) => true,
            HttpError::Status { status, .. } => *status == 429 || *status >= 500,
            HttpError::Decode(_) | HttpError::Exhausted { .. } => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    /// Retries after the first attempt.
    pub max_retries: u32,
    pub initial_delay_ms: u64,
    pub max_delay_ms: u64,
    pub timeout_secs: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            initial_delay_ms: 500,
            max_delay_ms: 8_000,
            timeout_secs: 120,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, attempt: u32) -> Duration {
        let ms = self
            .initial_delay_ms
            .saturating_mul(1u64 << attempt.min(20))
            .min(self.max_delay_ms);
        Duration::from_millis(ms)
    }
}

#[derive(Debug, Clone)]
pub struct JsonClient {
    client: reqwest::blocking::Client,
    policy: RetryPolicy,
    api_key: Option<String>,
}

impl JsonClient {
    pub fn new(policy: RetryPolicy, api_key: Option<String>) -> Result<Self, HttpError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(policy.timeout_secs))
            .build()
            .map_err(|e| HttpError::Transport(e.to_string()))?;
        Ok(JsonClient {
            client,
            policy,
            api_key,
        })
    }

    pub fn policy(&self) -> &RetryPolicy {
        &self.policy
    }

    fn post_once(&self, url: &str, body: &serde_json::Value) -> Result<serde_json::Value, HttpError> {
        let mut req = self.client.post(url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| HttpError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| HttpError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(HttpError::Status {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            });
        }
        serde_json::from_str(&text).map_err(|e| HttpError::Decode(e.to_string()))
    }

    /// POSTs `body` and parses the JSON reply, retrying retryable failures
    /// with exponential backoff. Non-retryable errors return immediately.
    pub fn post(&self, url: &str, body: &serde_json::Value) -> Result<serde_json::Value, HttpError> {
        let mut attempt = 0;
        loop {
            match self.post_once(url, body) {
                Ok(v) => return Ok(v),
                Err(e) if e.is_retryable() && attempt < self.policy.max_retries => {
                    tracing::warn!(url, attempt, error = %e, "retrying request");
                    std::thread::sleep(self.policy.delay(attempt));
                    attempt += 1;
                }
                Err(e) if attempt > 0 => {
                    return Err(HttpError::Exhausted {
                        attempts: attempt + 1,
                        last: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            initial_delay_ms: 100,
            max_delay_ms: 350,
            ..RetryPolicy::default()
        };
        assert_eq!(p.delay(0), Duration::from_millis(100));
        assert_eq!(p.delay(1), Duration::from_millis(200));
        assert_eq!(p.delay(2), Duration::from_millis(350));
    }

    #[test]
    fn retryable_classes() {
        assert!(HttpError::Transport("x".into()).is_retryable());
        assert!(HttpError::Status {
            status: 503,
            body: String::new()
        }
        .is_retryable());
        assert!(HttpError::Status {
            status: 429,
            body: String::new()
        }
        .is_retryable());
        assert!(!HttpError::Status {
            status: 400,
            body: String::new()
        }
        .is_retryable());
        assert!(!HttpError::Decode("x".into()).is_retryable());
    }

    #[test]
    fn unreachable_host_exhausts_retries() {
        let policy = RetryPolicy {
            max_retries: 1,
            initial_delay_ms: 1,
            max_delay_ms: 1,
            timeout_secs: 2,
        };
        let client = JsonClient::new(policy, None).unwrap();
        let err = client
            .post("http://127.0.0.1:9/v1/none", &serde_json::json!({}))
            .unwrap_err();
        assert!(matches!(err, HttpError::Exhausted { attempts: 2, .. }), "{err}");
    }
}
