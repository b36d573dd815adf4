//! Blocking JSON-over-HTTP calls with bounded retries.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts, including the first one.
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub timeout_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            initial_backoff_ms: 250,
            timeout_ms: 120_000,
        }
    }
}

impl RetryPolicy {
    fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_millis(
            self.initial_backoff_ms
                .saturating_mul(1u64 << attempt.min(16)),
        )
    }
}

#[derive(Debug, Clone, thiserror::Error)]
#[error("request to {url} failed after {attempts} attempt(s): {message}")]
pub struct TransportError {
    pub url: String,
    pub attempts: u32,
    pub status: Option<u16>,
    pub message: String,
}

/// POSTs `body` and decodes a JSON response. 5xx, 429 and transport errors
/// are retried with exponential backoff; other 4xx fail immediately.
pub fn post_json(
    url: &str,
    bearer: Option<&str>,
    body: &Value,
    policy: &RetryPolicy,
) -> Result<Value, TransportError> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(policy.timeout_ms)))
        .http_status_as_error(false)
        .build()
        .into();

    let attempts = policy.max_attempts.max(1);
    let mut last = TransportError {
        url: url.to_string(),
        attempts: 0,
        status: None,
        message: String::new(),
    };
    for attempt in 0..attempts {
        if attempt > 0 {
            std::thread::sleep(policy.backoff(attempt - 1));
        }
        last.attempts = attempt + 1;

        let mut req = agent.post(url).header("Content-Type", "application/json");
        if let Some(token) = bearer {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = match req.send_json(body) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("attempt {} to {url} failed: {e}", attempt + 1);
                last.message = e.to_string();
                continue;
            }
        };

        let status = resp.status().as_u16();
        if (200..300).contains(&status) {
            return resp
                .body_mut()
                .read_json::<Value>()
                .map_err(|e| TransportError {
                    url: url.to_string(),
                    attempts: attempt + 1,
                    status: Some(status),
                    message: format!("malformed response body: {e}"),
                });
        }

        let text = resp.body_mut().read_to_string().unwrap_or_default();
        last.status = Some(status);
        last.message = format!(
            "HTTP {status}: {}",
            text.chars().take(200).collect::<String>()
        );
        if status != 429 && status < 500 {
            break;
        }
        log::warn!("attempt {} to {url} got HTTP {status}", attempt + 1);
    }
    Err(last)
}
