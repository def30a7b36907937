//! Minimal blocking JSON-over-HTTP client with retry and exponential backoff.

use std::io::ErrorKind;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    /// Delay before the first retry; doubles on each subsequent one.
    pub initial_backoff_secs: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_retries: 2, initial_backoff_secs: 0.5 }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_secs_f64(self.initial_backoff_secs * 2f64.powi(attempt as i32))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HttpError {
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("endpoint unreachable after {attempts} attempt(s): {reason}")]
    Unreachable { attempts: u32, reason: String },
    #[error("malformed response: {0}")]
    Malformed(String),
}

enum Attempt {
    Done(String),
    Retry(HttpError),
    Fatal(HttpError),
}

fn attempt(agent: &ureq::Agent, url: &str, body: &str, attempts: u32) -> Attempt {
    let resp = agent
        .post(url)
        .header("content-type", "application/json")
        .send(body.as_bytes());
    let mut resp = match resp {
        Ok(r) => r,
        Err(ureq::Error::Timeout(_)) => return Attempt::Retry(HttpError::Timeout { attempts }),
        Err(ureq::Error::Io(e)) if e.kind() == ErrorKind::TimedOut => {
            return Attempt::Retry(HttpError::Timeout { attempts })
        }
        Err(e) => return Attempt::Retry(HttpError::Unreachable { attempts, reason: e.to_string() }),
    };
    let status = resp.status().as_u16();
    if status >= 500 || status == 429 {
        return Attempt::Retry(HttpError::Unreachable { attempts, reason: format!("http status {status}") });
    }
    if status >= 400 {
        return Attempt::Fatal(HttpError::Unreachable { attempts, reason: format!("http status {status}") });
    }
    match resp.body_mut().read_to_string() {
        Ok(text) => Attempt::Done(text),
        Err(ureq::Error::Timeout(_)) => Attempt::Retry(HttpError::Timeout { attempts }),
        Err(e) => Attempt::Fatal(HttpError::Malformed(format!("unreadable body: {e}"))),
    }
}

/// POST `body` as JSON and return the response text of the first 2xx reply.
///
/// Connection failures, timeouts, 429 and 5xx are retried per `policy`;
/// other 4xx statuses fail immediately.
pub fn post_json<T: Serialize>(
    url: &str,
    body: &T,
    timeout: Duration,
    policy: &RetryPolicy,
) -> Result<String, HttpError> {
    let payload = serde_json::to_string(body).map_err(|e| HttpError::Malformed(e.to_string()))?;
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let mut tries = 0;
    loop {
        tries += 1;
        match attempt(&agent, url, &payload, tries) {
            Attempt::Done(text) => return Ok(text),
            Attempt::Fatal(e) => return Err(e),
            Attempt::Retry(e) => {
                if tries > policy.max_retries {
                    return Err(e);
                }
                thread::sleep(policy.backoff(tries - 1));
            }
        }
    }
}
