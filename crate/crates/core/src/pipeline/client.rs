//! Text-generation clients.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// A completion service. Implementations must be shareable across the
/// pipeline's worker threads.
pub trait GenerationClient: Sync {
    /// Returns the completion for `prompt`, asking for at most `max_tokens`
    /// tokens. Failures should be reported as [`Error::Transport`].
    fn complete(&self, prompt: &str, max_tokens: usize) -> Result<String>;
}

impl<F> GenerationClient for F
where
    F: Fn(&str, usize) -> Result<String> + Sync,
{
    fn complete(&self, prompt: &str, max_tokens: usize) -> Result<String> {
        self(prompt, max_tokens)
    }
}

/// Keeps the text up to the end of the `max_tokens`-th whitespace-delimited
/// word. Shorter texts, including their trailing whitespace, are unchanged.
pub fn truncate_tokens(text: &str, max_tokens: usize) -> &str {
    let mut words = 0;
    let mut in_word = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if in_word {
                in_word = false;
                if words == max_tokens {
                    return &text[..i];
                }
            }
        } else if !in_word {
            if words == max_tokens {
                return &text[..i];
            }
            in_word = true;
            words += 1;
        }
    }
    text
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, initial_backoff: Duration::from_secs(1) }
    }
}

impl RetryPolicy {
    pub fn no_wait(max_attempts: u32) -> Self {
        RetryPolicy { max_attempts, initial_backoff: Duration::ZERO }
    }

    /// Calls `f` until it succeeds or the attempt budget is spent, doubling
    /// the pause after each transport failure. Other errors are returned
    /// immediately.
    pub fn run<T>(&self, mut f: impl FnMut() -> Result<T>) -> Result<T> {
        let mut delay = self.initial_backoff;
        let mut last = None;
        for attempt in 0..self.max_attempts.max(1) {
            if attempt > 0 && !delay.is_zero() {
                thread::sleep(delay);
                delay *= 2;
            }
            match f() {
                Ok(v) => return Ok(v),
                Err(e @ Error::Transport(_)) => last = Some(e),
                Err(e) => return Err(e),
            }
        }
        Err(last.unwrap_or_else(|| Error::Transport("no attempts made".into())))
    }
}

/// Request/response field mapping for a JSON completion endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpClientConfig {
    pub url: String,
    pub prompt_field: String,
    pub max_tokens_field: String,
    /// JSON pointer to the completion text in the response body.
    pub response_pointer: String,
    /// Static fields merged into every request body (model name etc).
    #[serde(default)]
    pub extra: Map<String, Value>,
    pub timeout_secs: u64,
}

impl Default for HttpClientConfig {
    fn default() -> Self {
        HttpClientConfig {
            url: "http://127.0.0.1:8000/v1/completions".into(),
            prompt_field: "prompt".into(),
            max_tokens_field: "max_tokens".into(),
            response_pointer: "/choices/0/text".into(),
            extra: Map::new(),
            timeout_secs: 120,
        }
    }
}

/// Blocking HTTP JSON client. The token cap is sent to the server and also
/// enforced locally on the returned text.
pub struct HttpClient {
    config: HttpClientConfig,
    http: reqwest::blocking::Client,
}

impl HttpClient {
    pub fn new(config: HttpClientConfig) -> Result<Self> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Config(format!("cannot build http client: {e}")))?;
        Ok(HttpClient { config, http })
    }

    pub fn request_body(&self, prompt: &str, max_tokens: usize) -> Value {
        let mut body = self.config.extra.clone();
        body.insert(self.config.prompt_field.clone(), Value::String(prompt.to_owned()));
        body.insert(self.config.max_tokens_field.clone(), Value::from(max_tokens));
        Value::Object(body)
    }
}

impl GenerationClient for HttpClient {
    fn complete(&self, prompt: &str, max_tokens: usize) -> Result<String> {
        let resp = self
            .http
            .post(&self.config.url)
            .json(&self.request_body(prompt, max_tokens))
            .send()
            .and_then(|r| r.error_for_status())
            .map_err(|e| Error::Transport(e.to_string()))?;
        let body: Value = resp.json().map_err(|e| Error::Transport(format!("bad response body: {e}")))?;
        let text = body
            .pointer(&self.config.response_pointer)
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Transport(format!("response has no string at {}", self.config.response_pointer)))?;
        Ok(truncate_tokens(text, max_tokens).to_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    #[test]
    fn truncation_keeps_prefix() {
        assert_eq!(truncate_tokens("a b  c d", 2), "a b");
        assert_eq!(truncate_tokens("  a\nb\n\n", 5), "  a\nb\n\n");
        assert_eq!(truncate_tokens("\n\n\n\n\n\n\n\n", 80), "\n\n\n\n\n\n\n\n");
        assert_eq!(truncate_tokens("one two", 0), "");
    }

    #[test]
    fn retry_stops_after_budget() {
        let calls = AtomicU32::new(0);
        let r: Result<()> = RetryPolicy::no_wait(3).run(|| {
            calls.fetch_add(1, Ordering::SeqCst);
            Err(Error::Transport("down".into()))
        });
        assert!(matches!(r, Err(Error::Transport(_))));
        assert_eq!(calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn retry_recovers() {
        let calls = AtomicU32::new(0);
        let r = RetryPolicy::no_wait(3).run(|| {
            if calls.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(Error::Transport("flaky".into()))
            } else {
                Ok(7)
            }
        });
        assert_eq!(r.unwrap(), 7);
    }

    #[test]
    fn request_body_uses_configured_fields() {
        let mut cfg =
            HttpClientConfig { prompt_field: "input".into(), max_tokens_field: "n".into(), ..Default::default() };
        cfg.extra.insert("model".into(), Value::from("m"));
        let c = HttpClient::new(cfg).unwrap();
        let body = c.request_body("hi", 80);
        assert_eq!(body, serde_json::json!({"input": "hi", "n": 80, "model": "m"}));
    }
}
