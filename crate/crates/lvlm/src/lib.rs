//! Blocking client for OpenAI-compatible `/v1/chat/completions` servers
//! (vLLM, llama.cpp server, hosted APIs).
//!
//! Prompts built by `icl_core::prompt` are sent as one system message
//! followed by user messages whose images travel as base64 data URLs.
//! The reply text is mapped to a verdict with
//! [`icl_core::lvlm_client::parse_verdict`].

use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use icl_core::lvlm_client::{EndpointConfig, Oracle, OracleError, Verdict};
use icl_core::prompt::{ContentPart, PromptBundle, Role};
use serde_json::{json, Value};
use thiserror::Error;

pub mod image;

/// Environment variables consulted, in order, for a bearer token.
pub const API_KEY_VARS: [&str; 2] = ["LVLM_API_KEY", "OPENAI_API_KEY"];

const BACKOFF_BASE: Duration = Duration::from_millis(250);
const BACKOFF_CAP: Duration = Duration::from_secs(8);

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid endpoint config: {0}")]
    Config(String),
    #[error("cannot read image {}: {source}", path.display())]
    Image {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("server returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected response body: {0}")]
    Decode(String),
    #[error("gave up after {attempts} attempt(s) in {elapsed:.1?}: {last}")]
    Exhausted {
        attempts: u32,
        elapsed: Duration,
        last: Box<ClientError>,
    },
}

impl ClientError {
    fn retryable(&self) -> bool {
        match self {
            ClientError::Transport(_) => true,
            ClientError::Status { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

/// Counting semaphore for the in-flight cap.
struct InFlight {
    cap: usize,
    busy: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(cap: usize) -> Self {
        InFlight {
            cap,
            busy: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut busy = self.busy.lock().unwrap_or_else(|e| e.into_inner());
        while *busy >= self.cap {
            busy = self.freed.wait(busy).unwrap_or_else(|e| e.into_inner());
        }
        *busy += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut busy = self.0.busy.lock().unwrap_or_else(|e| e.into_inner());
        *busy -= 1;
        self.0.freed.notify_one();
    }
}

pub struct LvlmClient {
    cfg: EndpointConfig,
    url: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
    in_flight: InFlight,
}

impl LvlmClient {
    /// Builds a client, picking the API key up from [`API_KEY_VARS`].
    pub fn new(cfg: EndpointConfig) -> Result<Self, ClientError> {
        let key = API_KEY_VARS
            .iter()
            .find_map(|v| std::env::var(v).ok())
            .filter(|k| !k.is_empty());
        Self::with_api_key(cfg, key)
    }

    pub fn with_api_key(cfg: EndpointConfig, api_key: Option<String>) -> Result<Self, ClientError> {
        cfg.validate().map_err(|e| ClientError::Config(e.0))?;
        let http = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| ClientError::Config(e.to_string()))?;
        let url = format!("{}/v1/chat/completions", cfg.base_url.trim_end_matches('/'));
        Ok(LvlmClient {
            in_flight: InFlight::new(cfg.max_parallel),
            cfg,
            url,
            api_key,
            http,
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    /// JSON request body for `prompt`, with every image resolved.
    pub fn request_body(&self, prompt: &PromptBundle) -> Result<Value, ClientError> {
        let root = self.cfg.image_root.as_deref();
        let mut messages = Vec::with_capacity(prompt.messages.len());
        for msg in &prompt.messages {
            let value = match msg.role {
                Role::System => {
                    let text: Vec<&str> = msg
                        .parts
                        .iter()
                        .filter_map(|p| match p {
                            ContentPart::Text(t) => Some(t.as_str()),
                            ContentPart::Image(_) => None,
                        })
                        .collect();
                    json!({ "role": "system", "content": text.join("\n") })
                }
                Role::User => {
                    let mut parts = Vec::with_capacity(msg.parts.len());
                    for p in &msg.parts {
                        parts.push(match p {
                            ContentPart::Text(t) => json!({ "type": "text", "text": t }),
                            ContentPart::Image(r) => json!({
                                "type": "image_url",
                                "image_url": { "url": image::resolve(r, root)? },
                            }),
                        });
                    }
                    json!({ "role": "user", "content": parts })
                }
            };
            messages.push(value);
        }
        let mut body = json!({
            "model": self.cfg.model_name,
            "messages": messages,
            "temperature": self.cfg.temperature,
            "stream": false,
        });
        if let Some(n) = self.cfg.max_tokens {
            body["max_tokens"] = json!(n);
        }
        Ok(body)
    }

    fn post_once(&self, body: &Value, timeout: Duration) -> Result<String, ClientError> {
        let mut req = self.http.post(&self.url).timeout(timeout).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| ClientError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ClientError::Status {
                status: status.as_u16(),
                body: text.chars().take(512).collect(),
            });
        }
        reply_text(&text)
    }

    /// Sends `prompt` and parses the reply.
    ///
    /// Transport errors, 429 and 5xx are retried with exponential backoff,
    /// up to `max_retries` extra attempts. The whole call, backoff included,
    /// is bounded by `timeout × (max_retries + 1)`.
    pub fn infer(&self, prompt: &PromptBundle) -> Result<Verdict, ClientError> {
        let body = self.request_body(prompt)?;
        let per_try = Duration::from_secs_f64(self.cfg.timeout_secs);
        let budget = per_try * (self.cfg.max_retries + 1);

        let _permit = self.in_flight.acquire();
        let start = Instant::now();
        let mut attempts = 0;
        loop {
            let left = budget.saturating_sub(start.elapsed());
            attempts += 1;
            let err = match self.post_once(&body, per_try.min(left)) {
                Ok(text) => return Ok(Verdict::from_text(text, start.elapsed().as_secs_f64())),
                Err(e) => e,
            };
            if !err.retryable() {
                return Err(err);
            }
            let wait = BACKOFF_BASE
                .saturating_mul(1 << (attempts - 1).min(16))
                .min(BACKOFF_CAP);
            let left = budget.saturating_sub(start.elapsed());
            if attempts > self.cfg.max_retries || wait >= left {
                return Err(ClientError::Exhausted {
                    attempts,
                    elapsed: start.elapsed(),
                    last: Box::new(err),
                });
            }
            std::thread::sleep(wait);
        }
    }
}

impl Oracle for LvlmClient {
    fn infer(&self, prompt: &PromptBundle) -> Result<Verdict, OracleError> {
        LvlmClient::infer(self, prompt).map_err(|e| OracleError(e.to_string()))
    }

    fn max_parallel(&self) -> usize {
        self.cfg.max_parallel
    }
}

/// Pulls `choices[0].message.content` out of a completion response. The
/// content may be a plain string or a list of text parts.
pub fn reply_text(body: &str) -> Result<String, ClientError> {
    let v: Value = serde_json::from_str(body).map_err(|e| ClientError::Decode(e.to_string()))?;
    let content = &v["choices"][0]["message"]["content"];
    match content {
        Value::String(s) => Ok(s.clone()),
        Value::Array(parts) => Ok(parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join("")),
        // some servers send null content with an empty answer
        Value::Null if v["choices"][0]["message"].is_object() => Ok(String::new()),
        _ => Err(ClientError::Decode(format!(
            "no choices[0].message.content in {}",
            body.chars().take(200).collect::<String>()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reply_shapes() {
        let s = r#"{"choices":[{"message":{"role":"assistant","content":"fake"}}]}"#;
        assert_eq!(reply_text(s).unwrap(), "fake");
        let parts = r#"{"choices":[{"message":{"content":[{"type":"text","text":"re"},{"type":"text","text":"al"}]}}]}"#;
        assert_eq!(reply_text(parts).unwrap(), "real");
        let null = r#"{"choices":[{"message":{"content":null}}]}"#;
        assert_eq!(reply_text(null).unwrap(), "");
        assert!(reply_text(r#"{"error":"x"}"#).is_err());
        assert!(reply_text("not json").is_err());
    }

    #[test]
    fn retry_classes() {
        assert!(ClientError::Transport("x".into()).retryable());
        assert!(ClientError::Status { status: 503, body: String::new() }.retryable());
        assert!(ClientError::Status { status: 429, body: String::new() }.retryable());
        assert!(!ClientError::Status { status: 400, body: String::new() }.retryable());
        assert!(!ClientError::Decode("x".into()).retryable());
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = EndpointConfig {
            max_parallel: 0,
            ..EndpointConfig::default()
        };
        assert!(matches!(LvlmClient::with_api_key(cfg, None), Err(ClientError::Config(_))));
    }

    #[test]
    fn in_flight_cap_holds() {
        use std::sync::atomic::{AtomicUsize, Ordering};
        let gate = InFlight::new(2);
        let now = AtomicUsize::new(0);
        let peak = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    let _p = gate.acquire();
                    let n = now.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(n, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(5));
                    now.fetch_sub(1, Ordering::SeqCst);
                });
            }
        });
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }
}
