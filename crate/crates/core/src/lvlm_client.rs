//! Verdict parsing and the oracle abstraction over vision-language models.
//!
//! The HTTP implementation lives in the `icl-lvlm` crate; this module holds
//! what the harness needs to stay transport-agnostic, plus the offline
//! majority-vote mock.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::Label;
use crate::prompt::PromptBundle;

/// Connection settings for an OpenAI-compatible chat-completions server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// Server root, e.g. `http://localhost:8000`; `/v1/chat/completions` is appended.
    pub base_url: String,
    pub model_name: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
    pub max_parallel: usize,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    /// Directory that relative image paths are resolved against.
    pub image_root: Option<std::path::PathBuf>,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "http://localhost:8000".into(),
            model_name: String::new(),
            timeout_secs: 60.0,
            max_retries: 3,
            max_parallel: 4,
            temperature: 0.0,
            max_tokens: Some(16),
            image_root: None,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), OracleError> {
        if self.max_parallel == 0 {
            return Err(OracleError("max_parallel must be at least 1".into()));
        }
        if !(self.timeout_secs > 0.0) || !self.timeout_secs.is_finite() {
            return Err(OracleError("timeout must be positive".into()));
        }
        if self.base_url.is_empty() {
            return Err(OracleError("base_url is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    /// `None` when the response did not parse.
    pub label: Option<Label>,
    pub raw_text: String,
    pub latency_secs: f64,
}

impl Verdict {
    pub fn from_text(raw_text: impl Into<String>, latency_secs: f64) -> Self {
        let raw_text = raw_text.into();
        Verdict {
            label: parse_verdict(&raw_text),
            raw_text,
            latency_secs,
        }
    }

    pub fn is_parse_failure(&self) -> bool {
        self.label.is_none()
    }
}

/// Lowercases the response, takes the first run of alphabetic characters
/// and maps it: `real`/`authentic` → authentic,
/// `fake`/`manipulated`/`forged` → manipulated, anything else → `None`.
pub fn parse_verdict(text: &str) -> Option<Label> {
    let lower = text.to_lowercase();
    let token: String = lower
        .chars()
        .skip_while(|c| !c.is_alphabetic())
        .take_while(|c| c.is_alphabetic())
        .collect();
    match token.as_str() {
        "real" | "authentic" => Some(Label::Authentic),
        "fake" | "manipulated" | "forged" => Some(Label::Manipulated),
        _ => None,
    }
}

#[derive(Debug, Clone, Error)]
#[error("{0}")]
pub struct OracleError(pub String);

/// Anything that can answer a prompt with a verdict.
pub trait Oracle: Sync {
    fn infer(&self, prompt: &PromptBundle) -> Result<Verdict, OracleError>;

    /// Upper bound on concurrent requests the oracle wants to serve.
    fn max_parallel(&self) -> usize {
        1
    }
}

/// Majority label of the demonstrations; a tie goes to the first
/// demonstration and an empty prompt answers authentic.
pub fn mock_infer(prompt: &PromptBundle) -> Verdict {
    let demos = &prompt.demonstrations;
    let fake = demos.iter().filter(|d| d.label == Label::Manipulated).count();
    let real = demos.len() - fake;
    let label = match fake.cmp(&real) {
        std::cmp::Ordering::Greater => Label::Manipulated,
        std::cmp::Ordering::Less => Label::Authentic,
        std::cmp::Ordering::Equal => demos.first().map_or(Label::Authentic, |d| d.label),
    };
    Verdict {
        label: Some(label),
        raw_text: label.word().to_string(),
        latency_secs: 0.0,
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct MockOracle {
    pub workers: usize,
}

impl Oracle for MockOracle {
    fn infer(&self, prompt: &PromptBundle) -> Result<Verdict, OracleError> {
        Ok(mock_infer(prompt))
    }

    fn max_parallel(&self) -> usize {
        self.workers.max(1)
    }
}
