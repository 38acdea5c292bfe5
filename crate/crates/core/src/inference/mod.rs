//! Zero-shot frame classification through an external completion backend.
//!
//! The workbench never embeds a model. Prompts are rendered deterministically
//! from the codebook, sent through a [`CompletionBackend`], and the raw
//! completion is parsed back into a [`FrameLabel`] (or recorded as
//! unparseable).

mod backend;
mod finetune;
mod parse;
mod prompt;
mod run;

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::frame::FrameLabel;

pub use backend::{BackendError, CompletionBackend, CompletionRequest, MockBackend};
pub use finetune::{export_finetune, FinetuneExample, LabeledHeadline, PROMPT_SEPARATOR};
pub use parse::{normalize_completion, parse_label};
pub use prompt::{build_prompt, ClassificationPrompt, PromptError, Strategy};
pub use run::{
    classify, run_classification, run_id, FailureRecord, ModelPrediction, Outcome, RunError, RunKey, RunManifest,
    RunOutput,
};

/// Sampling and transport settings for a completion backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BackendConfig {
    pub model_name: String,
    #[serde(serialize_with = "compact_number")]
    pub temperature: f64,
    #[serde(serialize_with = "compact_number")]
    pub top_p: f64,
    pub max_tokens: u32,
    pub timeout_ms: u64,
    pub max_parallel: usize,
    /// Retries after the first attempt.
    pub retry_limit: u32,
    /// First backoff delay; doubles on each further retry.
    pub retry_backoff_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            model_name: "text-davinci-003".into(),
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 2,
            timeout_ms: 30_000,
            max_parallel: 4,
            retry_limit: 3,
            retry_backoff_ms: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid backend config: {0}")]
pub struct ConfigError(pub String);

impl BackendConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.model_name.trim().is_empty() {
            return Err(ConfigError("model_name is empty".into()));
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(ConfigError(format!("temperature {} outside [0, 1]", self.temperature)));
        }
        if !(0.0..=1.0).contains(&self.top_p) {
            return Err(ConfigError(format!("top_p {} outside [0, 1]", self.top_p)));
        }
        if self.max_tokens == 0 {
            return Err(ConfigError("max_tokens must be positive".into()));
        }
        if self.max_parallel == 0 {
            return Err(ConfigError("max_parallel must be positive".into()));
        }
        if self.timeout_ms == 0 {
            return Err(ConfigError("timeout_ms must be positive".into()));
        }
        if self.retry_limit > 10 {
            return Err(ConfigError(format!("retry_limit {} is larger than 10", self.retry_limit)));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn request(&self, prompt: &str) -> CompletionRequest {
        CompletionRequest {
            model: self.model_name.clone(),
            prompt: prompt.to_string(),
            temperature: self.temperature,
            top_p: self.top_p,
            max_tokens: self.max_tokens,
        }
    }
}

/// Serialize integral floats as JSON integers so a temperature of zero is
/// written as `0`, not `0.0`.
pub(crate) fn compact_number<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        s.serialize_i64(*v as i64)
    } else {
        s.serialize_f64(*v)
    }
}

/// Result of parsing a completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParsedLabel {
    Frame(FrameLabel),
    Unparseable,
}

impl ParsedLabel {
    pub fn frame(self) -> Option<FrameLabel> {
        match self {
            ParsedLabel::Frame(f) => Some(f),
            ParsedLabel::Unparseable => None,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            ParsedLabel::Frame(f) => f.key(),
            ParsedLabel::Unparseable => "unparseable",
        }
    }
}

impl From<FrameLabel> for ParsedLabel {
    fn from(f: FrameLabel) -> Self {
        ParsedLabel::Frame(f)
    }
}

impl fmt::Display for ParsedLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParsedLabel::Frame(l) => l.fmt(f),
            ParsedLabel::Unparseable => f.write_str("Unparseable"),
        }
    }
}

impl Serialize for ParsedLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.key())
    }
}

impl<'de> Deserialize<'de> for ParsedLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if s == "unparseable" {
            return Ok(ParsedLabel::Unparseable);
        }
        FrameLabel::ALL
            .into_iter()
            .find(|l| l.key() == s)
            .map(ParsedLabel::Frame)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown parsed label {s:?}")))
    }
}
