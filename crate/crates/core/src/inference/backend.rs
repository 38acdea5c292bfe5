use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::frame::FrameLabel;

use super::prompt::HEADLINE_MARKER;

/// Wire body of a completion request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletionRequest {
    pub model: String,
    pub prompt: String,
    #[serde(serialize_with = "super::compact_number")]
    pub temperature: f64,
    #[serde(serialize_with = "super::compact_number")]
    pub top_p: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    /// Worth retrying: connection problems, 429 and 5xx responses.
    #[error("transient backend error: {0}")]
    Transient(String),
    #[error("backend request timed out")]
    Timeout,
    /// Not retried: bad credentials, malformed requests.
    #[error("backend error: {0}")]
    Fatal(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        !matches!(self, BackendError::Fatal(_))
    }
}

/// Anything that turns a prompt plus sampling parameters into text.
#[async_trait]
pub trait CompletionBackend: Send + Sync {
    async fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError>;

    /// Short identity recorded in run manifests.
    fn describe(&self) -> String;
}

/// Offline backend: the answer is a pure function of (seed, headline).
///
/// SHA-256 over the little-endian seed followed by the headline bytes gives
/// two 64-bit words. The first word modulo 6 picks a frame in canonical order.
/// The second word divided by 2^64 is compared against `garbage_rate`; below
/// it the backend answers with an unparseable token instead. Answers are cut
/// to `max_tokens` whitespace-separated words, like a real token budget.
#[derive(Debug, Clone, PartialEq)]
pub struct MockBackend {
    pub seed: u64,
    pub garbage_rate: f64,
}

impl MockBackend {
    pub fn new(seed: u64) -> Self {
        MockBackend { seed, garbage_rate: 0.0 }
    }

    pub fn with_garbage_rate(mut self, rate: f64) -> Self {
        self.garbage_rate = rate;
        self
    }

    fn words(&self, headline: &str) -> (u64, u64) {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(headline.as_bytes());
        let d = h.finalize();
        let a = u64::from_be_bytes(d[0..8].try_into().expect("8 bytes"));
        let b = u64::from_be_bytes(d[8..16].try_into().expect("8 bytes"));
        (a, b)
    }

    /// Full, untruncated answer for a headline.
    pub fn answer_for(&self, headline: &str) -> String {
        let (a, b) = self.words(headline);
        let unit = b as f64 / 18_446_744_073_709_551_616.0;
        if unit < self.garbage_rate {
            format!("#{:08x}", a as u32)
        } else {
            let label = FrameLabel::ALL[(a % FrameLabel::COUNT as u64) as usize];
            format!(" {}", label.display_name())
        }
    }
}

/// Text of the headline line in a rendered prompt, or the whole prompt when
/// no headline line exists.
pub(crate) fn headline_of(prompt: &str) -> &str {
    prompt.lines().rev().find_map(|l| l.strip_prefix(HEADLINE_MARKER)).unwrap_or(prompt)
}

#[async_trait]
impl CompletionBackend for MockBackend {
    async fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let answer = self.answer_for(headline_of(&request.prompt));
        let words: Vec<&str> = answer.split_whitespace().take(request.max_tokens as usize).collect();
        Ok(format!(" {}", words.join(" ")))
    }

    fn describe(&self) -> String {
        format!("mock(seed={}, garbage_rate={})", self.seed, self.garbage_rate)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebook::Codebook;
    use crate::inference::{build_prompt, parse_label, BackendConfig, ParsedLabel, Strategy};

    #[test]
    fn request_wire_shape() {
        let r = BackendConfig::default().request("hi");
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"model": "text-davinci-003", "prompt": "hi", "temperature": 0, "top_p": 1, "max_tokens": 2})
        );
    }

    #[test]
    fn mock_is_deterministic_and_seed_sensitive() {
        let m = MockBackend::new(7);
        assert_eq!(m.answer_for("x"), m.answer_for("x"));
        let differs = (0..50).any(|i| {
            let h = format!("headline {i}");
            MockBackend::new(7).answer_for(&h) != MockBackend::new(8).answer_for(&h)
        });
        assert!(differs);
    }

    #[tokio::test]
    async fn mock_answers_parse_and_respect_token_budget() {
        let cb = Codebook::default_codebook();
        let m = MockBackend::new(1);
        let mut seen = std::collections::BTreeSet::new();
        for i in 0..200 {
            let h = format!("Headline number {i}");
            let p = build_prompt(&cb, "id", &h, Strategy::Definitions).unwrap();
            let out = m.complete(&BackendConfig::default().request(&p.text)).await.unwrap();
            assert!(out.split_whitespace().count() <= 2);
            let parsed = parse_label(&out, &cb);
            assert_ne!(parsed, ParsedLabel::Unparseable, "{out:?}");
            seen.insert(parsed.frame().unwrap());
        }
        assert_eq!(seen.len(), 6);
    }

    #[test]
    fn headline_extraction() {
        let cb = Codebook::default_codebook();
        let p = build_prompt(&cb, "id", "Police clash with protesters", Strategy::Adjectives).unwrap();
        assert_eq!(headline_of(&p.text), "Police clash with protesters");
        assert_eq!(headline_of("bare"), "bare");
    }
}
