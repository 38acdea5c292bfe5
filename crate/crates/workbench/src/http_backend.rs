//! Completion backend reached over HTTP.
//!
//! `POST <base_url>/complete` with the JSON body
//! `{model, prompt, temperature, top_p, max_tokens}`; the reply is `{text}`.
//! When `FRAMELAB_BACKEND_TOKEN` is set it is sent as a bearer token.

use async_trait::async_trait;
use framelab_core::inference::{BackendError, CompletionBackend, CompletionRequest};
use reqwest::StatusCode;
use serde::Deserialize;

#[derive(Debug, Deserialize)]
struct CompletionReply {
    text: String,
}

#[derive(Debug, Clone)]
pub struct HttpBackend {
    client: reqwest::Client,
    endpoint: String,
    token: Option<String>,
}

impl HttpBackend {
    pub fn new(base_url: &str, token: Option<String>) -> Self {
        HttpBackend {
            client: reqwest::Client::new(),
            endpoint: format!("{}/complete", base_url.trim_end_matches('/')),
            token: token.filter(|t| !t.is_empty()),
        }
    }

    /// Token from `FRAMELAB_BACKEND_TOKEN`, if set.
    pub fn from_env(base_url: &str) -> Self {
        Self::new(base_url, std::env::var(crate::config::TOKEN_ENV).ok())
    }
}

fn classify_status(status: StatusCode) -> Option<bool> {
    if status.is_success() {
        None
    } else {
        Some(
            status == StatusCode::TOO_MANY_REQUESTS
                || status == StatusCode::REQUEST_TIMEOUT
                || status.is_server_error(),
        )
    }
}

#[async_trait]
impl CompletionBackend for HttpBackend {
    async fn complete(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let mut call = self.client.post(&self.endpoint).json(request);
        if let Some(t) = &self.token {
            call = call.bearer_auth(t);
        }
        let response = call.send().await.map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Transient(e.to_string())
            }
        })?;
        let status = response.status();
        if let Some(retryable) = classify_status(status) {
            let body = response.text().await.unwrap_or_default();
            let msg = format!("{status}: {}", body.chars().take(200).collect::<String>());
            return Err(if retryable { BackendError::Transient(msg) } else { BackendError::Fatal(msg) });
        }
        let reply: CompletionReply =
            response.json().await.map_err(|e| BackendError::Fatal(format!("malformed completion reply: {e}")))?;
        Ok(reply.text)
    }

    fn describe(&self) -> String {
        format!("http({})", self.endpoint)
    }
}
