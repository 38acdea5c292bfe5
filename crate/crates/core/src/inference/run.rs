use std::collections::HashMap;
use std::io;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codebook::Codebook;
use crate::corpus::Corpus;

use super::backend::{BackendError, CompletionBackend};
use super::parse::parse_label;
use super::prompt::{build_prompt, ClassificationPrompt, Strategy};
use super::{BackendConfig, ConfigError, ParsedLabel};

const MAX_BACKOFF: Duration = Duration::from_secs(30);

/// Content address of a classification run. Predictions made under the same
/// key are reused when a run is resumed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RunKey {
    pub codebook_version: String,
    pub model_name: String,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPrediction {
    pub article_id: String,
    pub raw_completion: String,
    pub parsed: ParsedLabel,
    pub backend: String,
    pub strategy: Strategy,
    pub codebook_version: String,
    pub config: BackendConfig,
    pub attempts: u32,
    pub latency_ms: u64,
    pub created_at: DateTime<Utc>,
}

impl ModelPrediction {
    pub fn run_key(&self) -> RunKey {
        RunKey {
            codebook_version: self.codebook_version.clone(),
            model_name: self.backend.clone(),
            strategy: self.strategy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub article_id: String,
    pub error: String,
    pub attempts: u32,
}

/// Send one prompt, retrying transient failures and timeouts with
/// exponential backoff up to `config.retry_limit` extra attempts.
pub async fn classify(
    prompt: &ClassificationPrompt,
    codebook: &Codebook,
    backend: &dyn CompletionBackend,
    config: &BackendConfig,
) -> Result<ModelPrediction, FailureRecord> {
    let request = config.request(&prompt.text);
    let started = Instant::now();
    let mut attempts = 0;
    let mut backoff = Duration::from_millis(config.retry_backoff_ms);
    loop {
        attempts += 1;
        let outcome = match tokio::time::timeout(config.timeout(), backend.complete(&request)).await {
            Ok(r) => r,
            Err(_) => Err(BackendError::Timeout),
        };
        match outcome {
            Ok(raw) => {
                return Ok(ModelPrediction {
                    article_id: prompt.article_id.clone(),
                    parsed: parse_label(&raw, codebook),
                    raw_completion: raw,
                    backend: config.model_name.clone(),
                    strategy: prompt.strategy,
                    codebook_version: prompt.codebook_version.clone(),
                    config: config.clone(),
                    attempts,
                    latency_ms: started.elapsed().as_millis() as u64,
                    created_at: Utc::now(),
                })
            }
            Err(e) if e.is_retryable() && attempts <= config.retry_limit => {
                tokio::time::sleep(backoff).await;
                backoff = (backoff * 2).min(MAX_BACKOFF);
            }
            Err(e) => {
                return Err(FailureRecord { article_id: prompt.article_id.clone(), error: e.to_string(), attempts })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub codebook_version: String,
    pub model_name: String,
    pub backend: String,
    pub strategy: Strategy,
    pub config: BackendConfig,
    pub n_articles: usize,
    pub n_predictions: usize,
    pub n_failures: usize,
    pub n_unparseable: usize,
    /// Unparseable predictions over all predictions.
    pub parse_failure_rate: f64,
    pub failures: Vec<FailureRecord>,
}

#[derive(Debug)]
pub struct RunOutput {
    /// One per article that has a prediction, in corpus order, including
    /// predictions reused from earlier runs.
    pub predictions: Vec<ModelPrediction>,
    pub failures: Vec<FailureRecord>,
    pub manifest: RunManifest,
    /// Articles sent to the backend in this invocation.
    pub requests_issued: usize,
    /// Articles skipped because a prediction already existed.
    pub reused: usize,
}

/// A freshly produced outcome, handed to the persistence sink.
#[derive(Debug, Clone)]
pub enum Outcome {
    Prediction(ModelPrediction),
    Failure(FailureRecord),
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("failed to persist outcome: {0}")]
    Storage(#[from] io::Error),
}

pub fn run_id(key: &RunKey, corpus: &Corpus) -> String {
    let mut h = Sha256::new();
    h.update(key.codebook_version.as_bytes());
    h.update([0]);
    h.update(key.model_name.as_bytes());
    h.update([0]);
    h.update(key.strategy.key().as_bytes());
    for id in corpus.ids() {
        h.update([0]);
        h.update(id.as_bytes());
    }
    hex::encode(&h.finalize()[..8])
}

/// Classify every article of `corpus`.
///
/// `existing` holds previously stored predictions; those matching this run's
/// key are reused instead of re-requested. Each new outcome goes through
/// `sink` one at a time, in completion order; a sink error aborts the run.
/// Per-article backend failures never abort.
pub async fn run_classification<F>(
    corpus: &Corpus,
    codebook: &Codebook,
    backend: &dyn CompletionBackend,
    config: &BackendConfig,
    strategy: Strategy,
    existing: &[ModelPrediction],
    mut sink: F,
) -> Result<RunOutput, RunError>
where
    F: FnMut(&Outcome) -> io::Result<()>,
{
    if corpus.is_empty() {
        return Err(RunError::EmptyCorpus);
    }
    config.validate()?;
    let key =
        RunKey { codebook_version: codebook.version().to_string(), model_name: config.model_name.clone(), strategy };

    let mut done: HashMap<&str, &ModelPrediction> = HashMap::new();
    for p in existing {
        if p.run_key() == key && corpus.get(&p.article_id).is_some() {
            done.insert(p.article_id.as_str(), p);
        }
    }

    let todo: Vec<_> = corpus.articles().iter().filter(|a| !done.contains_key(a.id.as_str())).collect();
    let requests_issued = todo.len();

    let mut fresh: Vec<ModelPrediction> = Vec::new();
    let mut failures: Vec<FailureRecord> = Vec::new();
    let mut results = stream::iter(todo)
        .map(|article| async move {
            match build_prompt(codebook, &article.id, &article.headline, strategy) {
                Ok(prompt) => classify(&prompt, codebook, backend, config).await,
                Err(e) => Err(FailureRecord { article_id: article.id.clone(), error: e.to_string(), attempts: 0 }),
            }
        })
        .buffer_unordered(config.max_parallel);

    while let Some(result) = results.next().await {
        let outcome = match result {
            Ok(p) => Outcome::Prediction(p),
            Err(f) => Outcome::Failure(f),
        };
        sink(&outcome)?;
        match outcome {
            Outcome::Prediction(p) => fresh.push(p),
            Outcome::Failure(f) => failures.push(f),
        }
    }
    drop(results);

    let reused = done.len();
    let mut predictions: Vec<ModelPrediction> = done.into_values().cloned().chain(fresh).collect();
    predictions.sort_by_key(|p| corpus.position(&p.article_id));
    failures.sort_by_key(|f| corpus.position(&f.article_id));

    let n_unparseable = predictions.iter().filter(|p| p.parsed == ParsedLabel::Unparseable).count();
    let manifest = RunManifest {
        run_id: run_id(&key, corpus),
        codebook_version: key.codebook_version,
        model_name: key.model_name,
        backend: backend.describe(),
        strategy,
        config: config.clone(),
        n_articles: corpus.len(),
        n_predictions: predictions.len(),
        n_failures: failures.len(),
        n_unparseable,
        parse_failure_rate: if predictions.is_empty() { 0.0 } else { n_unparseable as f64 / predictions.len() as f64 },
        failures: failures.clone(),
    };
    Ok(RunOutput { predictions, failures, manifest, requests_issued, reused })
}
