//! The data directory as a whole: loads every store, applies mutations
//! through the append-only logs and keeps the in-memory views current.
//!
//! Both the CLI and the HTTP service go through [`Workspace`], so the same
//! logical operation produces the same stored record on either path.
//!
//! Layout:
//!
//! ```text
//! corpus/manifest.json      corpus/articles.jsonl
//! sessions/<id>.json        annotations.jsonl
//! predictions.jsonl         runs/<run_id>.json
//! adjudication/queue.json   verdicts.jsonl
//! quarantine/<log>.jsonl    .framelab.lock
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{self, BufRead};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use chrono::{DateTime, Utc};
use framelab_core::analytics::{self, AnalyticsError, FrameDistribution, MonthlySeries, SentimentByFrame};
use framelab_core::annotation::{
    self, Annotation, AnnotationError, AnnotationLog, AnnotationSession, Annotator, AnnotatorProgress, GateDecision,
    IcrReport, Phase,
};
use framelab_core::corpus::{self, CorpusError, IngestReport, KeywordFilterSpec, RowError};
use framelab_core::evaluation::{
    self, AdjudicationItem, AdjudicationQueue, AgreementReport, EvaluationError, HumanLabel, Provenance, ReviewerItem,
    Verdict, VerdictRecord,
};
use framelab_core::inference::{
    self, BackendConfig, CompletionBackend, LabeledHeadline, ModelPrediction, Outcome, ParsedLabel, RunError, RunKey,
    RunManifest, RunOutput, Strategy,
};
use framelab_core::{split, Codebook, Corpus, CorpusManifest, FrameLabel};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::store::{self, DirLock, JsonlLog, QuarantinedLine, StoreError};

/// How a failure should be reported to a client.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    NotFound,
    Conflict,
    Invalid,
    Internal,
}

#[derive(Debug, thiserror::Error)]
pub enum WorkspaceError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Invalid(String),
    #[error("workspace was opened read-only")]
    ReadOnly,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Run(#[from] RunError),
}

impl WorkspaceError {
    pub fn kind(&self) -> ErrorKind {
        use WorkspaceError::*;
        match self {
            NotFound(_) => ErrorKind::NotFound,
            Conflict(_) => ErrorKind::Conflict,
            Invalid(_) | Annotation(_) | Corpus(_) => ErrorKind::Invalid,
            Analytics(AnalyticsError::NoLabels | AnalyticsError::NoSentiment) => ErrorKind::NotFound,
            Analytics(_) => ErrorKind::Invalid,
            Evaluation(EvaluationError::UnknownItem(_)) => ErrorKind::NotFound,
            Evaluation(EvaluationError::DoubleVerdict(_)) => ErrorKind::Conflict,
            Evaluation(_) => ErrorKind::Invalid,
            Run(RunError::Storage(_)) => ErrorKind::Internal,
            Run(_) => ErrorKind::Invalid,
            ReadOnly | Store(_) => ErrorKind::Internal,
        }
    }
}

pub type WsResult<T> = Result<T, WorkspaceError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    /// Load without touching any file; mutations fail.
    ReadOnly,
    /// Take the writer lock, quarantine unreadable log lines.
    ReadWrite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Classification,
    Evaluation,
    Adjudication,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Complete,
    Failed,
}

/// A stored run. Once `status` is complete the record is never rewritten; a
/// later run with the same content key but a different manifest is stored
/// under a suffixed id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub kind: RunKind,
    pub status: RunStatus,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub completed_at: Option<DateTime<Utc>>,
    pub manifest: Value,
}

/// One verdict event in `verdicts.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictEvent {
    pub queue_id: String,
    pub item_id: String,
    pub reviewer_id: String,
    pub verdict: Verdict,
    pub recorded_at: DateTime<Utc>,
}

/// `adjudication/queue.json`: the queue as built, without verdicts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoredQueue {
    queue_id: String,
    created_at: DateTime<Utc>,
    items: Vec<AdjudicationItem>,
}

/// An annotation as submitted by a client. The phase comes from the session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationInput {
    pub session_id: String,
    pub article_id: String,
    pub annotator_id: String,
    pub primary: FrameLabel,
    #[serde(default)]
    pub secondary: Option<FrameLabel>,
    #[serde(default)]
    pub submission_id: Option<String>,
    /// When present it must equal the workbench codebook version.
    #[serde(default)]
    pub codebook_version: Option<String>,
}

#[derive(Debug, Clone)]
pub struct SessionSpec {
    pub id: String,
    pub phase: Phase,
    pub annotators: Vec<String>,
    /// Explicit items; the whole corpus when `None`.
    pub items: Option<Vec<String>>,
    /// Seeded sample of this many items from the candidates.
    pub sample: Option<(usize, u64)>,
    pub icr_threshold: Option<f64>,
    /// Create the session even if the previous phase never passed its gate.
    pub skip_gate_check: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestSummary {
    pub accepted: usize,
    pub rejected: Vec<RowError>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NextItem {
    pub article_id: String,
    pub headline: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReviewerCounts {
    pub reviewed: usize,
    pub agreed: usize,
    pub pending: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdjudicationSummary {
    pub queue_id: String,
    pub items: usize,
    pub judged: usize,
    pub pending: usize,
    pub by_provenance: BTreeMap<String, ProvenanceSummary>,
    /// Agree verdicts over verdicts on model-proposed items.
    pub model_agreement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProvenanceSummary {
    pub items: usize,
    pub judged: usize,
    pub agreed: usize,
}

/// Where report and evaluation labels come from.
#[derive(Debug, Clone, PartialEq)]
pub enum LabelSource {
    /// Current primary labels from production sessions.
    Human,
    /// Parsed predictions of a classification run (latest when `None`).
    Model(Option<String>),
    /// Labels supplied directly.
    Given(Vec<(String, FrameLabel)>),
}

/// `{article_id, label}` rows, as in a labels file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRow {
    pub article_id: String,
    pub label: FrameLabel,
}

pub fn read_label_rows<R: BufRead>(source: R) -> io::Result<Vec<(String, FrameLabel)>> {
    let mut out = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: LabelRow = serde_json::from_str(&line)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("line {}: {e}", i + 1)))?;
        out.push((row.article_id, row.label));
    }
    Ok(out)
}

pub struct Workspace {
    dir: PathBuf,
    codebook: Arc<Codebook>,
    icr_threshold: f64,
    writer_lock: Option<DirLock>,
    corpus: RwLock<Option<Arc<Corpus>>>,
    sessions: Mutex<BTreeMap<String, AnnotationSession>>,
    annotations: Mutex<AnnotationLog>,
    annotation_log: Option<JsonlLog<Annotation>>,
    predictions: Mutex<Vec<ModelPrediction>>,
    prediction_log: Option<JsonlLog<ModelPrediction>>,
    queue: Mutex<Option<(String, AdjudicationQueue)>>,
    verdict_log: Option<JsonlLog<VerdictEvent>>,
    runs: Mutex<BTreeMap<String, RunRecord>>,
    quarantined: Vec<QuarantinedLine>,
}

const ANNOTATIONS: &str = "annotations.jsonl";
const PREDICTIONS: &str = "predictions.jsonl";
const VERDICTS: &str = "verdicts.jsonl";

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().expect("workspace mutex poisoned")
}

fn short_hash(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
        h.update([0]);
    }
    hex::encode(&h.finalize()[..8])
}

fn check_id(kind: &str, id: &str) -> WsResult<()> {
    let ok = !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(WorkspaceError::Invalid(format!("{kind} id {id:?} must be 1-64 characters of [A-Za-z0-9_-]")))
    }
}

impl Workspace {
    pub fn open(dir: &Path, codebook: Codebook, icr_threshold: f64, access: Access) -> WsResult<Workspace> {
        let lock = match access {
            Access::ReadWrite => Some(DirLock::acquire(dir)?),
            Access::ReadOnly => None,
        };
        let mut quarantined = Vec::new();

        let (annotation_log, annotation_records) = load_log::<Annotation>(dir, ANNOTATIONS, access, &mut quarantined)?;
        let (prediction_log, prediction_records) =
            load_log::<ModelPrediction>(dir, PREDICTIONS, access, &mut quarantined)?;
        let (verdict_log, verdict_records) = load_log::<VerdictEvent>(dir, VERDICTS, access, &mut quarantined)?;

        let corpus = load_corpus(dir)?;

        let mut sessions = BTreeMap::new();
        for path in json_files(&dir.join("sessions"))? {
            let s: AnnotationSession = store::read_json(&path)?;
            sessions.insert(s.id.clone(), s);
        }
        let mut runs = BTreeMap::new();
        for path in json_files(&dir.join("runs"))? {
            let r: RunRecord = store::read_json(&path)?;
            runs.insert(r.run_id.clone(), r);
        }

        let queue = match store::read_json_opt::<StoredQueue>(&dir.join("adjudication/queue.json"))? {
            None => None,
            Some(stored) => {
                let mut q = AdjudicationQueue::new(stored.items);
                for (n, e) in verdict_records.iter().enumerate() {
                    if e.queue_id != stored.queue_id {
                        continue;
                    }
                    if let Err(err) = q.record_verdict(&e.item_id, &e.reviewer_id, e.verdict, e.recorded_at) {
                        tracing::warn!(line = n + 1, %err, "verdict event cannot be replayed");
                        quarantined.push(QuarantinedLine {
                            log: "verdicts".into(),
                            line: n + 1,
                            content: serde_json::to_string(e).unwrap_or_default(),
                            error: err.to_string(),
                        });
                    }
                }
                Some((stored.queue_id, q))
            }
        };

        for q in &quarantined {
            tracing::warn!(log = %q.log, line = q.line, error = %q.error, "quarantined log line");
        }

        Ok(Workspace {
            dir: dir.to_path_buf(),
            codebook: Arc::new(codebook),
            icr_threshold,
            writer_lock: lock,
            corpus: RwLock::new(corpus.map(Arc::new)),
            sessions: Mutex::new(sessions),
            annotations: Mutex::new(AnnotationLog::from_records(annotation_records)),
            annotation_log,
            predictions: Mutex::new(prediction_records),
            prediction_log,
            queue: Mutex::new(queue),
            verdict_log,
            runs: Mutex::new(runs),
            quarantined,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn codebook_version(&self) -> &str {
        self.codebook.version()
    }

    /// Lines that could not be loaded when the workspace was opened.
    pub fn quarantined(&self) -> &[QuarantinedLine] {
        &self.quarantined
    }

    // ---- corpus ---------------------------------------------------------

    pub fn corpus(&self) -> WsResult<Arc<Corpus>> {
        self.corpus
            .read()
            .expect("corpus lock poisoned")
            .clone()
            .ok_or_else(|| WorkspaceError::NotFound("no corpus has been ingested".into()))
    }

    pub fn ingest<R: BufRead>(&self, manifest: CorpusManifest, source: R, replace: bool) -> WsResult<IngestSummary> {
        self.require_writable()?;
        if self.corpus().is_ok() {
            if !replace {
                return Err(WorkspaceError::Conflict(
                    "a corpus is already ingested; pass --replace to overwrite".into(),
                ));
            }
            self.require_no_sessions("replace the corpus")?;
        }
        let IngestReport { corpus, rejected } = corpus::ingest_corpus(source, &manifest)?;
        if corpus.is_empty() {
            return Err(CorpusError::Empty.into());
        }
        self.save_corpus(&corpus)?;
        let accepted = corpus.len();
        *self.corpus.write().expect("corpus lock poisoned") = Some(Arc::new(corpus));
        Ok(IngestSummary { accepted, rejected })
    }

    /// Keep only keyword matches. Returns (before, after).
    pub fn filter(&self, spec: &KeywordFilterSpec) -> WsResult<(usize, usize)> {
        self.require_writable()?;
        self.require_no_sessions("filter the corpus")?;
        let current = self.corpus()?;
        let filtered = corpus::filter_keywords(&current, spec);
        if filtered.is_empty() {
            return Err(WorkspaceError::Invalid("no article matches the keywords".into()));
        }
        self.save_corpus(&filtered)?;
        let counts = (current.len(), filtered.len());
        *self.corpus.write().expect("corpus lock poisoned") = Some(Arc::new(filtered));
        Ok(counts)
    }

    fn save_corpus(&self, corpus: &Corpus) -> WsResult<()> {
        let dir = self.dir.join("corpus");
        store::write_atomic(&dir.join("articles.jsonl"), corpus.to_jsonl().as_bytes())?;
        store::write_json(&dir.join("manifest.json"), corpus.manifest())?;
        Ok(())
    }

    fn require_no_sessions(&self, what: &str) -> WsResult<()> {
        if lock(&self.sessions).is_empty() {
            Ok(())
        } else {
            Err(WorkspaceError::Conflict(format!("cannot {what}: annotation sessions already refer to it")))
        }
    }

    fn require_writable(&self) -> WsResult<()> {
        if self.writer_lock.is_some() {
            Ok(())
        } else {
            Err(WorkspaceError::ReadOnly)
        }
    }

    // ---- sessions -------------------------------------------------------

    pub fn session(&self, id: &str) -> WsResult<AnnotationSession> {
        lock(&self.sessions).get(id).cloned().ok_or_else(|| WorkspaceError::NotFound(format!("unknown session {id:?}")))
    }

    pub fn sessions(&self) -> Vec<AnnotationSession> {
        lock(&self.sessions).values().cloned().collect()
    }

    pub fn create_session(&self, spec: SessionSpec) -> WsResult<AnnotationSession> {
        self.require_writable()?;
        check_id("session", &spec.id)?;
        let corpus = self.corpus()?;
        let mut sessions = lock(&self.sessions);
        if sessions.contains_key(&spec.id) {
            return Err(WorkspaceError::Conflict(format!("session {:?} already exists", spec.id)));
        }
        if !spec.skip_gate_check {
            if let Some(prev) = previous_phase(spec.phase) {
                let passed = sessions.values().any(|s| {
                    s.phase == prev && s.gate_history.last().is_some_and(|g| g.decision == GateDecision::Advance)
                });
                if !passed {
                    return Err(WorkspaceError::Invalid(format!(
                        "no {prev:?} session has passed its reliability gate; a {:?} session cannot start yet",
                        spec.phase
                    )));
                }
            }
        }
        let mut items: Vec<String> = match spec.items {
            Some(items) => {
                for i in &items {
                    if corpus.get(i).is_none() {
                        return Err(WorkspaceError::Invalid(format!("article {i:?} is not in the corpus")));
                    }
                }
                items
            }
            None => corpus.ids().map(str::to_string).collect(),
        };
        if let Some((n, seed)) = spec.sample {
            if n > items.len() {
                return Err(WorkspaceError::Invalid(format!("cannot sample {n} of {} items", items.len())));
            }
            split::seeded_shuffle(&mut items, seed);
            items.truncate(n);
            // keep corpus order inside the sample
            items.sort_by_key(|i| corpus.position(i));
        }
        let session = AnnotationSession::create(
            spec.id,
            spec.phase,
            spec.annotators.into_iter().map(Annotator::new).collect(),
            items,
            self.codebook.version(),
            spec.icr_threshold.unwrap_or(self.icr_threshold),
        )?;
        for a in &session.annotators {
            check_id("annotator", &a.id)?;
        }
        self.save_session(&session)?;
        sessions.insert(session.id.clone(), session.clone());
        Ok(session)
    }

    pub fn assign(&self, session_id: &str, seed: u64, reassign: bool) -> WsResult<AnnotationSession> {
        self.require_writable()?;
        let mut sessions = lock(&self.sessions);
        let session = sessions
            .get_mut(session_id)
            .ok_or_else(|| WorkspaceError::NotFound(format!("unknown session {session_id:?}")))?;
        let mut updated = session.clone();
        updated.assign_items(seed, reassign)?;
        self.save_session(&updated)?;
        *session = updated.clone();
        Ok(updated)
    }

    fn save_session(&self, s: &AnnotationSession) -> WsResult<()> {
        store::write_json(&self.dir.join("sessions").join(format!("{}.json", s.id)), s)?;
        Ok(())
    }

    /// Validate and append an annotation. Returns the stored record and
    /// whether it is new; a repeated `submission_id` returns the original.
    pub fn record_annotation(&self, input: AnnotationInput) -> WsResult<(Annotation, bool)> {
        self.require_writable()?;
        if let Some(v) = &input.codebook_version {
            if v != self.codebook.version() {
                return Err(WorkspaceError::Invalid(format!(
                    "annotation made against codebook {v}, workbench uses {}",
                    self.codebook.version()
                )));
            }
        }
        let sessions = lock(&self.sessions);
        let session = sessions
            .get(&input.session_id)
            .ok_or_else(|| WorkspaceError::NotFound(format!("unknown session {:?}", input.session_id)))?;
        if session.codebook_version != self.codebook.version() {
            return Err(WorkspaceError::Invalid(format!(
                "session {} uses codebook {}, workbench uses {}",
                session.id,
                session.codebook_version,
                self.codebook.version()
            )));
        }
        if !session.annotators.iter().any(|a| a.id == input.annotator_id) {
            return Err(WorkspaceError::NotFound(format!(
                "annotator {:?} is not part of session {:?}",
                input.annotator_id, session.id
            )));
        }
        let mut log = lock(&self.annotations);
        if let Some(sid) = &input.submission_id {
            if let Some(prev) = log.find_submission(sid) {
                let same = prev.session_id == input.session_id
                    && prev.article_id == input.article_id
                    && prev.annotator_id == input.annotator_id
                    && prev.primary == input.primary
                    && prev.secondary == input.secondary;
                return if same {
                    Ok((prev.clone(), false))
                } else {
                    Err(WorkspaceError::Conflict(format!(
                        "submission id {sid:?} was already used for a different annotation"
                    )))
                };
            }
        }
        let record = Annotation {
            session_id: input.session_id,
            article_id: input.article_id,
            annotator_id: input.annotator_id,
            primary: input.primary,
            secondary: input.secondary,
            phase: session.phase,
            recorded_at: Utc::now(),
            submission_id: input.submission_id,
        };
        annotation::validate_annotation(session, &record)?;
        self.annotation_log.as_ref().ok_or(WorkspaceError::ReadOnly)?.append(&record)?;
        log.push(record.clone());
        Ok((record, true))
    }

    pub fn annotation_history(&self) -> Vec<Annotation> {
        lock(&self.annotations).history().to_vec()
    }

    /// Current annotations of a session (latest revision per item and annotator).
    pub fn current_annotations(&self, session_id: &str) -> Vec<Annotation> {
        lock(&self.annotations).current_for_session(session_id).into_iter().cloned().collect()
    }

    pub fn next_item(&self, session_id: &str, annotator_id: &str) -> WsResult<(Option<NextItem>, AnnotatorProgress)> {
        let session = self.session(session_id)?;
        if !session.annotators.iter().any(|a| a.id == annotator_id) {
            return Err(WorkspaceError::NotFound(format!(
                "annotator {annotator_id:?} is not part of session {session_id:?}"
            )));
        }
        let corpus = self.corpus()?;
        let log = lock(&self.annotations);
        let next = annotation::next_unlabeled(&session, &log, annotator_id).map(|id| NextItem {
            article_id: id.to_string(),
            headline: corpus.get(id).map(|a| a.headline.clone()).unwrap_or_default(),
        });
        let progress = annotation::progress(&session, &log)
            .into_iter()
            .find(|p| p.annotator_id == annotator_id)
            .expect("annotator is in the session");
        Ok((next, progress))
    }

    pub fn progress(&self, session_id: &str) -> WsResult<Vec<AnnotatorProgress>> {
        let session = self.session(session_id)?;
        Ok(annotation::progress(&session, &lock(&self.annotations)))
    }

    fn pair(session: &AnnotationSession, a: Option<&str>, b: Option<&str>) -> WsResult<(String, String)> {
        let ids: Vec<&str> = session.annotators.iter().map(|x| x.id.as_str()).collect();
        let a = a.or(ids.first().copied());
        let b = b.or(ids.iter().copied().find(|x| Some(*x) != a));
        match (a, b) {
            (Some(a), Some(b)) if a != b => {
                for x in [a, b] {
                    if !ids.contains(&x) {
                        return Err(WorkspaceError::NotFound(format!("annotator {x:?} is not part of session")));
                    }
                }
                Ok((a.to_string(), b.to_string()))
            }
            _ => Err(WorkspaceError::Invalid("reliability needs two distinct annotators".into())),
        }
    }

    pub fn icr(&self, session_id: &str, a: Option<&str>, b: Option<&str>) -> WsResult<IcrReport> {
        let session = self.session(session_id)?;
        let (a, b) = Self::pair(&session, a, b)?;
        Ok(annotation::compute_icr(&session, &lock(&self.annotations), &a, &b)?)
    }

    /// Compute reliability and record the gate decision in the session.
    pub fn gate(&self, session_id: &str, a: Option<&str>, b: Option<&str>) -> WsResult<(GateDecision, IcrReport)> {
        self.require_writable()?;
        let report = self.icr(session_id, a, b)?;
        let mut sessions = lock(&self.sessions);
        let session = sessions
            .get_mut(session_id)
            .ok_or_else(|| WorkspaceError::NotFound(format!("unknown session {session_id:?}")))?;
        let mut updated = session.clone();
        let decision = updated.phase_gate(&report)?;
        self.save_session(&updated)?;
        *session = updated;
        Ok((decision, report))
    }

    // ---- classification -------------------------------------------------

    /// Classify the corpus, persisting each prediction as it arrives.
    pub async fn classify(
        &self,
        backend: &dyn CompletionBackend,
        config: &BackendConfig,
        strategy: Strategy,
    ) -> WsResult<(RunRecord, RunOutput)> {
        self.require_writable()?;
        let log = self.prediction_log.as_ref().ok_or(WorkspaceError::ReadOnly)?;
        let corpus = self.corpus()?;
        let existing = lock(&self.predictions).clone();
        let key = RunKey {
            codebook_version: self.codebook.version().to_string(),
            model_name: config.model_name.clone(),
            strategy,
        };
        let run_id = inference::run_id(&key, &corpus);
        let created_at = Utc::now();
        {
            let runs = lock(&self.runs);
            let finished = runs.get(&run_id).is_some_and(|r| r.status == RunStatus::Complete);
            drop(runs);
            if !finished {
                self.put_run(RunRecord {
                    run_id: run_id.clone(),
                    kind: RunKind::Classification,
                    status: RunStatus::Running,
                    created_at,
                    completed_at: None,
                    manifest: serde_json::to_value(&key).expect("key serializes"),
                })?;
            }
        }

        let result =
            inference::run_classification(&corpus, &self.codebook, backend, config, strategy, &existing, |outcome| {
                if let Outcome::Prediction(p) = outcome {
                    log.append(p).map_err(|e| io::Error::other(e.to_string()))?;
                    lock(&self.predictions).push(p.clone());
                }
                Ok(())
            })
            .await;

        match result {
            Ok(output) => {
                let record = self.complete_run(RunKind::Classification, &run_id, created_at, &output.manifest)?;
                Ok((record, output))
            }
            Err(e) => {
                let mut runs = lock(&self.runs);
                if let Some(r) = runs.get_mut(&run_id).filter(|r| r.status == RunStatus::Running) {
                    r.status = RunStatus::Failed;
                    let r = r.clone();
                    drop(runs);
                    self.put_run(r)?;
                }
                Err(e.into())
            }
        }
    }

    fn put_run(&self, record: RunRecord) -> WsResult<()> {
        store::write_json(&self.dir.join("runs").join(format!("{}.json", record.run_id)), &record)?;
        lock(&self.runs).insert(record.run_id.clone(), record);
        Ok(())
    }

    /// Store a completed run under `base_id`, or reuse an identical complete
    /// record. A differing complete record is never overwritten.
    fn complete_run<M: Serialize>(
        &self,
        kind: RunKind,
        base_id: &str,
        created_at: DateTime<Utc>,
        manifest: &M,
    ) -> WsResult<RunRecord> {
        let manifest = serde_json::to_value(manifest).expect("manifest serializes");
        let mut n = 1;
        loop {
            let id = if n == 1 { base_id.to_string() } else { format!("{base_id}-{n}") };
            let existing = lock(&self.runs).get(&id).cloned();
            match existing {
                Some(r) if r.status == RunStatus::Complete && r.manifest == manifest => return Ok(r),
                Some(r) if r.status == RunStatus::Complete => n += 1,
                _ => {
                    let record = RunRecord {
                        run_id: id,
                        kind,
                        status: RunStatus::Complete,
                        created_at,
                        completed_at: Some(Utc::now()),
                        manifest,
                    };
                    self.put_run(record.clone())?;
                    return Ok(record);
                }
            }
        }
    }

    pub fn runs(&self) -> Vec<RunRecord> {
        lock(&self.runs).values().cloned().collect()
    }

    pub fn run(&self, run_id: &str) -> WsResult<RunRecord> {
        lock(&self.runs).get(run_id).cloned().ok_or_else(|| WorkspaceError::NotFound(format!("unknown run {run_id:?}")))
    }

    /// The requested classification run, or the most recently completed one.
    pub fn classification_run(&self, run_id: Option<&str>) -> WsResult<(RunRecord, RunManifest)> {
        let record = match run_id {
            Some(id) => self.run(id)?,
            None => lock(&self.runs)
                .values()
                .filter(|r| r.kind == RunKind::Classification && r.status == RunStatus::Complete)
                .max_by_key(|r| (r.completed_at, r.run_id.clone()))
                .cloned()
                .ok_or_else(|| WorkspaceError::NotFound("no completed classification run".into()))?,
        };
        if record.kind != RunKind::Classification || record.status != RunStatus::Complete {
            return Err(WorkspaceError::Invalid(format!(
                "run {} is not a completed classification run",
                record.run_id
            )));
        }
        let manifest: RunManifest = serde_json::from_value(record.manifest.clone())
            .map_err(|e| WorkspaceError::Invalid(format!("run {} has an unreadable manifest: {e}", record.run_id)))?;
        Ok((record, manifest))
    }

    /// Latest stored prediction per corpus article for a run, corpus order.
    pub fn run_predictions(&self, manifest: &RunManifest) -> WsResult<Vec<ModelPrediction>> {
        let corpus = self.corpus()?;
        let key = RunKey {
            codebook_version: manifest.codebook_version.clone(),
            model_name: manifest.model_name.clone(),
            strategy: manifest.strategy,
        };
        let mut latest: HashMap<&str, &ModelPrediction> = HashMap::new();
        let all = lock(&self.predictions);
        for p in all.iter() {
            if p.run_key() == key && corpus.get(&p.article_id).is_some() {
                latest.insert(p.article_id.as_str(), p);
            }
        }
        Ok(corpus.ids().filter_map(|id| latest.get(id).map(|p| (*p).clone())).collect())
    }

    pub fn model_labels(&self, run_id: Option<&str>) -> WsResult<Vec<(String, ParsedLabel)>> {
        let (_, manifest) = self.classification_run(run_id)?;
        Ok(self.run_predictions(&manifest)?.into_iter().map(|p| (p.article_id, p.parsed)).collect())
    }

    pub fn prediction_count(&self) -> usize {
        lock(&self.predictions).len()
    }

    // ---- human labels ---------------------------------------------------

    /// Current primary labels of production sessions, in corpus order. An
    /// article labeled by more than one production annotator is an error.
    pub fn human_labels(&self) -> WsResult<Vec<HumanLabel>> {
        let corpus = self.corpus()?;
        let sessions = lock(&self.sessions);
        let log = lock(&self.annotations);
        let mut by_article: HashMap<String, HumanLabel> = HashMap::new();
        for s in sessions.values().filter(|s| s.phase == Phase::Production) {
            for a in log.current_for_session(&s.id) {
                let label = HumanLabel {
                    article_id: a.article_id.clone(),
                    annotator_id: a.annotator_id.clone(),
                    label: a.primary,
                };
                if let Some(prev) = by_article.insert(a.article_id.clone(), label) {
                    return Err(WorkspaceError::Invalid(format!(
                        "article {:?} has production labels from both {:?} and {:?}",
                        a.article_id, prev.annotator_id, a.annotator_id
                    )));
                }
            }
        }
        let mut out: Vec<HumanLabel> = by_article.into_values().collect();
        out.sort_by_key(|h| corpus.position(&h.article_id));
        Ok(out)
    }

    /// Frame labels from `source`. Unparseable predictions are left out.
    pub fn labels(&self, source: &LabelSource) -> WsResult<Vec<(String, FrameLabel)>> {
        Ok(match source {
            LabelSource::Human => self.human_labels()?.into_iter().map(|h| (h.article_id, h.label)).collect(),
            LabelSource::Model(run) => self
                .model_labels(run.as_deref())?
                .into_iter()
                .filter_map(|(id, p)| p.frame().map(|f| (id, f)))
                .collect(),
            LabelSource::Given(rows) => rows.clone(),
        })
    }

    pub fn labeled_headlines(&self, source: &LabelSource) -> WsResult<Vec<LabeledHeadline>> {
        let corpus = self.corpus()?;
        self.labels(source)?
            .into_iter()
            .map(|(id, label)| {
                let article = corpus
                    .get(&id)
                    .ok_or_else(|| WorkspaceError::Invalid(format!("labeled article {id:?} is not in the corpus")))?;
                Ok(LabeledHeadline { article_id: id, headline: article.headline.clone(), label })
            })
            .collect()
    }

    // ---- reports --------------------------------------------------------

    pub fn report_frames(&self, source: &LabelSource) -> WsResult<FrameDistribution> {
        Ok(analytics::frames_by_country(&self.labels(source)?, &*self.corpus()?, false)?)
    }

    pub fn report_months(&self, source: &LabelSource) -> WsResult<MonthlySeries> {
        Ok(analytics::frames_by_month(&self.labels(source)?, &*self.corpus()?)?)
    }

    pub fn report_sentiment(&self, source: &LabelSource) -> WsResult<SentimentByFrame> {
        Ok(analytics::sentiment_by_frame(&self.labels(source)?, &*self.corpus()?)?)
    }

    // ---- evaluation -----------------------------------------------------

    /// Human–model agreement against a classification run; stored as an
    /// evaluation run.
    pub fn agreement(&self, run_id: Option<&str>) -> WsResult<(RunRecord, AgreementReport)> {
        let (record, _) = self.classification_run(run_id)?;
        let human = self.human_labels()?;
        let preds = self.model_labels(Some(&record.run_id))?;
        let report = evaluation::human_model_agreement(&*self.corpus()?, &human, &preds)?;
        let manifest = serde_json::json!({
            "measure": "human_model_agreement",
            "classification_run": record.run_id,
            "n_overlap": report.n_overlap,
            "n_agree": report.n_agree,
            "agreement": report.agreement,
        });
        let stored = self.store_derived_run(RunKind::Evaluation, "eval", &manifest)?;
        Ok((stored, report))
    }

    fn store_derived_run(&self, kind: RunKind, prefix: &str, manifest: &Value) -> WsResult<RunRecord> {
        let id = format!("{prefix}-{}", short_hash(&[manifest.to_string().as_bytes()]));
        if self.writer_lock.is_none() {
            // read-only callers still get the record they would have stored
            return Ok(RunRecord {
                run_id: id,
                kind,
                status: RunStatus::Complete,
                created_at: Utc::now(),
                completed_at: Some(Utc::now()),
                manifest: manifest.clone(),
            });
        }
        self.complete_run(kind, &id, Utc::now(), manifest)
    }

    /// Queue the human–model disagreements of a run for blind review.
    pub fn build_adjudication(
        &self,
        run_id: Option<&str>,
        control_random_rate: f64,
        seed: u64,
        replace: bool,
    ) -> WsResult<(RunRecord, Vec<AdjudicationItem>)> {
        self.require_writable()?;
        if let Some((_, q)) = lock(&self.queue).as_ref() {
            if !replace {
                return Err(WorkspaceError::Conflict(format!(
                    "an adjudication queue exists ({} items, {} pending); pass --replace to build a new one",
                    q.items.len(),
                    q.pending()
                )));
            }
        }
        let (agreement_run, report) = self.agreement(run_id)?;
        let items =
            evaluation::build_adjudication_queue(&*self.corpus()?, &report.disagreements, control_random_rate, seed)?;
        let manifest = serde_json::json!({
            "classification_run": agreement_run.manifest.get("classification_run"),
            "agreement_run": agreement_run.run_id,
            "control_random_rate": control_random_rate,
            "seed": seed,
            "n_items": items.len(),
            "item_ids": items.iter().map(|i| i.item_id.as_str()).collect::<Vec<_>>(),
        });
        let record = self.store_derived_run(RunKind::Adjudication, "queue", &manifest)?;
        // a rebuilt queue gets a fresh id so older verdict events never apply to it
        let queue_id = format!("{}-{}", record.run_id, short_hash(&[Utc::now().to_rfc3339().as_bytes()]));
        let stored = StoredQueue { queue_id: queue_id.clone(), created_at: Utc::now(), items: items.clone() };
        store::write_json(&self.dir.join("adjudication/queue.json"), &stored)?;
        *lock(&self.queue) = Some((queue_id, AdjudicationQueue::new(items.clone())));
        Ok((record, items))
    }

    pub fn next_adjudication(&self, reviewer_id: &str) -> WsResult<(Option<ReviewerItem>, ReviewerCounts)> {
        let guard = lock(&self.queue);
        let (_, q) = guard.as_ref().ok_or_else(|| WorkspaceError::NotFound("no adjudication queue".into()))?;
        let mine = q.items.iter().filter(|i| i.reviewer_id.as_deref().is_none_or(|r| r == reviewer_id));
        let mut counts = ReviewerCounts { reviewed: 0, agreed: 0, pending: 0 };
        for i in mine {
            match &i.verdict {
                Some(v) if v.reviewer_id == reviewer_id => {
                    counts.reviewed += 1;
                    counts.agreed += (v.verdict == Verdict::Agree) as usize;
                }
                Some(_) => {}
                None => counts.pending += 1,
            }
        }
        Ok((q.next_for(reviewer_id), counts))
    }

    pub fn record_verdict(&self, item_id: &str, reviewer_id: &str, verdict: Verdict) -> WsResult<VerdictRecord> {
        self.require_writable()?;
        let log = self.verdict_log.as_ref().ok_or(WorkspaceError::ReadOnly)?;
        let mut guard = lock(&self.queue);
        let (queue_id, q) = guard.as_mut().ok_or_else(|| WorkspaceError::NotFound("no adjudication queue".into()))?;
        // validate on a copy so a failed append leaves memory untouched
        let at = Utc::now();
        let mut trial = q.clone();
        trial.record_verdict(item_id, reviewer_id, verdict, at)?;
        log.append(&VerdictEvent {
            queue_id: queue_id.clone(),
            item_id: item_id.to_string(),
            reviewer_id: reviewer_id.to_string(),
            verdict,
            recorded_at: at,
        })?;
        let item = q.record_verdict(item_id, reviewer_id, verdict, at)?;
        Ok(item.verdict.clone().expect("verdict just recorded"))
    }

    pub fn adjudication_items(&self) -> WsResult<Vec<AdjudicationItem>> {
        let guard = lock(&self.queue);
        let (_, q) = guard.as_ref().ok_or_else(|| WorkspaceError::NotFound("no adjudication queue".into()))?;
        Ok(q.items.clone())
    }

    /// Verdict counts per provenance. Server-side only.
    pub fn adjudication_summary(&self) -> WsResult<AdjudicationSummary> {
        let guard = lock(&self.queue);
        let (queue_id, q) = guard.as_ref().ok_or_else(|| WorkspaceError::NotFound("no adjudication queue".into()))?;
        let mut by_provenance: BTreeMap<String, ProvenanceSummary> = BTreeMap::new();
        for i in &q.items {
            let key = serde_json::to_value(i.provenance).expect("provenance serializes");
            let e = by_provenance.entry(key.as_str().unwrap_or_default().to_string()).or_insert(ProvenanceSummary {
                items: 0,
                judged: 0,
                agreed: 0,
            });
            e.items += 1;
            if let Some(v) = &i.verdict {
                e.judged += 1;
                e.agreed += (v.verdict == Verdict::Agree) as usize;
            }
        }
        let model_agreement = evaluation::adjudicated_agreement_rate(&q.items, &[Provenance::Model]).ok();
        Ok(AdjudicationSummary {
            queue_id: queue_id.clone(),
            items: q.items.len(),
            judged: q.items.len() - q.pending(),
            pending: q.pending(),
            by_provenance,
            model_agreement,
        })
    }
}

fn previous_phase(phase: Phase) -> Option<Phase> {
    [Phase::Training1, Phase::Training2, Phase::Training3, Phase::Production]
        .into_iter()
        .find(|p| p.next() == Some(phase))
}

type LoadedLog<T> = (Option<JsonlLog<T>>, Vec<T>);

fn load_log<T: Serialize + serde::de::DeserializeOwned>(
    dir: &Path,
    name: &str,
    access: Access,
    quarantined: &mut Vec<QuarantinedLine>,
) -> WsResult<LoadedLog<T>> {
    let path = dir.join(name);
    match access {
        Access::ReadWrite => {
            let (log, records, bad) = JsonlLog::open(&path, &dir.join("quarantine"))?;
            quarantined.extend(bad);
            Ok((Some(log), records))
        }
        Access::ReadOnly => {
            let (records, bad) = store::read_log(&path)?;
            quarantined.extend(bad);
            Ok((None, records))
        }
    }
}

fn load_corpus(dir: &Path) -> WsResult<Option<Corpus>> {
    let manifest_path = dir.join("corpus/manifest.json");
    let Some(manifest) = store::read_json_opt::<CorpusManifest>(&manifest_path)? else {
        return Ok(None);
    };
    let articles_path = dir.join("corpus/articles.jsonl");
    let (articles, bad) = store::read_log(&articles_path)?;
    if let Some(b) = bad.first() {
        return Err(WorkspaceError::Invalid(format!(
            "{} line {}: {} (the ingested corpus is damaged; ingest again with --replace)",
            articles_path.display(),
            b.line,
            b.error
        )));
    }
    Ok(Some(Corpus::new(articles, manifest)?))
}

fn json_files(dir: &Path) -> WsResult<Vec<PathBuf>> {
    let entries = match fs::read_dir(dir) {
        Ok(e) => e,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(StoreError::Io { path: dir.into(), source: e }.into()),
    };
    let mut out = Vec::new();
    for e in entries {
        let e = e.map_err(|source| StoreError::Io { path: dir.into(), source })?;
        let p = e.path();
        let is_json = p.extension().is_some_and(|x| x == "json");
        let hidden = p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with('.'));
        if is_json && !hidden {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}
