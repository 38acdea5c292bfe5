//! Human annotation protocol: phase-gated sessions, label capture with an
//! optional secondary frame, intercoder reliability and disagreement review.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::frame::FrameLabel;
use crate::split;

/// Default kappa required to leave a training phase.
pub const DEFAULT_ICR_THRESHOLD: f64 = 0.65;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Training1,
    Training2,
    Training3,
    Production,
}

impl Phase {
    pub fn is_training(self) -> bool {
        self != Phase::Production
    }

    pub fn next(self) -> Option<Phase> {
        match self {
            Phase::Training1 => Some(Phase::Training2),
            Phase::Training2 => Some(Phase::Training3),
            Phase::Training3 => Some(Phase::Production),
            Phase::Production => None,
        }
    }
}

impl std::str::FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', ' '], "_").as_str() {
            "training1" | "training_1" => Ok(Phase::Training1),
            "training2" | "training_2" => Ok(Phase::Training2),
            "training3" | "training_3" => Ok(Phase::Training3),
            "production" => Ok(Phase::Production),
            _ => Err(format!("unknown phase {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotator {
    pub id: String,
    pub display_name: String,
}

impl Annotator {
    pub fn new(id: impl Into<String>) -> Self {
        let id = id.into();
        Annotator { display_name: id.clone(), id }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AnnotationError {
    #[error("a session needs at least one annotator")]
    NoAnnotators,
    #[error("training phases need at least two annotators, got {0}")]
    TooFewAnnotators(usize),
    #[error("duplicate annotator id {0:?}")]
    DuplicateAnnotator(String),
    #[error("session has no items")]
    NoItems,
    #[error("duplicate item id {0:?}")]
    DuplicateItem(String),
    #[error("icr threshold {0} outside [0, 1]")]
    Threshold(f64),
    #[error("operation requires a production session, session is in {0:?}")]
    NotProduction(Phase),
    #[error("operation requires a training session")]
    NotTraining,
    #[error("items are already assigned; pass reassign to redo the split")]
    AlreadyAssigned,
    #[error("annotation is for session {found:?}, expected {expected:?}")]
    WrongSession { expected: String, found: String },
    #[error("annotation phase {found:?} does not match session phase {expected:?}")]
    WrongPhase { expected: Phase, found: Phase },
    #[error("annotator {annotator:?} is not assigned article {article:?}")]
    NotAssigned { annotator: String, article: String },
    #[error("secondary frame must differ from primary ({0})")]
    SecondaryEqualsPrimary(FrameLabel),
    #[error("annotators {0:?} and {1:?} have no doubly-annotated items")]
    NoOverlap(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateDecision {
    Advance,
    Repeat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateRecord {
    pub phase: Phase,
    pub threshold: f64,
    pub decision: GateDecision,
    pub report: IcrReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSession {
    pub id: String,
    pub phase: Phase,
    pub codebook_version: String,
    pub annotators: Vec<Annotator>,
    pub item_ids: Vec<String>,
    /// Annotator id → assigned item ids. Identical lists in training phases,
    /// a partition of `item_ids` in production once split.
    pub assignment: BTreeMap<String, Vec<String>>,
    pub icr_threshold: f64,
    #[serde(default)]
    pub gate_history: Vec<GateRecord>,
}

impl AnnotationSession {
    pub fn create(
        id: impl Into<String>,
        phase: Phase,
        annotators: Vec<Annotator>,
        item_ids: Vec<String>,
        codebook_version: impl Into<String>,
        icr_threshold: f64,
    ) -> Result<AnnotationSession, AnnotationError> {
        if annotators.is_empty() {
            return Err(AnnotationError::NoAnnotators);
        }
        if phase.is_training() && annotators.len() < 2 {
            return Err(AnnotationError::TooFewAnnotators(annotators.len()));
        }
        let mut seen = BTreeSet::new();
        for a in &annotators {
            if !seen.insert(a.id.as_str()) {
                return Err(AnnotationError::DuplicateAnnotator(a.id.clone()));
            }
        }
        if item_ids.is_empty() {
            return Err(AnnotationError::NoItems);
        }
        let mut seen = BTreeSet::new();
        for i in &item_ids {
            if !seen.insert(i.as_str()) {
                return Err(AnnotationError::DuplicateItem(i.clone()));
            }
        }
        if !(0.0..=1.0).contains(&icr_threshold) {
            return Err(AnnotationError::Threshold(icr_threshold));
        }
        let assignment = if phase.is_training() {
            annotators.iter().map(|a| (a.id.clone(), item_ids.clone())).collect()
        } else {
            BTreeMap::new()
        };
        Ok(AnnotationSession {
            id: id.into(),
            phase,
            codebook_version: codebook_version.into(),
            annotators,
            item_ids,
            assignment,
            icr_threshold,
            gate_history: Vec::new(),
        })
    }

    /// Seeded shuffle of the items, then a contiguous split over annotators
    /// in session order (larger parts first).
    pub fn assign_items(&mut self, seed: u64, reassign: bool) -> Result<(), AnnotationError> {
        if self.phase != Phase::Production {
            return Err(AnnotationError::NotProduction(self.phase));
        }
        if !self.assignment.is_empty() && !reassign {
            return Err(AnnotationError::AlreadyAssigned);
        }
        let parts = split::shuffled_split(&self.item_ids, self.annotators.len(), seed);
        self.assignment = self.annotators.iter().zip(parts).map(|(a, items)| (a.id.clone(), items)).collect();
        Ok(())
    }

    pub fn is_assigned(&self, annotator_id: &str, article_id: &str) -> bool {
        self.assignment.get(annotator_id).is_some_and(|items| items.iter().any(|i| i == article_id))
    }

    pub fn assigned_items(&self, annotator_id: &str) -> &[String] {
        self.assignment.get(annotator_id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Decide whether annotators may leave the current training phase. The
    /// decision is appended to the session's gate history.
    pub fn phase_gate(&mut self, report: &IcrReport) -> Result<GateDecision, AnnotationError> {
        if !self.phase.is_training() {
            return Err(AnnotationError::NotTraining);
        }
        let decision = gate_decision(report.kappa, self.icr_threshold);
        self.gate_history.push(GateRecord {
            phase: self.phase,
            threshold: self.icr_threshold,
            decision,
            report: report.clone(),
        });
        Ok(decision)
    }
}

/// Advance iff kappa reaches the threshold (inclusive).
pub fn gate_decision(kappa: f64, threshold: f64) -> GateDecision {
    if kappa >= threshold {
        GateDecision::Advance
    } else {
        GateDecision::Repeat
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub session_id: String,
    pub article_id: String,
    pub annotator_id: String,
    pub primary: FrameLabel,
    #[serde(default)]
    pub secondary: Option<FrameLabel>,
    pub phase: Phase,
    pub recorded_at: DateTime<Utc>,
    /// Client-generated id that makes resubmission idempotent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub submission_id: Option<String>,
}

impl Annotation {
    fn key(&self) -> (String, String, Phase) {
        (self.article_id.clone(), self.annotator_id.clone(), self.phase)
    }
}

/// Check an annotation against the session before it is stored.
pub fn validate_annotation(session: &AnnotationSession, a: &Annotation) -> Result<(), AnnotationError> {
    if a.session_id != session.id {
        return Err(AnnotationError::WrongSession { expected: session.id.clone(), found: a.session_id.clone() });
    }
    if a.phase != session.phase {
        return Err(AnnotationError::WrongPhase { expected: session.phase, found: a.phase });
    }
    if a.secondary == Some(a.primary) {
        return Err(AnnotationError::SecondaryEqualsPrimary(a.primary));
    }
    if !session.is_assigned(&a.annotator_id, &a.article_id) {
        return Err(AnnotationError::NotAssigned { annotator: a.annotator_id.clone(), article: a.article_id.clone() });
    }
    Ok(())
}

/// Append-only annotation history with a latest-wins current view keyed by
/// (article, annotator, phase).
#[derive(Debug, Clone, Default)]
pub struct AnnotationLog {
    history: Vec<Annotation>,
    current: HashMap<(String, String, Phase), usize>,
}

impl AnnotationLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rebuild from stored records in append order.
    pub fn from_records(records: impl IntoIterator<Item = Annotation>) -> Self {
        let mut log = Self::new();
        for r in records {
            log.push(r);
        }
        log
    }

    /// Append without validation. Used when replaying the persisted log.
    pub fn push(&mut self, a: Annotation) {
        self.current.insert(a.key(), self.history.len());
        self.history.push(a);
    }

    /// Validate against the session and append.
    pub fn record(&mut self, session: &AnnotationSession, a: Annotation) -> Result<&Annotation, AnnotationError> {
        validate_annotation(session, &a)?;
        self.push(a);
        Ok(self.history.last().expect("just pushed"))
    }

    pub fn history(&self) -> &[Annotation] {
        &self.history
    }

    /// Every record for one (article, annotator, phase), oldest first.
    pub fn history_for(&self, article_id: &str, annotator_id: &str, phase: Phase) -> Vec<&Annotation> {
        self.history
            .iter()
            .filter(|a| a.article_id == article_id && a.annotator_id == annotator_id && a.phase == phase)
            .collect()
    }

    pub fn current(&self, article_id: &str, annotator_id: &str, phase: Phase) -> Option<&Annotation> {
        self.current.get(&(article_id.to_string(), annotator_id.to_string(), phase)).map(|&i| &self.history[i])
    }

    /// Current annotations belonging to `session_id`, in append order of
    /// their latest revision.
    pub fn current_for_session(&self, session_id: &str) -> Vec<&Annotation> {
        let mut idx: Vec<usize> =
            self.current.values().copied().filter(|&i| self.history[i].session_id == session_id).collect();
        idx.sort_unstable();
        idx.into_iter().map(|i| &self.history[i]).collect()
    }

    pub fn find_submission(&self, submission_id: &str) -> Option<&Annotation> {
        self.history.iter().rev().find(|a| a.submission_id.as_deref() == Some(submission_id))
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }
}

/// 6×6 count matrix indexed by canonical label order.
pub type ConfusionMatrix = [[u64; FrameLabel::COUNT]; FrameLabel::COUNT];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcrReport {
    pub annotator_a: String,
    pub annotator_b: String,
    pub n_items: u64,
    pub percent_agreement: f64,
    pub expected_agreement: f64,
    pub kappa: f64,
    /// Annotator A in rows, annotator B in columns.
    pub confusion: ConfusionMatrix,
}

/// Cohen's kappa and raw agreement over paired primary labels.
///
/// Expected agreement comes from each coder's marginal label frequencies. If
/// it equals 1 the statistic is undefined; kappa is then 1.0 for perfect
/// observed agreement and 0.0 otherwise.
pub fn kappa_from_pairs(pairs: &[(FrameLabel, FrameLabel)]) -> (ConfusionMatrix, f64, f64, f64) {
    let mut confusion = [[0u64; FrameLabel::COUNT]; FrameLabel::COUNT];
    for (a, b) in pairs {
        confusion[a.index()][b.index()] += 1;
    }
    let n = pairs.len() as f64;
    let trace: u64 = (0..FrameLabel::COUNT).map(|i| confusion[i][i]).sum();
    let p_o = trace as f64 / n;
    let mut p_e = 0.0;
    for k in 0..FrameLabel::COUNT {
        let row: u64 = confusion[k].iter().sum();
        let col: u64 = confusion.iter().map(|r| r[k]).sum();
        p_e += (row as f64 / n) * (col as f64 / n);
    }
    let kappa = if p_e == 1.0 {
        if p_o == 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (p_o - p_e) / (1.0 - p_e)
    };
    (confusion, p_o, p_e, kappa)
}

/// Paired current primary labels of two annotators in this session's phase,
/// in session item order.
fn paired_labels<'a>(
    session: &'a AnnotationSession,
    log: &'a AnnotationLog,
    a: &str,
    b: &str,
) -> Vec<(&'a str, FrameLabel, FrameLabel)> {
    session
        .item_ids
        .iter()
        .filter_map(|item| {
            let la = log.current(item, a, session.phase)?;
            let lb = log.current(item, b, session.phase)?;
            (la.session_id == session.id && lb.session_id == session.id).then_some((
                item.as_str(),
                la.primary,
                lb.primary,
            ))
        })
        .collect()
}

/// Reliability between two annotators over items both have labeled in the
/// session's phase. Secondary frames are ignored.
pub fn compute_icr(
    session: &AnnotationSession,
    log: &AnnotationLog,
    annotator_a: &str,
    annotator_b: &str,
) -> Result<IcrReport, AnnotationError> {
    let pairs: Vec<(FrameLabel, FrameLabel)> =
        paired_labels(session, log, annotator_a, annotator_b).into_iter().map(|(_, x, y)| (x, y)).collect();
    if pairs.is_empty() {
        return Err(AnnotationError::NoOverlap(annotator_a.into(), annotator_b.into()));
    }
    let (confusion, p_o, p_e, kappa) = kappa_from_pairs(&pairs);
    Ok(IcrReport {
        annotator_a: annotator_a.into(),
        annotator_b: annotator_b.into(),
        n_items: pairs.len() as u64,
        percent_agreement: p_o,
        expected_agreement: p_e,
        kappa,
        confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disagreement {
    pub article_id: String,
    pub label_a: FrameLabel,
    pub label_b: FrameLabel,
}

/// Items where the two annotators' primary labels differ, in item order.
pub fn disagreement_list(
    session: &AnnotationSession,
    log: &AnnotationLog,
    annotator_a: &str,
    annotator_b: &str,
) -> Vec<Disagreement> {
    paired_labels(session, log, annotator_a, annotator_b)
        .into_iter()
        .filter(|(_, x, y)| x != y)
        .map(|(id, x, y)| Disagreement { article_id: id.to_string(), label_a: x, label_b: y })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatorProgress {
    pub annotator_id: String,
    pub done: usize,
    pub total: usize,
}

pub fn progress(session: &AnnotationSession, log: &AnnotationLog) -> Vec<AnnotatorProgress> {
    session
        .annotators
        .iter()
        .map(|a| {
            let items = session.assigned_items(&a.id);
            let done = items
                .iter()
                .filter(|i| log.current(i, &a.id, session.phase).is_some_and(|x| x.session_id == session.id))
                .count();
            AnnotatorProgress { annotator_id: a.id.clone(), done, total: items.len() }
        })
        .collect()
}

/// First assigned item the annotator has not labeled yet.
pub fn next_unlabeled<'a>(session: &'a AnnotationSession, log: &AnnotationLog, annotator_id: &str) -> Option<&'a str> {
    session
        .assigned_items(annotator_id)
        .iter()
        .find(|i| !log.current(i, annotator_id, session.phase).is_some_and(|x| x.session_id == session.id))
        .map(String::as_str)
}
