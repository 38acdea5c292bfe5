//! Evaluation of classifier output against human labels: seeded k-fold
//! plans, accuracy and confusion reports, human–model agreement, and the
//! blind adjudication of disputed labels.

use std::collections::{HashMap, HashSet};

use chrono::{DateTime, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotation::ConfusionMatrix;
use crate::corpus::Corpus;
use crate::frame::FrameLabel;
use crate::inference::ParsedLabel;
use crate::split;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvaluationError {
    #[error("k must be at least 2, got {0}")]
    KTooSmall(usize),
    #[error("k = {k} exceeds the number of items ({n})")]
    KTooLarge { k: usize, n: usize },
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("prediction for {0:?} has no gold label")]
    UnknownPrediction(String),
    #[error("fold item {0:?} has no gold label")]
    FoldWithoutGold(String),
    #[error("no gold labels")]
    EmptyGold,
    #[error("human labels and predictions do not overlap")]
    EmptyOverlap,
    #[error("article {0:?} is not in the corpus")]
    UnknownArticle(String),
    #[error("no disagreements to adjudicate")]
    NothingToAdjudicate,
    #[error("control rate {0} outside [0, 1]")]
    ControlRate(f64),
    #[error("unknown adjudication item {0:?}")]
    UnknownItem(String),
    #[error("item {0:?} already has a verdict")]
    DoubleVerdict(String),
    #[error("reviewer {reviewer:?} is not assigned item {item:?}")]
    WrongReviewer { item: String, reviewer: String },
    #[error("no verdicts")]
    NoVerdicts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Vec<String>>,
}

/// Seeded shuffle, then `k` contiguous folds with the larger folds first.
pub fn make_folds(item_ids: &[String], k: usize, seed: u64) -> Result<FoldPlan, EvaluationError> {
    if k < 2 {
        return Err(EvaluationError::KTooSmall(k));
    }
    if k > item_ids.len() {
        return Err(EvaluationError::KTooLarge { k, n: item_ids.len() });
    }
    let mut seen = HashSet::new();
    for id in item_ids {
        if !seen.insert(id) {
            return Err(EvaluationError::DuplicateId(id.clone()));
        }
    }
    Ok(FoldPlan { k, seed, folds: split::shuffled_split(item_ids, k, seed) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub correct: u64,
    pub total: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub per_fold: Vec<FoldResult>,
    pub per_fold_accuracy: Vec<f64>,
    /// Mean of the per-fold accuracies.
    pub average: f64,
    /// Gold in rows, prediction in columns; parsed predictions only.
    pub confusion: ConfusionMatrix,
    pub unparseable_count: u64,
    /// Gold items without any prediction; counted as incorrect.
    pub missing_count: u64,
}

/// Half-up rounding to two decimals, as printed in tables.
pub fn round_half_up_2(x: f64) -> f64 {
    // the nudge absorbs binary representation error such as 0.705 -> 0.70499...
    ((x * 100.0) + 0.5 + 1e-9).floor() / 100.0
}

pub fn display_accuracy(x: f64) -> String {
    format!("{:.2}", round_half_up_2(x))
}

/// Accuracy per fold and on average. Without a plan the whole gold set is a
/// single fold. Unparseable and missing predictions count as incorrect.
pub fn evaluate_predictions(
    gold: &[(String, FrameLabel)],
    predicted: &[(String, ParsedLabel)],
    plan: Option<&FoldPlan>,
) -> Result<EvaluationReport, EvaluationError> {
    if gold.is_empty() {
        return Err(EvaluationError::EmptyGold);
    }
    let mut gold_map: HashMap<&str, FrameLabel> = HashMap::new();
    for (id, l) in gold {
        if gold_map.insert(id.as_str(), *l).is_some() {
            return Err(EvaluationError::DuplicateId(id.clone()));
        }
    }
    let mut pred_map: HashMap<&str, ParsedLabel> = HashMap::new();
    for (id, p) in predicted {
        if !gold_map.contains_key(id.as_str()) {
            return Err(EvaluationError::UnknownPrediction(id.clone()));
        }
        if pred_map.insert(id.as_str(), *p).is_some() {
            return Err(EvaluationError::DuplicateId(id.clone()));
        }
    }

    let whole: Vec<Vec<String>>;
    let folds: &[Vec<String>] = match plan {
        Some(p) => {
            for id in p.folds.iter().flatten() {
                if !gold_map.contains_key(id.as_str()) {
                    return Err(EvaluationError::FoldWithoutGold(id.clone()));
                }
            }
            &p.folds
        }
        None => {
            whole = vec![gold.iter().map(|(id, _)| id.clone()).collect()];
            &whole
        }
    };

    let mut confusion = [[0u64; FrameLabel::COUNT]; FrameLabel::COUNT];
    let mut unparseable_count = 0;
    let mut missing_count = 0;
    let mut per_fold = Vec::with_capacity(folds.len());
    for fold in folds {
        let mut correct = 0;
        for id in fold {
            let g = gold_map[id.as_str()];
            match pred_map.get(id.as_str()) {
                Some(ParsedLabel::Frame(p)) => {
                    confusion[g.index()][p.index()] += 1;
                    if *p == g {
                        correct += 1;
                    }
                }
                Some(ParsedLabel::Unparseable) => unparseable_count += 1,
                None => missing_count += 1,
            }
        }
        let total = fold.len() as u64;
        let accuracy = if total == 0 { 0.0 } else { correct as f64 / total as f64 };
        per_fold.push(FoldResult { correct, total, accuracy });
    }
    let per_fold_accuracy: Vec<f64> = per_fold.iter().map(|f| f.accuracy).collect();
    let average = mean(&per_fold_accuracy);
    Ok(EvaluationReport { per_fold, per_fold_accuracy, average, confusion, unparseable_count, missing_count })
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

impl EvaluationReport {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["fold", "correct", "total", "accuracy", "accuracy_display"]).expect("csv");
        for (i, f) in self.per_fold.iter().enumerate() {
            w.write_record([
                i.to_string(),
                f.correct.to_string(),
                f.total.to_string(),
                f.accuracy.to_string(),
                display_accuracy(f.accuracy),
            ])
            .expect("csv");
        }
        w.write_record(["average", "", "", &self.average.to_string(), &display_accuracy(self.average)]).expect("csv");
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// One model's per-fold accuracies, with the average a published table
/// printed for it (if any).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldTableRow {
    pub model: String,
    pub per_fold: Vec<f64>,
    #[serde(default)]
    pub printed_average: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldTableLine {
    pub model: String,
    pub per_fold: Vec<f64>,
    pub average: f64,
    pub displayed: String,
    pub printed_average: Option<f64>,
    /// False when the printed average disagrees with the recomputed one at
    /// display precision.
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldTableReport {
    pub rows: Vec<FoldTableLine>,
    pub notes: Vec<String>,
}

/// Recompute averages of a per-fold accuracy table and flag rows whose
/// printed average does not match.
pub fn aggregate_fold_table(rows: &[FoldTableRow]) -> FoldTableReport {
    let mut lines = Vec::new();
    let mut notes = Vec::new();
    for r in rows {
        let average = mean(&r.per_fold);
        let displayed = display_accuracy(average);
        let consistent = match r.printed_average {
            Some(p) => round_half_up_2(p) == round_half_up_2(average),
            None => true,
        };
        if !consistent {
            notes.push(format!(
                "{}: printed average {:.2} is inconsistent with the per-fold values (computed {:.3}, displayed {})",
                r.model,
                r.printed_average.unwrap_or_default(),
                average,
                displayed
            ));
        }
        lines.push(FoldTableLine {
            model: r.model.clone(),
            per_fold: r.per_fold.clone(),
            average,
            displayed,
            printed_average: r.printed_average,
            consistent,
        });
    }
    FoldTableReport { rows: lines, notes }
}

/// A current primary label from a human annotator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanLabel {
    pub article_id: String,
    pub annotator_id: String,
    pub label: FrameLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDisagreement {
    pub article_id: String,
    pub annotator_id: String,
    pub human: FrameLabel,
    pub model: ParsedLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub n_overlap: usize,
    pub n_agree: usize,
    pub agreement: f64,
    pub disagreements: Vec<ModelDisagreement>,
}

/// Share of items labeled by both a human and the model where the parsed
/// prediction equals the human primary label. Disagreements are listed in
/// corpus order.
pub fn human_model_agreement(
    corpus: &Corpus,
    human: &[HumanLabel],
    predictions: &[(String, ParsedLabel)],
) -> Result<AgreementReport, EvaluationError> {
    let preds: HashMap<&str, ParsedLabel> = predictions.iter().map(|(id, p)| (id.as_str(), *p)).collect();
    let mut pairs: Vec<(usize, &HumanLabel, ParsedLabel)> = Vec::new();
    let mut seen = HashSet::new();
    for h in human {
        let pos =
            corpus.position(&h.article_id).ok_or_else(|| EvaluationError::UnknownArticle(h.article_id.clone()))?;
        if !seen.insert(h.article_id.as_str()) {
            return Err(EvaluationError::DuplicateId(h.article_id.clone()));
        }
        if let Some(p) = preds.get(h.article_id.as_str()) {
            pairs.push((pos, h, *p));
        }
    }
    if pairs.is_empty() {
        return Err(EvaluationError::EmptyOverlap);
    }
    pairs.sort_by_key(|(pos, _, _)| *pos);
    let n_agree = pairs.iter().filter(|(_, h, p)| *p == ParsedLabel::Frame(h.label)).count();
    let disagreements = pairs
        .iter()
        .filter(|(_, h, p)| *p != ParsedLabel::Frame(h.label))
        .map(|(_, h, p)| ModelDisagreement {
            article_id: h.article_id.clone(),
            annotator_id: h.annotator_id.clone(),
            human: h.label,
            model: *p,
        })
        .collect();
    Ok(AgreementReport {
        n_overlap: pairs.len(),
        n_agree,
        agreement: n_agree as f64 / pairs.len() as f64,
        disagreements,
    })
}

/// Where a proposed label came from. Kept server-side only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Model,
    OriginalHuman,
    ControlRandom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Agree,
    Disagree,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictRecord {
    pub verdict: Verdict,
    pub reviewer_id: String,
    pub recorded_at: DateTime<Utc>,
}

/// Stored form of an adjudication item. Never sent to reviewers; see
/// [`ReviewerItem`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjudicationItem {
    pub item_id: String,
    pub article_id: String,
    pub headline: String,
    pub proposed: FrameLabel,
    pub provenance: Provenance,
    /// Reviewer allowed to judge this item; any reviewer when absent.
    pub reviewer_id: Option<String>,
    pub verdict: Option<VerdictRecord>,
}

/// What a reviewer sees. Has no way to carry provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReviewerItem {
    pub item_id: String,
    pub headline: String,
    pub proposed: FrameLabel,
}

impl AdjudicationItem {
    pub fn reviewer_view(&self) -> ReviewerItem {
        ReviewerItem { item_id: self.item_id.clone(), headline: self.headline.clone(), proposed: self.proposed }
    }
}

fn opaque_item_id(seed: u64, n: usize) -> String {
    let mut h = Sha256::new();
    h.update(b"adjudication");
    h.update(seed.to_le_bytes());
    h.update((n as u64).to_le_bytes());
    format!("adj-{}", hex::encode(&h.finalize()[..8]))
}

/// One item per disagreement proposing the model's label. With probability
/// `control_random_rate` the proposal is replaced by a uniformly drawn
/// different frame (a control). The queue order is shuffled by `seed`.
///
/// Disagreements whose model output was unparseable have no label to propose
/// and are left out.
pub fn build_adjudication_queue(
    corpus: &Corpus,
    disagreements: &[ModelDisagreement],
    control_random_rate: f64,
    seed: u64,
) -> Result<Vec<AdjudicationItem>, EvaluationError> {
    if !(0.0..=1.0).contains(&control_random_rate) {
        return Err(EvaluationError::ControlRate(control_random_rate));
    }
    let proposable: Vec<(&ModelDisagreement, FrameLabel)> =
        disagreements.iter().filter_map(|d| d.model.frame().map(|f| (d, f))).collect();
    if proposable.is_empty() {
        return Err(EvaluationError::NothingToAdjudicate);
    }
    let mut rng = split::seeded_rng(seed);
    let mut items = Vec::with_capacity(proposable.len());
    for (n, (d, model_label)) in proposable.into_iter().enumerate() {
        let article = corpus.get(&d.article_id).ok_or_else(|| EvaluationError::UnknownArticle(d.article_id.clone()))?;
        let (proposed, provenance) = if rng.gen::<f64>() < control_random_rate {
            let others: Vec<FrameLabel> = FrameLabel::ALL.into_iter().filter(|l| *l != model_label).collect();
            (others[rng.gen_range(0..others.len())], Provenance::ControlRandom)
        } else {
            (model_label, Provenance::Model)
        };
        items.push(AdjudicationItem {
            item_id: opaque_item_id(seed, n),
            article_id: d.article_id.clone(),
            headline: article.headline.clone(),
            proposed,
            provenance,
            reviewer_id: Some(d.annotator_id.clone()),
            verdict: None,
        });
    }
    split::seeded_shuffle(&mut items, seed ^ 0x9e37_79b9_7f4a_7c15);
    Ok(items)
}

/// Adjudication items plus their verdicts. Verdicts are write-once.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdjudicationQueue {
    pub items: Vec<AdjudicationItem>,
}

impl AdjudicationQueue {
    pub fn new(items: Vec<AdjudicationItem>) -> Self {
        AdjudicationQueue { items }
    }

    pub fn get(&self, item_id: &str) -> Option<&AdjudicationItem> {
        self.items.iter().find(|i| i.item_id == item_id)
    }

    /// Next item awaiting a verdict from `reviewer`.
    pub fn next_for(&self, reviewer: &str) -> Option<ReviewerItem> {
        self.items
            .iter()
            .find(|i| i.verdict.is_none() && i.reviewer_id.as_deref().is_none_or(|r| r == reviewer))
            .map(AdjudicationItem::reviewer_view)
    }

    pub fn record_verdict(
        &mut self,
        item_id: &str,
        reviewer_id: &str,
        verdict: Verdict,
        at: DateTime<Utc>,
    ) -> Result<&AdjudicationItem, EvaluationError> {
        let item = self
            .items
            .iter_mut()
            .find(|i| i.item_id == item_id)
            .ok_or_else(|| EvaluationError::UnknownItem(item_id.to_string()))?;
        if item.verdict.is_some() {
            return Err(EvaluationError::DoubleVerdict(item_id.to_string()));
        }
        if item.reviewer_id.as_deref().is_some_and(|r| r != reviewer_id) {
            return Err(EvaluationError::WrongReviewer {
                item: item_id.to_string(),
                reviewer: reviewer_id.to_string(),
            });
        }
        item.verdict = Some(VerdictRecord { verdict, reviewer_id: reviewer_id.to_string(), recorded_at: at });
        Ok(item)
    }

    pub fn pending(&self) -> usize {
        self.items.iter().filter(|i| i.verdict.is_none()).count()
    }
}

/// Agree verdicts over all verdicts, restricted to items whose provenance is
/// in `filter`.
pub fn adjudicated_agreement_rate(items: &[AdjudicationItem], filter: &[Provenance]) -> Result<f64, EvaluationError> {
    let judged: Vec<&VerdictRecord> =
        items.iter().filter(|i| filter.contains(&i.provenance)).filter_map(|i| i.verdict.as_ref()).collect();
    if judged.is_empty() {
        return Err(EvaluationError::NoVerdicts);
    }
    let agree = judged.iter().filter(|v| v.verdict == Verdict::Agree).count();
    Ok(agree as f64 / judged.len() as f64)
}
