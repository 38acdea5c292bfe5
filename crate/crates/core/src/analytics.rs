//! Descriptive statistics over labeled articles: frame distributions per
//! country, monthly frame series and sentiment proportions per frame.
//!
//! Labels are single (primary) frames per article. Whether they come from
//! human annotators or model predictions is the caller's choice.

use std::collections::{BTreeMap, HashSet};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::corpus::{Article, Corpus, Sentiment};
use crate::frame::FrameLabel;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalyticsError {
    #[error("labeled article {0:?} is not in the corpus")]
    UnknownArticle(String),
    #[error("article {0:?} is labeled twice")]
    DuplicateLabel(String),
    #[error("no labels")]
    NoLabels,
    #[error("no labeled article carries a sentiment")]
    NoSentiment,
}

type FrameCounts = BTreeMap<FrameLabel, u64>;

fn zero_counts() -> FrameCounts {
    FrameLabel::ALL.iter().map(|l| (*l, 0)).collect()
}

fn resolve<'a>(
    labels: &[(String, FrameLabel)],
    corpus: &'a Corpus,
) -> Result<Vec<(&'a Article, FrameLabel)>, AnalyticsError> {
    let mut seen = HashSet::new();
    labels
        .iter()
        .map(|(id, l)| {
            if !seen.insert(id.as_str()) {
                return Err(AnalyticsError::DuplicateLabel(id.clone()));
            }
            corpus.get(id).map(|a| (a, *l)).ok_or_else(|| AnalyticsError::UnknownArticle(id.clone()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameShare {
    pub count: u64,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDistribution {
    pub total: u64,
    /// Country → frame → count; every manifest country and frame present.
    pub counts: BTreeMap<String, FrameCounts>,
    /// Country → frame → share of that country's labeled items. Countries
    /// without labeled items are omitted.
    pub normalized: BTreeMap<String, BTreeMap<FrameLabel, f64>>,
    /// Country → frame → count divided by the country's newspaper count.
    pub per_newspaper: BTreeMap<String, BTreeMap<FrameLabel, f64>>,
    /// Frame → count and share over all countries.
    pub overall: BTreeMap<FrameLabel, FrameShare>,
}

/// Group labels by the country of their article. With `allow_empty` an empty
/// label list yields an all-zero distribution instead of an error.
pub fn frames_by_country(
    labels: &[(String, FrameLabel)],
    corpus: &Corpus,
    allow_empty: bool,
) -> Result<FrameDistribution, AnalyticsError> {
    if labels.is_empty() && !allow_empty {
        return Err(AnalyticsError::NoLabels);
    }
    let resolved = resolve(labels, corpus)?;
    let manifest = corpus.manifest();
    let mut counts: BTreeMap<String, FrameCounts> =
        manifest.countries.iter().map(|c| (c.clone(), zero_counts())).collect();
    let mut overall_counts = zero_counts();
    for (a, l) in &resolved {
        *counts.entry(a.country.clone()).or_insert_with(zero_counts).entry(*l).or_default() += 1;
        *overall_counts.entry(*l).or_default() += 1;
    }

    let mut normalized = BTreeMap::new();
    let mut per_newspaper = BTreeMap::new();
    for (country, frames) in &counts {
        let n: u64 = frames.values().sum();
        if n > 0 {
            normalized.insert(country.clone(), frames.iter().map(|(l, c)| (*l, *c as f64 / n as f64)).collect());
        }
        let papers = manifest.newspapers_of(country).count() as f64;
        if papers > 0.0 {
            per_newspaper.insert(country.clone(), frames.iter().map(|(l, c)| (*l, *c as f64 / papers)).collect());
        }
    }

    let total = resolved.len() as u64;
    let overall = overall_counts
        .into_iter()
        .map(|(l, c)| {
            let share = if total == 0 { 0.0 } else { c as f64 / total as f64 };
            (l, FrameShare { count: c, share })
        })
        .collect();
    Ok(FrameDistribution { total, counts, normalized, per_newspaper, overall })
}

impl FrameDistribution {
    /// One row per country × frame.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["country", "frame", "count", "share", "per_newspaper"]).expect("csv");
        for (country, frames) in &self.counts {
            for (label, count) in frames {
                let share = self.normalized.get(country).and_then(|m| m.get(label));
                let per_paper = self.per_newspaper.get(country).and_then(|m| m.get(label));
                w.write_record([
                    country.clone(),
                    label.key().to_string(),
                    count.to_string(),
                    share.map(f64::to_string).unwrap_or_default(),
                    per_paper.map(f64::to_string).unwrap_or_default(),
                ])
                .expect("csv");
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    /// Overall share of a frame as a percentage with one decimal.
    pub fn share_percent_display(&self, label: FrameLabel) -> String {
        format!("{:.1}%", self.overall[&label].share * 100.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthBucket {
    /// `YYYY-MM`.
    pub month: String,
    pub counts: FrameCounts,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonthlySeries {
    pub buckets: Vec<MonthBucket>,
}

fn month_key(d: NaiveDate) -> (i32, u32) {
    (d.year(), d.month())
}

fn months_between(start: NaiveDate, end: NaiveDate) -> Vec<(i32, u32)> {
    let mut out = Vec::new();
    let (mut y, mut m) = month_key(start);
    let last = month_key(end);
    while (y, m) <= last {
        out.push((y, m));
        if m == 12 {
            y += 1;
            m = 1;
        } else {
            m += 1;
        }
    }
    out
}

/// Frame counts per publication month, zero-filled over the corpus window
/// (extended if a labeled article falls outside it).
pub fn frames_by_month(labels: &[(String, FrameLabel)], corpus: &Corpus) -> Result<MonthlySeries, AnalyticsError> {
    let resolved = resolve(labels, corpus)?;
    let window = corpus.manifest().date_window;
    let start = resolved.iter().map(|(a, _)| a.published).chain([window.start]).min().expect("non-empty");
    let end = resolved.iter().map(|(a, _)| a.published).chain([window.end]).max().expect("non-empty");
    let mut buckets: BTreeMap<(i32, u32), FrameCounts> =
        months_between(start, end).into_iter().map(|k| (k, zero_counts())).collect();
    for (a, l) in &resolved {
        *buckets.get_mut(&month_key(a.published)).expect("month in range").entry(*l).or_default() += 1;
    }
    Ok(MonthlySeries {
        buckets: buckets
            .into_iter()
            .map(|((y, m), counts)| MonthBucket {
                month: format!("{y:04}-{m:02}"),
                total: counts.values().sum(),
                counts,
            })
            .collect(),
    })
}

impl MonthlySeries {
    pub fn total(&self) -> u64 {
        self.buckets.iter().map(|b| b.total).sum()
    }

    /// Months sorted by descending total; ties keep chronological order.
    pub fn peaks(&self, n: usize) -> Vec<&str> {
        let mut order: Vec<&MonthBucket> = self.buckets.iter().collect();
        order.sort_by_key(|b| std::cmp::Reverse(b.total));
        order.into_iter().take(n).map(|b| b.month.as_str()).collect()
    }

    /// Tidy long format: one row per month × frame.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["month", "frame", "count"]).expect("csv");
        for b in &self.buckets {
            for (l, c) in &b.counts {
                w.write_record([b.month.as_str(), l.key(), &c.to_string()]).expect("csv");
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentimentProportions {
    pub negative: f64,
    pub neutral: f64,
    pub positive: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentCell {
    pub n: u64,
    /// `None` for cells without any article carrying sentiment.
    pub proportions: Option<SentimentProportions>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentimentCoverage {
    pub labeled: u64,
    pub with_sentiment: u64,
    pub without_sentiment: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentimentByFrame {
    pub cells: BTreeMap<String, BTreeMap<FrameLabel, SentimentCell>>,
    pub coverage: SentimentCoverage,
}

/// Proportions of negative/neutral/positive headlines per country and frame.
/// Articles without a sentiment label are excluded and counted in coverage.
pub fn sentiment_by_frame(
    labels: &[(String, FrameLabel)],
    corpus: &Corpus,
) -> Result<SentimentByFrame, AnalyticsError> {
    let resolved = resolve(labels, corpus)?;
    let mut tallies: BTreeMap<String, BTreeMap<FrameLabel, [u64; 3]>> = corpus
        .manifest()
        .countries
        .iter()
        .map(|c| (c.clone(), FrameLabel::ALL.iter().map(|l| (*l, [0; 3])).collect()))
        .collect();
    let mut with = 0;
    for (a, l) in &resolved {
        let Some(s) = a.sentiment else { continue };
        with += 1;
        let slot = match s {
            Sentiment::Negative => 0,
            Sentiment::Neutral => 1,
            Sentiment::Positive => 2,
        };
        tallies.entry(a.country.clone()).or_default().entry(*l).or_insert([0; 3])[slot] += 1;
    }
    if with == 0 {
        return Err(AnalyticsError::NoSentiment);
    }
    let cells = tallies
        .into_iter()
        .map(|(country, frames)| {
            let row = frames
                .into_iter()
                .map(|(l, t)| {
                    let n: u64 = t.iter().sum();
                    let proportions = (n > 0).then(|| SentimentProportions {
                        negative: t[0] as f64 / n as f64,
                        neutral: t[1] as f64 / n as f64,
                        positive: t[2] as f64 / n as f64,
                    });
                    (l, SentimentCell { n, proportions })
                })
                .collect();
            (country, row)
        })
        .collect();
    let labeled = resolved.len() as u64;
    Ok(SentimentByFrame {
        cells,
        coverage: SentimentCoverage { labeled, with_sentiment: with, without_sentiment: labeled - with },
    })
}

impl SentimentByFrame {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["country", "frame", "n", "negative", "neutral", "positive"]).expect("csv");
        for (country, frames) in &self.cells {
            for (l, cell) in frames {
                let (neg, neu, pos) = match cell.proportions {
                    Some(p) => (p.negative.to_string(), p.neutral.to_string(), p.positive.to_string()),
                    None => Default::default(),
                };
                w.write_record([country.clone(), l.key().to_string(), cell.n.to_string(), neg, neu, pos]).expect("csv");
            }
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}
