//! Article collections: JSON Lines ingestion against a manifest, keyword
//! filtering of the topical subcorpus, and per-newspaper/per-country counts.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{self, BufRead, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sentiment {
    Negative,
    Neutral,
    Positive,
}

impl Sentiment {
    pub const ALL: [Sentiment; 3] = [Sentiment::Negative, Sentiment::Neutral, Sentiment::Positive];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Article {
    pub id: String,
    pub headline: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<String>,
    pub newspaper: String,
    pub country: String,
    pub published: NaiveDate,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sentiment: Option<Sentiment>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_url: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DateWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateWindow {
    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

/// Declared countries, the newspaper→country map and the collection window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub countries: Vec<String>,
    pub newspapers: BTreeMap<String, String>,
    pub date_window: DateWindow,
}

impl CorpusManifest {
    pub fn from_json(source: &str) -> Result<CorpusManifest, CorpusError> {
        let m: CorpusManifest = serde_json::from_str(source).map_err(|e| CorpusError::Manifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), CorpusError> {
        let mut seen = BTreeSet::new();
        for c in &self.countries {
            if !seen.insert(c) {
                return Err(CorpusError::Manifest(format!("country {c:?} declared twice")));
            }
        }
        for (paper, country) in &self.newspapers {
            if !seen.contains(country) {
                return Err(CorpusError::Manifest(format!(
                    "newspaper {paper:?} mapped to undeclared country {country:?}"
                )));
            }
        }
        if self.date_window.start > self.date_window.end {
            return Err(CorpusError::Manifest("date window start after end".into()));
        }
        Ok(())
    }

    /// Newspapers of `country`, sorted by name.
    pub fn newspapers_of<'a>(&'a self, country: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.newspapers.iter().filter(move |(_, c)| c.as_str() == country).map(|(p, _)| p.as_str())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("line {line}: duplicate article id {id:?}")]
    DuplicateId { id: String, line: usize },
    #[error("line {line}: newspaper {newspaper:?} is not in the manifest")]
    UnknownNewspaper { newspaper: String, line: usize },
    #[error("country {0:?} has no newspapers in the manifest")]
    NoNewspapers(String),
    #[error("corpus is empty")]
    Empty,
    #[error("invalid keyword filter: {0}")]
    Filter(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// A row that could not be ingested. Collected, never fatal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    pub line: usize,
    pub reason: String,
}

impl fmt::Display for RowError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.reason)
    }
}

#[derive(Debug, Clone)]
pub struct Corpus {
    articles: Vec<Article>,
    manifest: CorpusManifest,
    index: HashMap<String, usize>,
}

impl PartialEq for Corpus {
    fn eq(&self, other: &Self) -> bool {
        self.articles == other.articles && self.manifest == other.manifest
    }
}

impl Corpus {
    /// Build a corpus from already-validated articles. Enforces id uniqueness
    /// and manifest membership of every newspaper.
    pub fn new(articles: Vec<Article>, manifest: CorpusManifest) -> Result<Corpus, CorpusError> {
        manifest.validate()?;
        let mut index = HashMap::with_capacity(articles.len());
        for (i, a) in articles.iter().enumerate() {
            if index.insert(a.id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId { id: a.id.clone(), line: i + 1 });
            }
            if !manifest.newspapers.contains_key(&a.newspaper) {
                return Err(CorpusError::UnknownNewspaper { newspaper: a.newspaper.clone(), line: i + 1 });
            }
        }
        Ok(Corpus { articles, manifest, index })
    }

    pub fn articles(&self) -> &[Article] {
        &self.articles
    }

    pub fn manifest(&self) -> &CorpusManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.articles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.articles.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Article> {
        self.index.get(id).map(|&i| &self.articles[i])
    }

    /// Position of the article in corpus order.
    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.articles.iter().map(|a| a.id.as_str())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for a in &self.articles {
            serde_json::to_writer(&mut out, a)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    fn subset(&self, keep: impl Fn(&Article) -> bool) -> Corpus {
        let articles: Vec<Article> = self.articles.iter().filter(|a| keep(a)).cloned().collect();
        let index = articles.iter().enumerate().map(|(i, a)| (a.id.clone(), i)).collect();
        Corpus { articles, manifest: self.manifest.clone(), index }
    }
}

#[derive(Debug, Clone)]
pub struct IngestReport {
    pub corpus: Corpus,
    pub rejected: Vec<RowError>,
}

/// Read a JSON Lines corpus. Malformed or invalid rows are collected as
/// [`RowError`]s; duplicate ids and unknown newspapers abort ingestion.
pub fn ingest_corpus<R: BufRead>(source: R, manifest: &CorpusManifest) -> Result<IngestReport, CorpusError> {
    manifest.validate()?;
    let countries: BTreeSet<&str> = manifest.countries.iter().map(String::as_str).collect();
    let mut articles = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut rejected = Vec::new();

    for (i, line) in source.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let article: Article = match serde_json::from_str(&line) {
            Ok(a) => a,
            Err(e) => {
                rejected.push(RowError { line: line_no, reason: format!("malformed row: {e}") });
                continue;
            }
        };
        if let Some(reason) = row_problem(&article, manifest, &countries) {
            rejected.push(RowError { line: line_no, reason });
            continue;
        }
        let Some(paper_country) = manifest.newspapers.get(&article.newspaper) else {
            return Err(CorpusError::UnknownNewspaper { newspaper: article.newspaper, line: line_no });
        };
        if *paper_country != article.country {
            rejected.push(RowError {
                line: line_no,
                reason: format!(
                    "country {:?} does not match manifest country {:?} of {:?}",
                    article.country, paper_country, article.newspaper
                ),
            });
            continue;
        }
        if seen.insert(article.id.clone(), line_no).is_some() {
            return Err(CorpusError::DuplicateId { id: article.id, line: line_no });
        }
        articles.push(article);
    }

    let corpus = Corpus::new(articles, manifest.clone())?;
    Ok(IngestReport { corpus, rejected })
}

fn row_problem(a: &Article, manifest: &CorpusManifest, countries: &BTreeSet<&str>) -> Option<String> {
    if a.id.trim().is_empty() {
        return Some("empty id".into());
    }
    if a.headline.trim().is_empty() {
        return Some(format!("article {:?}: empty headline", a.id));
    }
    if !countries.contains(a.country.as_str()) {
        return Some(format!("article {:?}: undeclared country {:?}", a.id, a.country));
    }
    if !manifest.date_window.contains(a.published) {
        return Some(format!("article {:?}: date {} outside the corpus window", a.id, a.published));
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeywordScope {
    HeadlineOnly,
    HeadlineOrBody,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordFilterSpec {
    keywords: Vec<String>,
    scope: KeywordScope,
}

impl KeywordFilterSpec {
    pub fn new(keywords: Vec<String>, scope: KeywordScope) -> Result<Self, CorpusError> {
        if keywords.is_empty() {
            return Err(CorpusError::Filter("keyword list is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for k in &keywords {
            if k.trim().is_empty() {
                return Err(CorpusError::Filter("empty keyword".into()));
            }
            if k.to_lowercase() != *k {
                return Err(CorpusError::Filter(format!("keyword {k:?} is not lowercase")));
            }
            if !seen.insert(k) {
                return Err(CorpusError::Filter(format!("duplicate keyword {k:?}")));
            }
        }
        Ok(KeywordFilterSpec { keywords, scope })
    }

    /// Anti-vaccine movement keywords, matched in headline or body.
    pub fn no_vax() -> Self {
        let kw = ["anti-vaxxers", "anti-vaccine", "anti-vaxx", "anti-corona", "no-vax", "no vax", "anti-vaccin"];
        Self::new(kw.iter().map(|s| s.to_string()).collect(), KeywordScope::HeadlineOrBody)
            .expect("built-in keyword list is valid")
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    pub fn scope(&self) -> KeywordScope {
        self.scope
    }

    pub fn matches(&self, article: &Article) -> bool {
        let hit = |text: &str| {
            let folded = text.to_lowercase();
            self.keywords.iter().any(|k| folded.contains(k.as_str()))
        };
        match self.scope {
            KeywordScope::HeadlineOnly => hit(&article.headline),
            KeywordScope::HeadlineOrBody => hit(&article.headline) || article.body.as_deref().is_some_and(hit),
        }
    }
}

/// Articles matching any keyword, in original order.
pub fn filter_keywords(corpus: &Corpus, spec: &KeywordFilterSpec) -> Corpus {
    corpus.subset(|a| spec.matches(a))
}

/// An article count divided by a newspaper count, kept as an exact ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormalizedTotal {
    pub count: u64,
    pub newspapers: u64,
}

impl NormalizedTotal {
    pub fn value(&self) -> f64 {
        self.count as f64 / self.newspapers as f64
    }

    /// One decimal place, truncated toward zero (523/6 displays as 87.1).
    pub fn display(&self) -> String {
        let tenths = self.count * 10 / self.newspapers;
        format!("{}.{}", tenths / 10, tenths % 10)
    }
}

impl fmt::Display for NormalizedTotal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewspaperCount {
    pub country: String,
    pub newspaper: String,
    pub headlines: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryTotal {
    pub country: String,
    pub headlines: u64,
    pub normalized: NormalizedTotal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub newspapers: Vec<NewspaperCount>,
    pub countries: Vec<CountryTotal>,
    pub total: u64,
}

/// Headline counts per newspaper and per country, with country totals
/// normalized by the number of manifest newspapers of that country.
pub fn corpus_stats(corpus: &Corpus) -> Result<CorpusStats, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::Empty);
    }
    let manifest = corpus.manifest();
    let mut per_paper: BTreeMap<&str, u64> = BTreeMap::new();
    for a in corpus.articles() {
        *per_paper.entry(a.newspaper.as_str()).or_default() += 1;
    }

    let mut newspapers = Vec::new();
    let mut countries = Vec::new();
    for country in &manifest.countries {
        let papers: Vec<&str> = manifest.newspapers_of(country).collect();
        if papers.is_empty() {
            return Err(CorpusError::NoNewspapers(country.clone()));
        }
        let mut total = 0;
        for p in &papers {
            let n = per_paper.get(p).copied().unwrap_or(0);
            total += n;
            newspapers.push(NewspaperCount { country: country.clone(), newspaper: p.to_string(), headlines: n });
        }
        countries.push(CountryTotal {
            country: country.clone(),
            headlines: total,
            normalized: NormalizedTotal { count: total, newspapers: papers.len() as u64 },
        });
    }
    Ok(CorpusStats { newspapers, countries, total: corpus.len() as u64 })
}

impl CorpusStats {
    /// One row per newspaper with the country total and its normalized form
    /// repeated on every row, then a grand-total row.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["country", "newspaper", "headlines", "country_total", "normalized_total"])
            .expect("in-memory csv");
        for n in &self.newspapers {
            let c = self.countries.iter().find(|c| c.country == n.country).expect("newspaper country has a total");
            w.write_record([
                n.country.as_str(),
                n.newspaper.as_str(),
                &n.headlines.to_string(),
                &c.headlines.to_string(),
                &c.normalized.display(),
            ])
            .expect("in-memory csv");
        }
        w.write_record(["ALL", "", "", &self.total.to_string(), ""]).expect("in-memory csv");
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}
