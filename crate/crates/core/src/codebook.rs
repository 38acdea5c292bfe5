//! The frame codebook: definitions, examples, indicator questions and the
//! adjective thesaurus for the six frame categories.
//!
//! A [`Codebook`] is immutable once loaded. Its `version` is a SHA-256 digest
//! of the canonical JSON serialization, so two codebooks share a version iff
//! their canonical content is identical.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::frame::FrameLabel;

const DEFAULT_DOCUMENT: &str = include_str!("../codebook/default.json");

#[derive(Debug, thiserror::Error)]
pub enum CodebookError {
    #[error("malformed codebook document: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error("missing entry: {0}")]
    MissingEntry(FrameLabel),
    #[error("duplicate entry: {0}")]
    DuplicateEntry(FrameLabel),
    #[error("empty definition for {0}")]
    EmptyDefinition(FrameLabel),
    #[error("display name for {label} must be {expected:?}, found {found:?}")]
    DisplayName { label: FrameLabel, expected: &'static str, found: String },
    #[error("adjective {adjective:?} listed twice for {label}")]
    RepeatedAdjective { label: FrameLabel, adjective: String },
    #[error("adjective {adjective:?} must be lowercase and non-empty ({label})")]
    BadAdjective { label: FrameLabel, adjective: String },
    #[error("adjective {adjective:?} shared by {first} and {second}")]
    SharedAdjective { adjective: String, first: FrameLabel, second: FrameLabel },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameEntry {
    pub label: FrameLabel,
    pub display_name: String,
    pub definition: String,
    #[serde(default)]
    pub examples: Vec<String>,
    /// Yes/no indicator questions. Stored as reference material only.
    #[serde(default)]
    pub indicator_questions: Vec<String>,
    #[serde(default)]
    pub adjectives: Vec<String>,
}

/// On-disk form of a codebook.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodebookDocument {
    pub preamble: String,
    pub frames: Vec<FrameEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Codebook {
    version: String,
    preamble: String,
    entries: Vec<FrameEntry>,
}

impl Codebook {
    /// Parse and validate a JSON codebook document.
    pub fn from_json(source: &str) -> Result<Codebook, CodebookError> {
        let doc: CodebookDocument = serde_json::from_str(source)?;
        Codebook::from_document(doc)
    }

    /// The codebook shipped with the crate.
    pub fn default_codebook() -> Codebook {
        Codebook::from_json(DEFAULT_DOCUMENT).expect("bundled codebook is valid")
    }

    pub fn default_document_json() -> &'static str {
        DEFAULT_DOCUMENT
    }

    pub fn from_document(doc: CodebookDocument) -> Result<Codebook, CodebookError> {
        let mut slots: Vec<Option<FrameEntry>> = vec![None; FrameLabel::COUNT];
        for entry in doc.frames {
            let label = entry.label;
            if slots[label.index()].is_some() {
                return Err(CodebookError::DuplicateEntry(label));
            }
            validate_entry(&entry)?;
            slots[label.index()] = Some(entry);
        }
        let mut entries = Vec::with_capacity(FrameLabel::COUNT);
        for (slot, label) in slots.into_iter().zip(FrameLabel::ALL) {
            entries.push(slot.ok_or(CodebookError::MissingEntry(label))?);
        }

        let mut owner: BTreeMap<&str, FrameLabel> = BTreeMap::new();
        for entry in &entries {
            for adj in &entry.adjectives {
                if let Some(first) = owner.insert(adj.as_str(), entry.label) {
                    return Err(CodebookError::SharedAdjective { adjective: adj.clone(), first, second: entry.label });
                }
            }
        }

        let mut codebook = Codebook { version: String::new(), preamble: doc.preamble, entries };
        codebook.version = digest(&codebook.to_document());
        Ok(codebook)
    }

    /// Canonical document: entries in canonical label order.
    pub fn to_document(&self) -> CodebookDocument {
        CodebookDocument { preamble: self.preamble.clone(), frames: self.entries.clone() }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("codebook serializes")
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn preamble(&self) -> &str {
        &self.preamble
    }

    /// Entries in canonical order, one per label.
    pub fn entries(&self) -> &[FrameEntry] {
        &self.entries
    }

    pub fn entry(&self, label: FrameLabel) -> &FrameEntry {
        &self.entries[label.index()]
    }

    /// Map from adjective to the frame it belongs to.
    pub fn thesaurus(&self) -> BTreeMap<&str, FrameLabel> {
        self.entries.iter().flat_map(|e| e.adjectives.iter().map(move |a| (a.as_str(), e.label))).collect()
    }

    /// One `<display name>: <definition>` line per frame, canonical order.
    pub fn render_definitions(&self) -> String {
        let lines: Vec<String> =
            self.entries.iter().map(|e| format!("{}: {}", e.display_name, e.definition.trim())).collect();
        lines.join("\n")
    }
}

fn validate_entry(entry: &FrameEntry) -> Result<(), CodebookError> {
    let label = entry.label;
    if entry.definition.trim().is_empty() {
        return Err(CodebookError::EmptyDefinition(label));
    }
    // Parsing of model completions relies on these exact surface forms.
    if entry.display_name != label.display_name() {
        return Err(CodebookError::DisplayName {
            label,
            expected: label.display_name(),
            found: entry.display_name.clone(),
        });
    }
    let mut seen = HashSet::new();
    for adj in &entry.adjectives {
        if adj.trim().is_empty() || adj.to_lowercase() != *adj || adj.trim() != adj {
            return Err(CodebookError::BadAdjective { label, adjective: adj.clone() });
        }
        if !seen.insert(adj.as_str()) {
            return Err(CodebookError::RepeatedAdjective { label, adjective: adj.clone() });
        }
    }
    Ok(())
}

fn digest(doc: &CodebookDocument) -> String {
    let canonical = serde_json::to_vec(doc).expect("codebook serializes");
    format!("sha256:{}", hex::encode(Sha256::digest(&canonical)))
}
