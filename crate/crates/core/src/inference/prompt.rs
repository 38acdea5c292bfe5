use serde::{Deserialize, Serialize};

use crate::codebook::Codebook;
use crate::frame::FrameLabel;

/// How the model is asked to express the frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Frame definitions plus headline; the answer is a frame name.
    Definitions,
    /// Adjective thesaurus plus headline; the answer is an adjective.
    Adjectives,
}

impl Strategy {
    pub fn key(self) -> &'static str {
        match self {
            Strategy::Definitions => "definitions",
            Strategy::Adjectives => "adjectives",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "definitions" => Ok(Strategy::Definitions),
            "adjectives" => Ok(Strategy::Adjectives),
            _ => Err(format!("unknown strategy {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassificationPrompt {
    pub article_id: String,
    pub strategy: Strategy,
    pub text: String,
    pub codebook_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PromptError {
    #[error("headline for article {0:?} is empty")]
    EmptyHeadline(String),
}

/// Marks the line carrying the headline. The mock backend keys on it.
pub(crate) const HEADLINE_MARKER: &str = "Headline: ";

pub fn build_prompt(
    codebook: &Codebook,
    article_id: &str,
    headline: &str,
    strategy: Strategy,
) -> Result<ClassificationPrompt, PromptError> {
    let headline = headline.trim();
    if headline.is_empty() {
        return Err(PromptError::EmptyHeadline(article_id.to_string()));
    }
    let text = match strategy {
        Strategy::Definitions => {
            let names: Vec<&str> = FrameLabel::ALL.iter().map(|l| l.display_name()).collect();
            format!(
                "{preamble}\n\nFrame definitions:\n{defs}\n\n{HEADLINE_MARKER}{headline}\n\n\
                 Answer with exactly one frame name from this list: {names}.\nFrame:",
                preamble = codebook.preamble().trim(),
                defs = codebook.render_definitions(),
                names = names.join(", "),
            )
        }
        Strategy::Adjectives => {
            let lists: Vec<String> =
                codebook.entries().iter().map(|e| format!("{}: {}", e.display_name, e.adjectives.join(", "))).collect();
            format!(
                "{preamble}\n\nAdjectives describing each frame:\n{lists}\n\n{HEADLINE_MARKER}{headline}\n\n\
                 Answer with exactly one adjective from the lists above that best describes the frame of the headline.\nAdjective:",
                preamble = codebook.preamble().trim(),
                lists = lists.join("\n"),
            )
        }
    };
    Ok(ClassificationPrompt {
        article_id: article_id.to_string(),
        strategy,
        text,
        codebook_version: codebook.version().to_string(),
    })
}
