use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// The six frame categories: five generic news frames plus "no frame".
///
/// The declaration order is the canonical order used everywhere a
/// deterministic listing is needed (prompts, matrices, reports).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameLabel {
    AttributionOfResponsibility,
    HumanInterest,
    Conflict,
    Morality,
    EconomicConsequences,
    NoFrame,
}

impl FrameLabel {
    pub const COUNT: usize = 6;

    pub const ALL: [FrameLabel; 6] = [
        FrameLabel::AttributionOfResponsibility,
        FrameLabel::HumanInterest,
        FrameLabel::Conflict,
        FrameLabel::Morality,
        FrameLabel::EconomicConsequences,
        FrameLabel::NoFrame,
    ];

    /// Position in canonical order, used as a matrix index.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<FrameLabel> {
        Self::ALL.get(i).copied()
    }

    /// Lowercase surface form used in prompts, completions and parsing.
    pub fn display_name(self) -> &'static str {
        match self {
            FrameLabel::AttributionOfResponsibility => "attribution of responsibility",
            FrameLabel::HumanInterest => "human interest",
            FrameLabel::Conflict => "conflict",
            FrameLabel::Morality => "morality",
            FrameLabel::EconomicConsequences => "economic consequences",
            FrameLabel::NoFrame => "no frame",
        }
    }

    /// Identifier as it appears in JSON documents.
    pub fn key(self) -> &'static str {
        match self {
            FrameLabel::AttributionOfResponsibility => "attribution_of_responsibility",
            FrameLabel::HumanInterest => "human_interest",
            FrameLabel::Conflict => "conflict",
            FrameLabel::Morality => "morality",
            FrameLabel::EconomicConsequences => "economic_consequences",
            FrameLabel::NoFrame => "no_frame",
        }
    }

    /// CamelCase name used in diagnostics.
    pub fn name(self) -> &'static str {
        match self {
            FrameLabel::AttributionOfResponsibility => "AttributionOfResponsibility",
            FrameLabel::HumanInterest => "HumanInterest",
            FrameLabel::Conflict => "Conflict",
            FrameLabel::Morality => "Morality",
            FrameLabel::EconomicConsequences => "EconomicConsequences",
            FrameLabel::NoFrame => "NoFrame",
        }
    }
}

impl fmt::Display for FrameLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown frame label: {0:?}")]
pub struct UnknownLabel(pub String);

impl FromStr for FrameLabel {
    type Err = UnknownLabel;

    /// Accepts the JSON key, the CamelCase name, the display name, or the
    /// two-letter abbreviations used on the command line.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        for label in Self::ALL {
            if t == label.key() || t == label.name() || t.eq_ignore_ascii_case(label.display_name()) {
                return Ok(label);
            }
        }
        let label = match t.to_ascii_uppercase().as_str() {
            "AR" => FrameLabel::AttributionOfResponsibility,
            "HI" => FrameLabel::HumanInterest,
            "CF" => FrameLabel::Conflict,
            "MO" => FrameLabel::Morality,
            "EC" => FrameLabel::EconomicConsequences,
            "NF" => FrameLabel::NoFrame,
            _ => return Err(UnknownLabel(s.to_string())),
        };
        Ok(label)
    }
}
