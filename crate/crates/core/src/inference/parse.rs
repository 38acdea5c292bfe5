use crate::codebook::Codebook;
use crate::frame::FrameLabel;

use super::ParsedLabel;

/// Lowercase, turn punctuation into spaces and collapse whitespace.
pub fn normalize_completion(raw: &str) -> String {
    let mapped: String =
        raw.to_lowercase().chars().map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' }).collect();
    mapped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Map a raw completion onto a frame.
///
/// Order of rules: exact display name, then a whole-word prefix shared by
/// exactly one display name (short token budgets cut "attribution of
/// responsibility" to "attribution of"), then the adjective thesaurus. Anything
/// else is [`ParsedLabel::Unparseable`].
pub fn parse_label(raw: &str, codebook: &Codebook) -> ParsedLabel {
    let norm = normalize_completion(raw);
    if norm.is_empty() {
        return ParsedLabel::Unparseable;
    }

    let names: Vec<(FrameLabel, &str)> =
        codebook.entries().iter().map(|e| (e.label, e.display_name.as_str())).collect();
    if let Some((label, _)) = names.iter().find(|(_, n)| *n == norm) {
        return ParsedLabel::Frame(*label);
    }

    let tokens: Vec<&str> = norm.split(' ').collect();
    let prefixed: Vec<FrameLabel> = names
        .iter()
        .filter(|(_, n)| {
            let name_tokens: Vec<&str> = n.split(' ').collect();
            tokens.len() < name_tokens.len() && name_tokens[..tokens.len()] == tokens[..]
        })
        .map(|(l, _)| *l)
        .collect();
    if let [only] = prefixed[..] {
        return ParsedLabel::Frame(only);
    }
    if !prefixed.is_empty() {
        return ParsedLabel::Unparseable;
    }

    let thesaurus = codebook.thesaurus();
    if let Some(label) = thesaurus.get(norm.as_str()) {
        return ParsedLabel::Frame(*label);
    }
    let mut hits = tokens.iter().filter_map(|t| thesaurus.get(t)).copied();
    if let Some(first) = hits.next() {
        if hits.all(|h| h == first) {
            return ParsedLabel::Frame(first);
        }
    }
    ParsedLabel::Unparseable
}
