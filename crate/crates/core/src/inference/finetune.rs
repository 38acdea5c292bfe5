use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::frame::FrameLabel;

/// Appended to every fine-tuning prompt so the model learns where the
/// completion starts.
pub const PROMPT_SEPARATOR: &str = "\n\n###\n\n";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledHeadline {
    pub article_id: String,
    pub headline: String,
    pub label: FrameLabel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinetuneExample {
    pub prompt: String,
    pub completion: String,
}

impl FinetuneExample {
    pub fn new(headline: &str, label: FrameLabel) -> Self {
        FinetuneExample {
            prompt: format!("{}{PROMPT_SEPARATOR}", headline.trim()),
            completion: format!(" {}", label.display_name()),
        }
    }
}

/// Write `{prompt, completion}` JSON Lines ordered by article id. Returns the
/// number of lines written.
pub fn export_finetune<W: Write>(labeled: &[LabeledHeadline], mut out: W) -> io::Result<usize> {
    let mut sorted: Vec<&LabeledHeadline> = labeled.iter().collect();
    sorted.sort_by(|a, b| a.article_id.cmp(&b.article_id));
    for item in &sorted {
        serde_json::to_writer(&mut out, &FinetuneExample::new(&item.headline, item.label))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(sorted.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn items() -> Vec<LabeledHeadline> {
        vec![
            LabeledHeadline {
                article_id: "b2".into(),
                headline: "Police clash with protesters".into(),
                label: FrameLabel::Conflict,
            },
            LabeledHeadline {
                article_id: "a1".into(),
                headline: "Nurse tells of losing her job".into(),
                label: FrameLabel::HumanInterest,
            },
        ]
    }

    #[test]
    fn golden_two_lines() {
        let mut buf = Vec::new();
        assert_eq!(export_finetune(&items(), &mut buf).unwrap(), 2);
        let expected = concat!(
            r#"{"prompt":"Nurse tells of losing her job\n\n###\n\n","completion":" human interest"}"#,
            "\n",
            r#"{"prompt":"Police clash with protesters\n\n###\n\n","completion":" conflict"}"#,
            "\n",
        );
        assert_eq!(String::from_utf8(buf).unwrap(), expected);
    }

    #[test]
    fn re_export_is_byte_identical() {
        let mut a = Vec::new();
        let mut b = Vec::new();
        export_finetune(&items(), &mut a).unwrap();
        let mut reversed = items();
        reversed.reverse();
        export_finetune(&reversed, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn completions_use_display_names() {
        let all: Vec<LabeledHeadline> = FrameLabel::ALL
            .iter()
            .enumerate()
            .map(|(i, l)| LabeledHeadline { article_id: i.to_string(), headline: format!("h{i}"), label: *l })
            .collect();
        let mut buf = Vec::new();
        export_finetune(&all, &mut buf).unwrap();
        for line in String::from_utf8(buf).unwrap().lines() {
            let ex: FinetuneExample = serde_json::from_str(line).unwrap();
            let name = ex.completion.strip_prefix(' ').unwrap();
            assert!(FrameLabel::ALL.iter().any(|l| l.display_name() == name));
        }
    }
}
