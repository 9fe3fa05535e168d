//! Prompt templates for the LLM-judge baselines.

use thiserror::Error;

use crate::taxonomy::{RiskLabel, Taxonomy};

pub const CLASS_GUIDANCE: &str = include_str!("../../templates/class_guidance.txt");
pub const CLASS_PROBE_TEMPLATE: &str = include_str!("../../templates/class_probe.txt");
pub const SINGLE_JUDGE_TEMPLATE: &str = include_str!("../../templates/single_judge.txt");
pub const FEWSHOT_TEMPLATE: &str = include_str!("../../templates/fewshot.txt");

const START_DELIMITER: &str = "START OF USER INPUT";
const END_DELIMITER: &str = "END OF USER INPUT";

/// Class order of the few-shot examples block.
pub const FEWSHOT_CLASS_ORDER: [RiskLabel; 6] = [
    RiskLabel::Complaint,
    RiskLabel::OffTopic,
    RiskLabel::BankingRelated,
    RiskLabel::SystemAttack,
    RiskLabel::Harmful,
    RiskLabel::Vulnerable,
];

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("few-shot prompts need exactly 2 exemplars per class (12 total), got {got} for {label}")]
    ExemplarCount { label: RiskLabel, got: usize },
}

/// Single-pass substitution of `{name}` placeholders. Braces that do not
/// form a known placeholder are copied through, and substituted values are
/// never rescanned.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(template.len() + vars.iter().map(|(_, v)| v.len()).sum::<usize>());
    let mut rest = template;
    while let Some(pos) = rest.find('{') {
        out.push_str(&rest[..pos]);
        let tail = &rest[pos + 1..];
        let hit = vars.iter().find(|(name, _)| {
            tail.starts_with(name) && tail[name.len()..].starts_with('}')
        });
        match hit {
            Some((name, value)) => {
                out.push_str(value);
                rest = &tail[name.len() + 1..];
            }
            None => {
                out.push('{');
                rest = tail;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Keep user text from forging the input delimiters.
fn neutralize_delimiters(user_text: &str) -> String {
    user_text
        .replace(START_DELIMITER, &START_DELIMITER.to_lowercase())
        .replace(END_DELIMITER, &END_DELIMITER.to_lowercase())
}

/// Per-class probe: asks whether the input belongs to `class_label`.
pub fn build_class_probe_prompt(user_text: &str, class_label: RiskLabel) -> String {
    render(
        CLASS_PROBE_TEMPLATE,
        &[
            ("class_guidance", CLASS_GUIDANCE),
            ("user_prompt", &neutralize_delimiters(user_text)),
            ("class_label", class_label.as_str()),
        ],
    )
}

/// One-pass six-way classification prompt.
pub fn build_single_judge_prompt(user_text: &str, taxonomy: &Taxonomy) -> String {
    let label_list = taxonomy
        .classes()
        .iter()
        .map(|c| c.name.as_str())
        .collect::<Vec<_>>()
        .join(", ");
    render(
        SINGLE_JUDGE_TEMPLATE,
        &[
            ("label_list", &label_list),
            ("class_guidance", CLASS_GUIDANCE),
            ("user_prompt", &neutralize_delimiters(user_text)),
        ],
    )
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Exemplar {
    pub text: String,
    pub label: RiskLabel,
}

impl Exemplar {
    pub fn new(text: impl Into<String>, label: RiskLabel) -> Self {
        Exemplar {
            text: text.into(),
            label,
        }
    }
}

/// `text:`/`label:` pairs separated by `#` lines.
pub fn render_example_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, RiskLabel)>) -> String {
    pairs
        .into_iter()
        .map(|(text, label)| format!("text: {text}\nlabel: {label}"))
        .collect::<Vec<_>>()
        .join("\n#\n")
}

/// Few-shot prompt with two exemplars per class. Within a class, exemplars
/// keep their input order.
pub fn build_fewshot_prompt(user_text: &str, exemplars: &[Exemplar]) -> Result<String, PromptError> {
    for label in RiskLabel::ALL {
        let got = exemplars.iter().filter(|e| e.label == label).count();
        if got != 2 {
            return Err(PromptError::ExemplarCount { label, got });
        }
    }
    let ordered = FEWSHOT_CLASS_ORDER.iter().flat_map(|label| {
        exemplars
            .iter()
            .filter(move |e| e.label == *label)
            .map(|e| (e.text.as_str(), e.label))
    });
    let examples = render_example_pairs(ordered);
    Ok(render(
        FEWSHOT_TEMPLATE,
        &[("examples", &examples), ("user_prompt", user_text)],
    ))
}
