//! Classical text augmentation and chat-based backtranslation.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Candidate, FilterReason, FilterStage, FoundryError};
use crate::corpus::{Example, Lineage, SynthesisStage};
use crate::judges::prompts::render;
use crate::judges::{ChatClient, ChatRequest, Sampling};

pub const TRANSLATE_TEMPLATE: &str = include_str!("../../templates/translate.txt");
const SOURCE_LANGUAGE: &str = "English";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugmentOp {
    Delete,
    Insert,
    Swap,
}

impl AugmentOp {
    pub fn as_str(self) -> &'static str {
        match self {
            AugmentOp::Delete => "delete",
            AugmentOp::Insert => "insert",
            AugmentOp::Swap => "swap",
        }
    }
}

impl fmt::Display for AugmentOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AugmentOp {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "delete" => Ok(AugmentOp::Delete),
            "insert" => Ok(AugmentOp::Insert),
            "swap" => Ok(AugmentOp::Swap),
            _ => Err(format!("unknown augmentation op {s:?}")),
        }
    }
}

pub trait SynonymProvider {
    /// Candidate replacements for a lowercase word; empty when unknown.
    fn synonyms(&self, word: &str) -> Vec<String>;
}

/// Word-to-synonyms table. The default is a small embedded fixture.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Thesaurus {
    table: BTreeMap<String, Vec<String>>,
}

impl Thesaurus {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let mut table: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (w, s) in pairs {
            table.entry(w.to_lowercase()).or_default().push(s.to_string());
        }
        Thesaurus { table }
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(text)?;
        Ok(Thesaurus {
            table: raw.into_iter().map(|(k, v)| (k.to_lowercase(), v)).collect(),
        })
    }

    pub fn embedded() -> Self {
        Self::from_json(include_str!("../../fixtures/thesaurus.json")).expect("embedded thesaurus parses")
    }
}

impl SynonymProvider for Thesaurus {
    fn synonyms(&self, word: &str) -> Vec<String> {
        self.table.get(word).cloned().unwrap_or_default()
    }
}

/// Apply one augmentation op over whitespace tokens. Output tokens are
/// joined by single spaces; if no token changes the input is returned as is.
pub fn augment(text: &str, op: AugmentOp, p: f64, seed: u64, synonyms: &dyn SynonymProvider) -> String {
    assert!((0.0..=1.0).contains(&p), "p must be in [0, 1]");
    let tokens: Vec<&str> = text.split_whitespace().collect();
    assert!(!tokens.is_empty(), "text must contain a token");
    if p == 0.0 {
        return text.to_string();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut changed = false;
    let out: Vec<String> = match op {
        AugmentOp::Delete => {
            let keep: Vec<bool> = tokens.iter().map(|_| !rng.random_bool(p)).collect();
            let mut out: Vec<String> = tokens
                .iter()
                .zip(&keep)
                .filter(|(_, k)| **k)
                .map(|(t, _)| t.to_string())
                .collect();
            if out.is_empty() {
                out.push(tokens[rng.random_range(0..tokens.len())].to_string());
            }
            changed = out.len() != tokens.len();
            out
        }
        AugmentOp::Insert => {
            // One gap after every token.
            let mut out = Vec::with_capacity(tokens.len() * 2);
            for t in &tokens {
                out.push(t.to_string());
                if rng.random_bool(p) {
                    out.push(tokens[rng.random_range(0..tokens.len())].to_string());
                    changed = true;
                }
            }
            out
        }
        AugmentOp::Swap => tokens
            .iter()
            .map(|t| {
                let options = synonyms.synonyms(&t.to_lowercase());
                if !options.is_empty() && rng.random_bool(p) {
                    changed = true;
                    options[rng.random_range(0..options.len())].clone()
                } else {
                    t.to_string()
                }
            })
            .collect(),
    };
    if changed {
        out.join(" ")
    } else {
        text.to_string()
    }
}

/// Augmented copy of `example` with the same label.
pub fn augment_example(
    example: &Example,
    op: AugmentOp,
    p: f64,
    seed: u64,
    synonyms: &dyn SynonymProvider,
) -> Candidate {
    let text = augment(&example.text, op, p, seed, synonyms);
    let lineage = Lineage {
        parent_id: Some(example.id.clone()),
        ..Lineage::new(SynthesisStage::Augmented)
    };
    Candidate::new(Example::synthetic(text, example.label, lineage))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Backtranslation {
    pub intermediate: String,
    pub text: String,
}

fn translate<C: ChatClient + ?Sized>(
    chat: &C,
    model_id: &str,
    sampling: Sampling,
    text: &str,
    from: &str,
    to: &str,
) -> Result<String, FoundryError> {
    let prompt = render(
        TRANSLATE_TEMPLATE,
        &[("source_language", from), ("target_language", to), ("text", text)],
    );
    let out = chat.complete(&ChatRequest {
        model_id: model_id.to_string(),
        prompt,
        sampling,
    })?;
    let out = out.trim();
    if out.is_empty() {
        return Err(FoundryError::EmptyTranslation);
    }
    Ok(out.to_string())
}

/// English to `pivot` and back, using the chat model as translator.
pub fn backtranslate<C: ChatClient + ?Sized>(
    text: &str,
    pivot: &str,
    chat: &C,
    model_id: &str,
    sampling: Sampling,
) -> Result<Backtranslation, FoundryError> {
    if pivot.trim().is_empty() {
        return Err(FoundryError::EmptyPivot);
    }
    if text.trim().is_empty() {
        return Err(FoundryError::EmptyText);
    }
    let intermediate = translate(chat, model_id, sampling, text, SOURCE_LANGUAGE, pivot)?;
    let text = translate(chat, model_id, sampling, &intermediate, pivot, SOURCE_LANGUAGE)?;
    Ok(Backtranslation { intermediate, text })
}

/// Backtranslated copy of `example`; both translations go into the audit
/// trail in `filter_reasons`.
pub fn backtranslate_example<C: ChatClient + ?Sized>(
    example: &Example,
    pivot: &str,
    chat: &C,
    model_id: &str,
    sampling: Sampling,
) -> Result<Candidate, FoundryError> {
    let bt = backtranslate(&example.text, pivot, chat, model_id, sampling)?;
    let lineage = Lineage {
        parent_id: Some(example.id.clone()),
        pivot: Some(pivot.to_string()),
        ..Lineage::new(SynthesisStage::Backtranslated)
    };
    let mut c = Candidate::new(Example::synthetic(bt.text.clone(), example.label, lineage));
    c.filter_reasons.push(FilterReason::new(FilterStage::Backtranslation, "intermediate", bt.intermediate));
    c.filter_reasons.push(FilterReason::new(FilterStage::Backtranslation, "final", bt.text));
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Origin;
    use crate::taxonomy::RiskLabel;
    use crate::testing::{FnChat, LexiconChat};
    use proptest::prelude::*;

    #[test]
    fn swap_with_single_entry_provider() {
        let t = Thesaurus::from_pairs([("angry", "furious")]);
        assert_eq!(augment("angry customer", AugmentOp::Swap, 1.0, 0, &t), "furious customer");
    }

    #[test]
    fn delete_all_keeps_one() {
        let t = Thesaurus::default();
        for seed in 0..50 {
            let out = augment("a b c", AugmentOp::Delete, 1.0, seed, &t);
            assert_eq!(out.split_whitespace().count(), 1);
            assert!(["a", "b", "c"].contains(&out.as_str()));
        }
    }

    #[test]
    fn insert_all_doubles() {
        let out = augment("a b c", AugmentOp::Insert, 1.0, 3, &Thesaurus::default());
        let toks: Vec<&str> = out.split_whitespace().collect();
        assert_eq!(toks.len(), 6);
        assert_eq!([toks[0], toks[2], toks[4]], ["a", "b", "c"]);
        assert!(toks.iter().all(|t| ["a", "b", "c"].contains(t)));
    }

    #[test]
    fn embedded_thesaurus_loads() {
        let t = Thesaurus::embedded();
        assert!(t.synonyms("angry").contains(&"furious".to_string()));
        assert!(t.synonyms("zzz").is_empty());
    }

    #[test]
    fn augmented_example_keeps_label() {
        let ex = Example::seed("i am angry about this fee", RiskLabel::Complaint, Origin::Internal);
        let c = augment_example(&ex, AugmentOp::Swap, 1.0, 1, &Thesaurus::embedded());
        assert_eq!(c.label(), RiskLabel::Complaint);
        assert_eq!(c.stage(), SynthesisStage::Augmented);
        assert_ne!(c.text(), ex.text);
        c.example.validate().unwrap();
    }

    #[test]
    fn backtranslation_roundtrip_with_reversible_stub() {
        let ex = Example::seed("please transfer my savings", RiskLabel::BankingRelated, Origin::Internal);
        let chat = LexiconChat::default();
        let c = backtranslate_example(&ex, "French", &chat, "m", Sampling::default()).unwrap();
        assert_eq!(c.text(), ex.text);
        assert_eq!(c.example.lineage.as_ref().unwrap().pivot.as_deref(), Some("French"));
        let codes: Vec<&str> = c.filter_reasons.iter().map(|r| r.code.as_str()).collect();
        assert_eq!(codes, ["intermediate", "final"]);
        assert_ne!(c.filter_reasons[0].detail, ex.text);
        assert_eq!(c.filter_reasons[1].detail, ex.text);
    }

    #[test]
    fn backtranslation_errors() {
        let chat = FnChat::new(|_| Ok(String::new()));
        assert!(matches!(backtranslate("x", "", &chat, "m", Sampling::default()), Err(FoundryError::EmptyPivot)));
        assert!(matches!(backtranslate(" ", "de", &chat, "m", Sampling::default()), Err(FoundryError::EmptyText)));
        assert!(matches!(
            backtranslate("x", "de", &chat, "m", Sampling::default()),
            Err(FoundryError::EmptyTranslation)
        ));
        assert_eq!(chat.calls(), 1);
    }

    fn op() -> impl Strategy<Value = AugmentOp> {
        prop_oneof![Just(AugmentOp::Delete), Just(AugmentOp::Insert), Just(AugmentOp::Swap)]
    }

    proptest! {
        #[test]
        fn p_zero_is_identity(text in "[a-z ]{0,30}[a-z]", op in op(), seed: u64) {
            prop_assert_eq!(augment(&text, op, 0.0, seed, &Thesaurus::embedded()), text);
        }

        #[test]
        fn deterministic_and_label_preserving(
            words in prop::collection::vec("[a-z]{1,6}|angry|help|money", 1..12),
            op in op(),
            p in 0.0f64..=1.0,
            seed: u64,
        ) {
            let text = words.join(" ");
            let t = Thesaurus::embedded();
            let a = augment(&text, op, p, seed, &t);
            prop_assert_eq!(&a, &augment(&text, op, p, seed, &t));
            prop_assert!(!a.split_whitespace().next().is_none());
            let ex = Example::seed(text.clone(), RiskLabel::Vulnerable, Origin::External);
            prop_assert_eq!(augment_example(&ex, op, p, seed, &t).label(), RiskLabel::Vulnerable);
            match op {
                AugmentOp::Delete => prop_assert!(a.split_whitespace().count() <= words.len()),
                AugmentOp::Insert => prop_assert!(a.split_whitespace().count() >= words.len()),
                AugmentOp::Swap => {}
            }
        }
    }
}
