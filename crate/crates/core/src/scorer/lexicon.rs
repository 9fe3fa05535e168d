use std::collections::HashMap;
use std::path::Path;

use super::{BackendError, InferenceBackend, ScoreVector};
use crate::taxonomy::{RiskLabel, NUM_CLASSES};

const DEFAULT_LEXICON_JSON: &str = include_str!("../../fixtures/lexicon.json");

/// Lowercase and split on every non-alphanumeric character.
pub fn tokenize(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

/// Fixed per-class keyword lists.
#[derive(Debug, Clone, PartialEq)]
pub struct Lexicon {
    // token -> bitmask over canonical class indices
    index: HashMap<String, u8>,
    words: [Vec<String>; NUM_CLASSES],
}

impl Lexicon {
    pub fn from_json(document: &str) -> Result<Lexicon, BackendError> {
        let raw: HashMap<String, Vec<String>> = serde_json::from_str(document)
            .map_err(|e| BackendError::Protocol(format!("lexicon: {e}")))?;
        let mut words: [Vec<String>; NUM_CLASSES] = Default::default();
        for (name, list) in raw {
            let label: RiskLabel = name
                .parse()
                .map_err(|e| BackendError::Protocol(format!("lexicon: {e}")))?;
            for word in list {
                let normalized: Vec<String> = tokenize(&word).collect();
                if normalized.len() != 1 || normalized[0] != word {
                    return Err(BackendError::Protocol(format!(
                        "lexicon entry {word:?} must be a single lowercase alphanumeric token"
                    )));
                }
                words[label.index()].push(word);
            }
        }
        let mut index: HashMap<String, u8> = HashMap::new();
        for (i, list) in words.iter().enumerate() {
            for w in list {
                *index.entry(w.clone()).or_default() |= 1 << i;
            }
        }
        Ok(Lexicon { index, words })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Lexicon, BackendError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| BackendError::Unavailable(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_json(&text)
    }

    pub fn words(&self, label: RiskLabel) -> &[String] {
        &self.words[label.index()]
    }

    /// Labels whose list contains `token` (already lowercased).
    pub fn classes_of(&self, token: &str) -> Vec<RiskLabel> {
        let mask = self.index.get(token).copied().unwrap_or(0);
        RiskLabel::ALL
            .into_iter()
            .filter(|l| mask & (1 << l.index()) != 0)
            .collect()
    }

    /// Per-class hit counts for `text`.
    pub fn hits(&self, text: &str) -> [u32; NUM_CLASSES] {
        let mut hits = [0u32; NUM_CLASSES];
        for token in tokenize(text) {
            if let Some(&mask) = self.index.get(&token) {
                for (i, h) in hits.iter_mut().enumerate() {
                    if mask & (1 << i) != 0 {
                        *h += 1;
                    }
                }
            }
        }
        hits
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        Lexicon::from_json(DEFAULT_LEXICON_JSON).expect("shipped lexicon is valid")
    }
}

/// Deterministic keyword scorer standing in for a trained encoder:
/// `p = h / (h + 1)` where `h` is the number of lexicon hits for the class.
#[derive(Debug, Clone)]
pub struct LexiconScorer {
    id: String,
    lexicon: Lexicon,
}

impl LexiconScorer {
    pub fn new(lexicon: Lexicon) -> Self {
        LexiconScorer {
            id: "reference-lexicon".to_string(),
            lexicon,
        }
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn score_text(&self, text: &str) -> ScoreVector {
        let hits = self.lexicon.hits(text);
        let probs = hits.map(|h| {
            let h = f64::from(h);
            h / (h + 1.0)
        });
        ScoreVector::new(probs).expect("h/(h+1) lies in [0, 1)")
    }
}

impl Default for LexiconScorer {
    fn default() -> Self {
        LexiconScorer::new(Lexicon::default())
    }
}

impl InferenceBackend for LexiconScorer {
    fn id(&self) -> &str {
        &self.id
    }

    fn score(&self, texts: &[String]) -> Result<Vec<ScoreVector>, BackendError> {
        Ok(texts.iter().map(|t| self.score_text(t)).collect())
    }
}
