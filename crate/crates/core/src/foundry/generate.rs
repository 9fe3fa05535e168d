use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::debug;

use super::aspects::{display_name, sample_aspects};
use super::{Candidate, FilterReason, FilterStage, FoundryError};
use crate::corpus::{Dataset, Example, Lineage, SynthesisStage};
use crate::judges::prompts::{render, render_example_pairs};
use crate::judges::{ChatClient, ChatRequest, Sampling};
use crate::taxonomy::{RiskLabel, Taxonomy};

pub const DEFAULT_GENERATION_TEMPLATE: &str = include_str!("../../templates/generation.txt");
pub const COUNTERFACTUAL_TEMPLATE: &str = include_str!("../../templates/counterfactual.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecipe {
    pub recipe_id: String,
    pub target_label: RiskLabel,
    /// Aspect key to chosen value. Empty means "sample 1 to 3 per call".
    #[serde(default)]
    pub aspects: BTreeMap<String, String>,
    /// Permit more than three aspects.
    #[serde(default)]
    pub allow_many_aspects: bool,
    #[serde(default)]
    pub n_fewshot: usize,
    pub model_id: String,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub seed: u64,
}

impl GenerationRecipe {
    pub fn new(recipe_id: impl Into<String>, target_label: RiskLabel, model_id: impl Into<String>) -> Self {
        GenerationRecipe {
            recipe_id: recipe_id.into(),
            target_label,
            aspects: BTreeMap::new(),
            allow_many_aspects: false,
            n_fewshot: 0,
            model_id: model_id.into(),
            sampling: Sampling::default(),
            seed: 0,
        }
    }

    pub fn with_aspect(mut self, key: &str, value: &str) -> Self {
        self.aspects.insert(key.to_string(), value.to_string());
        self
    }

    pub fn validate(&self) -> Result<(), FoundryError> {
        let bad = |msg: String| Err(FoundryError::InvalidRecipe(format!("{}: {msg}", self.recipe_id)));
        if self.recipe_id.trim().is_empty() {
            return Err(FoundryError::InvalidRecipe("empty recipe_id".into()));
        }
        if self.aspects.len() > 3 && !self.allow_many_aspects {
            return bad(format!("{} aspects set, at most 3 without allow_many_aspects", self.aspects.len()));
        }
        if let Some((k, _)) = self.aspects.iter().find(|(k, v)| k.trim().is_empty() || v.trim().is_empty()) {
            return bad(format!("aspect {k:?} has an empty name or value"));
        }
        if !(self.sampling.temperature >= 0.0) {
            return bad("temperature must be >= 0".into());
        }
        if !(self.sampling.repetition_penalty > 0.0) {
            return bad("repetition_penalty must be > 0".into());
        }
        Ok(())
    }

    pub fn load_json(text: &str) -> Result<Vec<GenerationRecipe>, FoundryError> {
        // A single recipe or a list of them.
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| FoundryError::InvalidRecipe(e.to_string()))?;
        let recipes: Vec<GenerationRecipe> = if value.is_array() {
            serde_json::from_value(value)
        } else {
            serde_json::from_value(value).map(|r| vec![r])
        }
        .map_err(|e| FoundryError::InvalidRecipe(e.to_string()))?;
        let mut ids = HashSet::new();
        for r in &recipes {
            r.validate()?;
            if !ids.insert(r.recipe_id.as_str()) {
                return Err(FoundryError::InvalidRecipe(format!("duplicate recipe_id {}", r.recipe_id)));
            }
        }
        Ok(recipes)
    }

    pub fn load_path(path: impl AsRef<Path>) -> Result<Vec<GenerationRecipe>, FoundryError> {
        Self::load_json(&std::fs::read_to_string(path)?)
    }

    fn request(&self, prompt: String) -> ChatRequest {
        ChatRequest {
            model_id: self.model_id.clone(),
            prompt,
            sampling: self.sampling,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationPrompt {
    pub prompt: String,
    pub exemplar_ids: Vec<String>,
    pub aspects: BTreeMap<String, String>,
}

fn aspect_instructions(aspects: &BTreeMap<String, String>) -> String {
    aspects
        .iter()
        .map(|(k, v)| format!("- {}: {v}", display_name(k)))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Render the generation template for one call. `rng_seed` drives exemplar
/// choice and, for recipes without fixed aspects, the aspect draw.
pub fn assemble_generation_prompt(
    recipe: &GenerationRecipe,
    seed_pool: &Dataset,
    rng_seed: u64,
    template: &str,
) -> Result<GenerationPrompt, FoundryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let aspects = if recipe.aspects.is_empty() {
        sample_aspects(&mut rng)
    } else {
        recipe.aspects.clone()
    };

    let mut pool: Vec<&Example> = seed_pool
        .examples()
        .iter()
        .filter(|e| e.label == recipe.target_label)
        .collect();
    if pool.len() < recipe.n_fewshot {
        return Err(FoundryError::InsufficientExemplars {
            label: recipe.target_label,
            needed: recipe.n_fewshot,
            available: pool.len(),
        });
    }
    pool.sort_by(|a, b| a.id.cmp(&b.id));
    let chosen: Vec<&Example> = sample(&mut rng, pool.len(), recipe.n_fewshot)
        .into_iter()
        .map(|i| pool[i])
        .collect();

    let examples = if chosen.is_empty() {
        String::new()
    } else {
        let pairs = render_example_pairs(chosen.iter().map(|e| (e.text.as_str(), e.label)));
        format!("\nExamples:\n{pairs}\n")
    };
    let prompt = render(
        template,
        &[
            ("target_label", recipe.target_label.as_str()),
            ("aspect_instructions", &aspect_instructions(&aspects)),
            ("examples", &examples),
        ],
    );
    Ok(GenerationPrompt {
        prompt,
        exemplar_ids: chosen.iter().map(|e| e.id.clone()).collect(),
        aspects,
    })
}

/// Split a completion into candidate texts: one per non-blank line, with
/// list markers and wrapping quotes removed.
pub fn parse_generated_lines(output: &str) -> Vec<String> {
    output
        .lines()
        .map(|line| {
            let mut s = line.trim();
            for marker in ["- ", "* ", "• "] {
                if let Some(rest) = s.strip_prefix(marker) {
                    s = rest;
                }
            }
            // "1." / "2)" style numbering
            let digits = s.chars().take_while(|c| c.is_ascii_digit()).count();
            if digits > 0 {
                let rest = &s[digits..];
                if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
                    s = r;
                }
            }
            let s = s.trim();
            let s = s
                .strip_prefix('"')
                .and_then(|x| x.strip_suffix('"'))
                .unwrap_or(s);
            s.trim().to_string()
        })
        .filter(|s| !s.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateOptions {
    /// Consecutive calls yielding no new candidate before giving up.
    pub retry_budget: u32,
    pub template: String,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            retry_budget: 3,
            template: DEFAULT_GENERATION_TEMPLATE.to_string(),
        }
    }
}

/// Call the chat model until `n` distinct candidates are collected. Call
/// `i` uses prompt seed `recipe.seed + i`.
pub fn generate_candidates<C: ChatClient + ?Sized>(
    recipe: &GenerationRecipe,
    seed_pool: &Dataset,
    n: usize,
    chat: &C,
    options: &GenerateOptions,
) -> Result<Vec<Candidate>, FoundryError> {
    assert!(n >= 1, "n must be positive");
    recipe.validate()?;
    let mut out: Vec<Candidate> = Vec::with_capacity(n);
    let mut seen: HashSet<String> = HashSet::new();
    let mut attempts: u32 = 0;
    let mut unproductive: u32 = 0;
    while out.len() < n {
        let gp = assemble_generation_prompt(
            recipe,
            seed_pool,
            recipe.seed.wrapping_add(attempts as u64),
            &options.template,
        )?;
        attempts += 1;
        let completion = chat.complete(&recipe.request(gp.prompt))?;
        let before = out.len();
        for text in parse_generated_lines(&completion) {
            if out.len() == n {
                break;
            }
            let lineage = Lineage {
                recipe_id: Some(recipe.recipe_id.clone()),
                exemplar_ids: gp.exemplar_ids.clone(),
                ..Lineage::new(SynthesisStage::Generated)
            };
            let example = Example::synthetic(text, recipe.target_label, lineage);
            if seen.insert(example.id.clone()) {
                out.push(Candidate::new(example));
            }
        }
        debug!(recipe = %recipe.recipe_id, attempts, collected = out.len(), "generation call");
        if out.len() == before {
            unproductive += 1;
            if unproductive >= options.retry_budget {
                return Err(FoundryError::Exhausted {
                    partial: out,
                    attempts,
                });
            }
        } else {
            unproductive = 0;
        }
    }
    Ok(out)
}

/// Minimal rewrite of `source` into `target_label`. A rewrite identical to
/// the parent is still returned, flagged `identical_to_parent`.
pub fn counterfactual<C: ChatClient + ?Sized>(
    source: &Example,
    target_label: RiskLabel,
    chat: &C,
    taxonomy: &Taxonomy,
    model_id: &str,
    sampling: Sampling,
) -> Result<Candidate, FoundryError> {
    if target_label == source.label {
        return Err(FoundryError::SameLabel(target_label));
    }
    let class = taxonomy.class(target_label);
    let description = if class.subtypes.is_empty() {
        class.description.clone()
    } else {
        format!("{} Examples: {}.", class.description, class.subtypes.join("; "))
    };
    let prompt = render(
        COUNTERFACTUAL_TEMPLATE,
        &[
            ("source_label", source.label.as_str()),
            ("target_label", target_label.as_str()),
            ("target_description", &description),
            ("text", &source.text),
        ],
    );
    let raw = chat.complete(&ChatRequest {
        model_id: model_id.to_string(),
        prompt,
        sampling,
    })?;
    let text = raw.trim();
    if text.is_empty() {
        return Err(FoundryError::EmptyRewrite);
    }
    let lineage = Lineage {
        parent_id: Some(source.id.clone()),
        ..Lineage::new(SynthesisStage::Counterfactual)
    };
    let mut candidate = Candidate::new(Example::synthetic(text, target_label, lineage));
    if text == source.text.trim() {
        candidate.flag(FilterReason::new(
            FilterStage::Counterfactual,
            "identical_to_parent",
            format!("rewrite of {} is unchanged", source.id),
        ));
    }
    Ok(candidate)
}
