//! One refinement round: generate, round-trip filter, distance filter,
//! triage. The output dataset is a valid seed set for the next round.

use std::collections::HashSet;
use std::path::Path;

use tracing::{info, warn};

use super::{
    distance_filter, generate_candidates, roundtrip_filter, uncertainty_triage, Candidate, DistancePolicy,
    Embedder, FilterReport, FilterState, FoundryError, GenerateOptions, GenerationRecipe, TriageItem, TriagePolicy,
};
use crate::corpus::{merge, Dataset};
use crate::judges::{single_judge_classify, ChatClient, JudgeConfig, JudgeMode};
use crate::jsonl;
use crate::scorer::InferenceBackend;
use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone)]
pub struct RoundConfig {
    pub recipes: Vec<GenerationRecipe>,
    pub n_per_recipe: usize,
    pub generate: GenerateOptions,
    pub judge: JudgeConfig,
    pub distance: DistancePolicy,
    pub triage: TriagePolicy,
}

impl RoundConfig {
    pub fn new(recipes: Vec<GenerationRecipe>, n_per_recipe: usize, judge_model: &str) -> Self {
        RoundConfig {
            recipes,
            n_per_recipe,
            generate: GenerateOptions::default(),
            judge: JudgeConfig::new(judge_model),
            distance: DistancePolicy::default(),
            triage: TriagePolicy::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RoundOutput {
    /// Every generated candidate with its final filter state.
    pub candidates: Vec<Candidate>,
    /// Recipes that stopped short of `n_per_recipe`.
    pub generation_notes: Vec<String>,
    pub roundtrip: FilterReport,
    pub distance: FilterReport,
    pub triage: Vec<TriageItem>,
    /// Seeds plus kept candidates.
    pub dataset: Dataset,
}

pub fn run_round<C, B>(
    seeds: &Dataset,
    config: &RoundConfig,
    chat: &C,
    backend: &B,
    embedder: &dyn Embedder,
    taxonomy: &Taxonomy,
) -> Result<RoundOutput, FoundryError>
where
    C: ChatClient + ?Sized,
    B: InferenceBackend + ?Sized,
{
    let mut candidates: Vec<Candidate> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut notes = Vec::new();
    for recipe in &config.recipes {
        let batch = match generate_candidates(recipe, seeds, config.n_per_recipe, chat, &config.generate) {
            Ok(b) => b,
            Err(FoundryError::Exhausted { partial, attempts }) => {
                let note = format!(
                    "{}: retry budget exhausted after {attempts} calls, {} of {} candidates",
                    recipe.recipe_id,
                    partial.len(),
                    config.n_per_recipe
                );
                warn!("{note}");
                notes.push(note);
                partial
            }
            Err(e) => return Err(e),
        };
        candidates.extend(batch.into_iter().filter(|c| seen.insert(c.id().to_string())));
    }
    info!(candidates = candidates.len(), "generation done");

    let roundtrip = roundtrip_filter(&mut candidates, |text| {
        match single_judge_classify(text, chat, taxonomy, &config.judge, JudgeMode::ZeroShot, None) {
            Ok(o) if o.resolved => Ok(o.label),
            Ok(_) => Err("judge output could not be parsed".to_string()),
            Err(e) => Err(e.to_string()),
        }
    });
    let distance = distance_filter(&mut candidates, seeds, embedder, config.distance)?;

    let kept: Vec<Candidate> = candidates
        .iter()
        .filter(|c| c.filter_state == FilterState::Kept)
        .cloned()
        .collect();
    let triage = uncertainty_triage(&kept, backend, taxonomy, config.triage)?;
    let additions = Dataset::from_examples(kept.into_iter().map(|c| c.example).collect())?;
    let dataset = merge(seeds, &additions);
    info!(
        kept = additions.len(),
        queued = triage.len(),
        dataset = dataset.len(),
        "round done"
    );
    Ok(RoundOutput {
        candidates,
        generation_notes: notes,
        roundtrip,
        distance,
        triage,
        dataset,
    })
}

impl RoundOutput {
    pub fn summary(&self) -> serde_json::Value {
        serde_json::json!({
            "candidates": self.candidates.len(),
            "dataset_size": self.dataset.len(),
            "triage_queued": self.triage.len(),
            "generation_notes": self.generation_notes,
            "roundtrip": self.roundtrip.summary(),
            "distance": self.distance.summary(),
        })
    }

    /// Write `dataset.jsonl`, `candidates.jsonl`, `roundtrip.jsonl`,
    /// `distance.jsonl`, `triage.jsonl` and `summary.json` into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), FoundryError> {
        std::fs::create_dir_all(dir)?;
        self.dataset.save(dir.join("dataset.jsonl"))?;
        jsonl::write_path(dir.join("candidates.jsonl"), &self.candidates)?;
        jsonl::write_path(dir.join("roundtrip.jsonl"), &self.roundtrip.records)?;
        jsonl::write_path(dir.join("distance.jsonl"), &self.distance.records)?;
        jsonl::write_path(dir.join("triage.jsonl"), &self.triage)?;
        let mut summary = serde_json::to_string_pretty(&self.summary()).expect("summary serializes");
        summary.push('\n');
        std::fs::write(dir.join("summary.json"), summary)?;
        Ok(())
    }
}
