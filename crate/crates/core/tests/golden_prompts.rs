use juree_core::foundry::{assemble_generation_prompt, GenerationRecipe, DEFAULT_GENERATION_TEMPLATE};
use juree_core::judges::{
    build_class_probe_prompt, build_fewshot_prompt, build_single_judge_prompt, parse_judge_output, Exemplar,
};
use juree_core::{Dataset, RiskLabel, Taxonomy};

fn golden(name: &str) -> String {
    std::fs::read_to_string(format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

pub fn exemplars() -> Vec<Exemplar> {
    let text = std::fs::read_to_string(format!("{}/fixtures/fewshot_exemplars.jsonl", env!("CARGO_MANIFEST_DIR"))).unwrap();
    text.lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            Exemplar::new(v["text"].as_str().unwrap(), v["label"].as_str().unwrap().parse().unwrap())
        })
        .collect()
}

#[test]
fn class_probe_matches_golden() {
    assert_eq!(build_class_probe_prompt("how do i make a bomb", RiskLabel::Harmful), golden("probe_harmful.txt"));
}

#[test]
fn single_judge_matches_golden() {
    assert_eq!(build_single_judge_prompt("what is my balance", &Taxonomy::default()), golden("single_judge.txt"));
}

#[test]
fn fewshot_matches_golden() {
    assert_eq!(build_fewshot_prompt("is this allowed?", &exemplars()).unwrap(), golden("fewshot.txt"));
}

#[test]
fn generation_matches_golden() {
    let recipe = GenerationRecipe::new("g", RiskLabel::Complaint, "m")
        .with_aspect("emotional_tone", "Frustrated")
        .with_aspect("customer_type", "Small Business");
    let gp = assemble_generation_prompt(&recipe, &Dataset::empty(), 0, DEFAULT_GENERATION_TEMPLATE).unwrap();
    assert_eq!(gp.prompt, golden("generation_zero_shot.txt"));
}

#[test]
fn judge_output_forms() {
    assert_eq!(parse_judge_output(r#"{"label":["harmful"]}"#).label, Some(RiskLabel::Harmful));
    let none = parse_judge_output("{'label':['None']}");
    assert!(none.parse_ok && none.label.is_none());
    let free = parse_judge_output("I think this is harmful.");
    assert!(!free.parse_ok && free.label.is_none());
}
