//! LLM-as-judge baselines.
//!
//! A single judge sends one prompt covering all six classes. A multi-judge
//! sends one yes/no probe per class and resolves competing claims by the
//! taxonomy's severity order, banking_related last.

mod http;
pub mod prompts;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::{RiskLabel, Taxonomy};

pub use http::{ChatEndpointConfig, HttpChatClient, ENV_API_KEY, ENV_BASE_URL};
pub use prompts::{
    build_class_probe_prompt, build_fewshot_prompt, build_single_judge_prompt, render,
    render_example_pairs, Exemplar, PromptError, CLASS_GUIDANCE, CLASS_PROBE_TEMPLATE,
    FEWSHOT_CLASS_ORDER, FEWSHOT_TEMPLATE, SINGLE_JUDGE_TEMPLATE,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChatError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("unexpected response: {0}")]
    Protocol(String),
    #[error("gave up after {attempts} attempts: {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub repetition_penalty: f64,
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling {
            temperature: 0.0,
            repetition_penalty: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model_id: String,
    pub prompt: String,
    pub sampling: Sampling,
}

/// A text-completion model. Transport problems must surface as errors,
/// never as an empty success.
pub trait ChatClient: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError>;

    /// Whether `complete` may be called from several threads at once.
    fn concurrent(&self) -> bool {
        true
    }
}

impl<C: ChatClient + ?Sized> ChatClient for &C {
    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        (**self).complete(request)
    }
    fn concurrent(&self) -> bool {
        (**self).concurrent()
    }
}

impl<C: ChatClient + ?Sized> ChatClient for std::sync::Arc<C> {
    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        (**self).complete(request)
    }
    fn concurrent(&self) -> bool {
        (**self).concurrent()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JudgeVerdict {
    /// `None` for an explicit `"None"` answer or a parse failure.
    pub label: Option<RiskLabel>,
    pub raw: String,
    pub parse_ok: bool,
}

#[derive(Deserialize)]
struct LabelPayload {
    label: Vec<String>,
}

fn strip_code_fence(s: &str) -> &str {
    let Some(inner) = s.strip_prefix("```") else {
        return s;
    };
    let inner = inner.strip_prefix("json").unwrap_or(inner);
    inner.strip_suffix("```").unwrap_or(inner).trim()
}

/// Parse `{"label": [X]}` where `X` is a class name or `"None"`.
/// Single-quoted JSON is accepted. Never fails: unparseable answers come
/// back with `parse_ok == false`.
pub fn parse_judge_output(raw: &str) -> JudgeVerdict {
    let failed = || JudgeVerdict {
        label: None,
        raw: raw.to_string(),
        parse_ok: false,
    };
    let body = strip_code_fence(raw.trim()).replace('\'', "\"");
    let Ok(payload) = serde_json::from_str::<LabelPayload>(&body) else {
        return failed();
    };
    let [answer] = payload.label.as_slice() else {
        return failed();
    };
    if answer == "None" {
        return JudgeVerdict {
            label: None,
            raw: raw.to_string(),
            parse_ok: true,
        };
    }
    match answer.parse::<RiskLabel>() {
        Ok(label) => JudgeVerdict {
            label: Some(label),
            raw: raw.to_string(),
            parse_ok: true,
        },
        Err(_) => failed(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JudgeConfig {
    pub model_id: String,
    pub sampling: Sampling,
    /// Returned, flagged unresolved, when the judge gives no usable label.
    pub fallback: RiskLabel,
    /// Run multi-judge probes concurrently when the client allows it.
    pub parallel: bool,
}

impl JudgeConfig {
    pub fn new(model_id: impl Into<String>) -> Self {
        JudgeConfig {
            model_id: model_id.into(),
            sampling: Sampling::default(),
            fallback: RiskLabel::OffTopic,
            parallel: false,
        }
    }

    fn request(&self, prompt: String) -> ChatRequest {
        ChatRequest {
            model_id: self.model_id.clone(),
            prompt,
            sampling: self.sampling,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JudgeMode {
    ZeroShot,
    FewShot,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JudgeOutcome {
    pub label: RiskLabel,
    /// False when `label` is the configured fallback.
    pub resolved: bool,
    /// Multi-judge: classes whose probe claimed the input.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub claims: Vec<RiskLabel>,
    /// Multi-judge: classes whose probe failed or could not be parsed.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub undecided: Vec<RiskLabel>,
}

#[derive(Debug, Error, PartialEq)]
pub enum JudgeError {
    #[error("few-shot mode requires exemplars")]
    MissingExemplars,
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Chat(#[from] ChatError),
}

/// One call, one label.
pub fn single_judge_classify<C: ChatClient + ?Sized>(
    text: &str,
    chat: &C,
    taxonomy: &Taxonomy,
    config: &JudgeConfig,
    mode: JudgeMode,
    exemplars: Option<&[Exemplar]>,
) -> Result<JudgeOutcome, JudgeError> {
    let prompt = match mode {
        JudgeMode::ZeroShot => build_single_judge_prompt(text, taxonomy),
        JudgeMode::FewShot => {
            build_fewshot_prompt(text, exemplars.ok_or(JudgeError::MissingExemplars)?)?
        }
    };
    let raw = chat.complete(&config.request(prompt))?;
    let verdict = parse_judge_output(&raw);
    Ok(match verdict.label {
        Some(label) => JudgeOutcome {
            label,
            resolved: true,
            claims: Vec::new(),
            undecided: Vec::new(),
        },
        None => JudgeOutcome {
            label: config.fallback,
            resolved: false,
            claims: Vec::new(),
            undecided: Vec::new(),
        },
    })
}

/// One probe per class, resolved by severity with banking_related last.
/// Fails only when every probe fails at the transport level.
pub fn multi_judge_classify<C: ChatClient + ?Sized>(
    text: &str,
    chat: &C,
    taxonomy: &Taxonomy,
    config: &JudgeConfig,
) -> Result<JudgeOutcome, JudgeError> {
    let probe = |label: RiskLabel| -> Result<JudgeVerdict, ChatError> {
        let raw = chat.complete(&config.request(build_class_probe_prompt(text, label)))?;
        Ok(parse_judge_output(&raw))
    };

    let results: Vec<(RiskLabel, Result<JudgeVerdict, ChatError>)> =
        if config.parallel && chat.concurrent() {
            std::thread::scope(|s| {
                let handles: Vec<_> = RiskLabel::ALL
                    .iter()
                    .map(|&label| (label, s.spawn(move || probe(label))))
                    .collect();
                handles
                    .into_iter()
                    .map(|(label, h)| (label, h.join().expect("probe thread panicked")))
                    .collect()
            })
        } else {
            RiskLabel::ALL.iter().map(|&l| (l, probe(l))).collect()
        };

    let mut claims = Vec::new();
    let mut undecided = Vec::new();
    let mut last_error = None;
    for (label, result) in results {
        match result {
            Ok(v) if v.label == Some(label) => claims.push(label),
            Ok(v) if v.parse_ok => {}
            Ok(_) => undecided.push(label),
            Err(e) => {
                undecided.push(label);
                last_error = Some(e);
            }
        }
    }
    if claims.is_empty() && undecided.len() == RiskLabel::ALL.len() {
        if let Some(e) = last_error {
            return Err(e.into());
        }
    }

    let winner = claims
        .iter()
        .copied()
        .min_by_key(|l| taxonomy.severity_rank(*l));
    Ok(match winner {
        Some(label) => JudgeOutcome {
            label,
            resolved: true,
            claims,
            undecided,
        },
        None => JudgeOutcome {
            label: config.fallback,
            resolved: false,
            claims,
            undecided,
        },
    })
}
