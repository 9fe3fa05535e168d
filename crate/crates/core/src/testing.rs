//! Deterministic doubles for inference backends and chat models. Used by the
//! test suites, the acceptance harness and the CLI's offline mode.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::judges::{ChatClient, ChatError, ChatRequest};
use crate::scorer::{multiclass_decision, BackendError, InferenceBackend, Lexicon, LexiconScorer, ScoreVector};
use crate::taxonomy::{RiskLabel, Taxonomy};

/// Wraps a backend and records the size of every `score` call.
pub struct CountingBackend<B = LexiconScorer> {
    inner: B,
    sizes: Mutex<Vec<usize>>,
    fail_on: Option<usize>,
    delay: Option<Duration>,
}

impl CountingBackend<LexiconScorer> {
    pub fn reference() -> Self {
        CountingBackend::new(LexiconScorer::default())
    }
}

impl<B: InferenceBackend> CountingBackend<B> {
    pub fn new(inner: B) -> Self {
        CountingBackend {
            inner,
            sizes: Mutex::new(Vec::new()),
            fail_on: None,
            delay: None,
        }
    }

    /// Fail the zero-based `n`th call with a transport error.
    pub fn fail_on_call(mut self, n: usize) -> Self {
        self.fail_on = Some(n);
        self
    }

    /// Sleep this long in every call, regardless of batch size.
    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = Some(delay);
        self
    }

    pub fn call_sizes(&self) -> Vec<usize> {
        self.sizes.lock().unwrap().clone()
    }

    pub fn calls(&self) -> usize {
        self.sizes.lock().unwrap().len()
    }
}

impl<B: InferenceBackend> InferenceBackend for CountingBackend<B> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn score(&self, texts: &[String]) -> Result<Vec<ScoreVector>, BackendError> {
        let call = {
            let mut sizes = self.sizes.lock().unwrap();
            sizes.push(texts.len());
            sizes.len() - 1
        };
        if let Some(d) = self.delay {
            std::thread::sleep(d);
        }
        if self.fail_on == Some(call) {
            return Err(BackendError::Transport(format!("injected failure on call {call}")));
        }
        self.inner.score(texts)
    }
}

/// Returns the same vector for every text.
pub struct ConstantBackend {
    scores: ScoreVector,
}

impl ConstantBackend {
    pub fn new(scores: ScoreVector) -> Self {
        ConstantBackend { scores }
    }

    /// banking_related = 1, everything else 0.
    pub fn banking() -> Self {
        Self::new(ScoreVector::from_pairs(&[(RiskLabel::BankingRelated, 1.0)]).unwrap())
    }
}

impl InferenceBackend for ConstantBackend {
    fn id(&self) -> &str {
        "constant"
    }

    fn score(&self, texts: &[String]) -> Result<Vec<ScoreVector>, BackendError> {
        Ok(vec![self.scores; texts.len()])
    }
}

/// Replays canned responses in order, repeating the last one.
pub struct ScriptedChat {
    responses: Vec<String>,
    prompts: Mutex<Vec<String>>,
}

impl ScriptedChat {
    pub fn new<I, S>(responses: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let responses: Vec<String> = responses.into_iter().map(Into::into).collect();
        assert!(!responses.is_empty(), "need at least one response");
        ScriptedChat {
            responses,
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }

    pub fn calls(&self) -> usize {
        self.prompts.lock().unwrap().len()
    }
}

impl ChatClient for ScriptedChat {
    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        let mut prompts = self.prompts.lock().unwrap();
        let i = prompts.len().min(self.responses.len() - 1);
        prompts.push(request.prompt.clone());
        Ok(self.responses[i].clone())
    }
}

type ChatFn = dyn Fn(&ChatRequest) -> Result<String, ChatError> + Send + Sync;

/// Chat model backed by a closure; records prompts.
pub struct FnChat {
    f: Box<ChatFn>,
    prompts: Mutex<Vec<String>>,
}

impl FnChat {
    pub fn new<F>(f: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<String, ChatError> + Send + Sync + 'static,
    {
        FnChat {
            f: Box::new(f),
            prompts: Mutex::new(Vec::new()),
        }
    }

    pub fn calls(&self) -> usize {
        self.prompts.lock().unwrap().len()
    }

    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().unwrap().clone()
    }
}

impl ChatClient for FnChat {
    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        self.prompts.lock().unwrap().push(request.prompt.clone());
        (self.f)(request)
    }
}

const FILLERS: &[&str] = &[
    "i have a question about my {a} and {b}",
    "can you help me with {a} {b}",
    "{a} {b} please",
    "why is there a {a} on my {b}",
    "tell me about {a} and {b} today",
    "what about the {a} {b} thing",
    "my friend said {a} {b}",
    "quick one on {a} then {b}",
];

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn between<'a>(s: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = s.find(start)? + start.len();
    let to = s[from..].find(end)? + from;
    Some(&s[from..to])
}

fn quoted_label(prompt: &str, marker: &str) -> Option<RiskLabel> {
    between(prompt, marker, "\"")?.parse().ok()
}

/// Offline stand-in for an LLM, driven by the reference lexicon.
///
/// - generation prompts: lines built from the target class's keywords
/// - judge prompts (single, few-shot, per-class probe): the reference
///   scorer's argmax, in the judge output format
/// - counterfactual prompts: the source text plus target-class keywords
/// - translation prompts: every token reversed, so a round trip is exact
///
/// Output depends only on the prompt, so runs are reproducible.
pub struct LexiconChat {
    scorer: LexiconScorer,
    taxonomy: Taxonomy,
    lines_per_call: usize,
    noise_every: usize,
    calls: AtomicUsize,
}

impl Default for LexiconChat {
    fn default() -> Self {
        LexiconChat::new(Lexicon::default())
    }
}

impl LexiconChat {
    pub fn new(lexicon: Lexicon) -> Self {
        LexiconChat {
            scorer: LexiconScorer::new(lexicon),
            taxonomy: Taxonomy::default(),
            lines_per_call: 3,
            noise_every: 0,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn lines_per_call(mut self, n: usize) -> Self {
        self.lines_per_call = n;
        self
    }

    /// Roughly one generated line in `n` uses another class's keywords, so
    /// round-trip filtering has something to reject. 0 disables.
    pub fn noise_every(mut self, n: usize) -> Self {
        self.noise_every = n;
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    fn argmax(&self, text: &str) -> RiskLabel {
        multiclass_decision(&self.scorer.score_text(text), &self.taxonomy).chosen
    }

    fn line(&self, rng: &mut ChaCha8Rng, label: RiskLabel) -> String {
        let words = self.scorer.lexicon().words(label);
        let a = &words[rng.random_range(0..words.len())];
        let b = &words[rng.random_range(0..words.len())];
        FILLERS[rng.random_range(0..FILLERS.len())]
            .replace("{a}", a)
            .replace("{b}", b)
    }

    fn generate(&self, prompt: &str, label: RiskLabel) -> String {
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(prompt));
        (0..self.lines_per_call)
            .map(|_| {
                let noisy = self.noise_every > 0 && rng.random_range(0..self.noise_every) == 0;
                let l = if noisy {
                    RiskLabel::ALL[(label.index() + 1) % RiskLabel::ALL.len()]
                } else {
                    label
                };
                self.line(&mut rng, l)
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    fn respond(&self, prompt: &str) -> Result<String, ChatError> {
        if prompt.starts_with("Translate the following text") {
            let text = prompt
                .split_once("\n\n")
                .map(|(_, t)| t.trim_end_matches('\n'))
                .ok_or_else(|| ChatError::Protocol("no text to translate".into()))?;
            return Ok(text
                .split_whitespace()
                .map(|t| t.chars().rev().collect::<String>())
                .collect::<Vec<_>>()
                .join(" "));
        }
        if prompt.starts_with("Rewrite the user message below") {
            let target = quoted_label(prompt, "belongs to the class label \"")
                .ok_or_else(|| ChatError::Protocol("no target label".into()))?;
            let text = between(prompt, "Original message:\n", "\n\nReturn only").unwrap_or("");
            let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(prompt));
            let words = self.scorer.lexicon().words(target);
            let a = &words[rng.random_range(0..words.len())];
            let b = &words[rng.random_range(0..words.len())];
            return Ok(format!("{text} {a} {b}"));
        }
        if let Some(label) = quoted_label(prompt, "belong to the class label \"") {
            return Ok(self.generate(prompt, label));
        }
        let input = between(prompt, "START OF USER INPUT\n", "\nEND OF USER INPUT")
            .or_else(|| prompt.split_once("### Input to be classified ###\n").map(|(_, t)| t));
        let Some(input) = input else {
            return Err(ChatError::Protocol("unrecognised prompt".into()));
        };
        let predicted = self.argmax(input);
        if let Some(probed) = quoted_label(prompt, "Based on the provided class label \"") {
            return Ok(if probed == predicted {
                format!("{{'label': ['{probed}']}}")
            } else {
                "{'label': ['None']}".to_string()
            });
        }
        Ok(format!("{{'label': ['{predicted}']}}"))
    }
}

impl ChatClient for LexiconChat {
    fn complete(&self, request: &ChatRequest) -> Result<String, ChatError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.respond(&request.prompt)
    }
}
