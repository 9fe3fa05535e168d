use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::Deserialize;
use thiserror::Error;

use juree_core::scorer::{Lexicon, RemoteBackend, RemoteConfig};
use juree_core::{InferenceBackend, LexiconScorer, Taxonomy};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("backend spec {spec:?}: {reason}")]
    BackendSpec { spec: String, reason: String },
    #[error(transparent)]
    Taxonomy(#[from] juree_core::taxonomy::TaxonomyError),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BatchingConfig {
    /// How long the batcher waits for more work after the first request.
    pub window_ms: u64,
    pub max_batch: usize,
    /// Texts accepted but not yet scored; beyond this requests get 429.
    pub max_queue: usize,
}

impl Default for BatchingConfig {
    fn default() -> Self {
        BatchingConfig {
            window_ms: 2,
            max_batch: 128,
            max_queue: 4096,
        }
    }
}

impl BatchingConfig {
    pub fn window(&self) -> Duration {
        Duration::from_millis(self.window_ms)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriagePaths {
    /// JSON-Lines triage items.
    pub queue: PathBuf,
    /// JSON-Lines dataset that receives review decisions.
    pub dataset: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub bind: String,
    /// Taxonomy document; the built-in default when absent.
    pub taxonomy: Option<PathBuf>,
    /// `reference`, `reference:LEXICON_PATH` or `remote:BASE_URL`.
    pub backend: String,
    pub batching: BatchingConfig,
    pub max_text_bytes: usize,
    pub bearer_token: Option<String>,
    pub triage: Option<TriagePaths>,
    /// Upper bound on draining in-flight requests at shutdown.
    pub shutdown_grace_ms: u64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            bind: "127.0.0.1:8080".into(),
            taxonomy: None,
            backend: "reference".into(),
            batching: BatchingConfig::default(),
            max_text_bytes: 8192,
            bearer_token: None,
            triage: None,
            shutdown_grace_ms: 10_000,
        }
    }
}

impl GatewayConfig {
    pub fn from_json(document: &str) -> Result<GatewayConfig, ConfigError> {
        let config: GatewayConfig = serde_json::from_str(document)?;
        config.validate()?;
        Ok(config)
    }

    /// Relative paths inside the file resolve against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<GatewayConfig, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config = Self::from_json(&text)?;
        if let Some(base) = path.parent() {
            let fix = |p: &mut PathBuf| {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            };
            if let Some(t) = config.taxonomy.as_mut() {
                fix(t);
            }
            if let Some(t) = config.triage.as_mut() {
                fix(&mut t.queue);
                fix(&mut t.dataset);
            }
            if let Some(rest) = config.backend.strip_prefix("reference:") {
                let p = Path::new(rest);
                if p.is_relative() {
                    config.backend = format!("reference:{}", base.join(p).display());
                }
            }
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.bind
            .parse::<SocketAddr>()
            .map_err(|e| ConfigError::Invalid(format!("bind {:?}: {e}", self.bind)))?;
        let b = &self.batching;
        if b.max_batch == 0 {
            return Err(ConfigError::Invalid("batching.max_batch must be positive".into()));
        }
        if b.max_queue == 0 {
            return Err(ConfigError::Invalid("batching.max_queue must be positive".into()));
        }
        if self.max_text_bytes == 0 {
            return Err(ConfigError::Invalid("max_text_bytes must be positive".into()));
        }
        if matches!(&self.bearer_token, Some(t) if t.is_empty()) {
            return Err(ConfigError::Invalid("bearer_token must not be empty".into()));
        }
        BackendSpec::parse(&self.backend)?;
        Ok(())
    }

    pub fn load_taxonomy(&self) -> Result<Taxonomy, ConfigError> {
        Ok(match &self.taxonomy {
            Some(p) => Taxonomy::load_path(p)?,
            None => Taxonomy::default(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendSpec {
    Reference(Option<PathBuf>),
    Remote(String),
}

impl BackendSpec {
    pub fn parse(spec: &str) -> Result<BackendSpec, ConfigError> {
        let bad = |reason: &str| ConfigError::BackendSpec {
            spec: spec.to_string(),
            reason: reason.to_string(),
        };
        let (kind, arg) = match spec.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (spec, None),
        };
        match (kind, arg) {
            ("reference", None) => Ok(BackendSpec::Reference(None)),
            ("reference", Some(p)) if !p.is_empty() => Ok(BackendSpec::Reference(Some(p.into()))),
            ("remote", Some(url)) if url.starts_with("http://") || url.starts_with("https://") => {
                Ok(BackendSpec::Remote(url.to_string()))
            }
            ("remote", _) => Err(bad("expected remote:http://host:port")),
            ("reference", _) => Err(bad("expected reference or reference:LEXICON_PATH")),
            _ => Err(bad("unknown backend kind")),
        }
    }

    pub fn build(&self) -> Result<Arc<dyn InferenceBackend>, ConfigError> {
        Ok(match self {
            BackendSpec::Reference(None) => Arc::new(LexiconScorer::default()),
            BackendSpec::Reference(Some(p)) => {
                let lexicon = Lexicon::load(p).map_err(|e| ConfigError::BackendSpec {
                    spec: format!("reference:{}", p.display()),
                    reason: e.to_string(),
                })?;
                Arc::new(LexiconScorer::new(lexicon))
            }
            BackendSpec::Remote(url) => Arc::new(RemoteBackend::new(RemoteConfig::new(url.clone()))),
        })
    }
}

pub fn build_backend(spec: &str) -> Result<Arc<dyn InferenceBackend>, ConfigError> {
    BackendSpec::parse(spec)?.build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_from_empty_object() {
        let c = GatewayConfig::from_json("{}").unwrap();
        assert_eq!(c, GatewayConfig::default());
        assert_eq!(c.batching.window(), Duration::from_millis(2));
        assert_eq!(c.max_text_bytes, 8192);
    }

    #[test]
    fn rejects_bad_values() {
        for doc in [
            r#"{"bind":"nowhere"}"#,
            r#"{"batching":{"max_batch":0}}"#,
            r#"{"backend":"gpu"}"#,
            r#"{"backend":"remote:ftp://x"}"#,
            r#"{"bearer_token":""}"#,
            r#"{"port":1}"#,
        ] {
            assert!(GatewayConfig::from_json(doc).is_err(), "{doc}");
        }
    }

    #[test]
    fn backend_specs() {
        assert_eq!(BackendSpec::parse("reference").unwrap(), BackendSpec::Reference(None));
        assert_eq!(
            BackendSpec::parse("reference:lex.json").unwrap(),
            BackendSpec::Reference(Some("lex.json".into()))
        );
        assert_eq!(
            BackendSpec::parse("remote:http://127.0.0.1:9000").unwrap(),
            BackendSpec::Remote("http://127.0.0.1:9000".into())
        );
        assert!(BackendSpec::parse("reference:").is_err());
        assert_eq!(build_backend("reference").unwrap().id(), LexiconScorer::default().id());
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gw.json");
        std::fs::write(
            &path,
            r#"{"taxonomy":"tax.json","backend":"reference:lex.json","triage":{"queue":"q.jsonl","dataset":"/abs/d.jsonl"}}"#,
        )
        .unwrap();
        let c = GatewayConfig::load(&path).unwrap();
        assert_eq!(c.taxonomy.unwrap(), dir.path().join("tax.json"));
        assert_eq!(c.backend, format!("reference:{}", dir.path().join("lex.json").display()));
        let t = c.triage.unwrap();
        assert_eq!(t.queue, dir.path().join("q.jsonl"));
        assert_eq!(t.dataset, PathBuf::from("/abs/d.jsonl"));
    }
}
