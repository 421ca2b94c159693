//! Run configuration: a flat TOML file, `HELM_<KEY>` environment overrides,
//! and command-line overrides, applied in that order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::evidence::{SearchOptions, DEFAULT_EXHAUSTIVE_MAX_ROWS};
use crate::feedback::{
    CachedGenerator, EchoOracle, FnGenerator, Generator, HttpConfig, HttpGenerator, ResponseCache, SamplingConfig,
    Semaphore,
};
use crate::prompting::{
    parse_example_blocks, PromptBuilder, PromptError, PromptRole, PromptTemplate, DEFAULT_MAX_PROMPT_TOKENS,
};
use crate::table::DatasetFormat;

pub const ENV_PREFIX: &str = "HELM_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("config key `{key}`: {detail}")]
    Invalid { key: String, detail: String },
    #[error("cannot read config {path}: {detail}")]
    File { path: String, detail: String },
    #[error("`{key}` points to missing path {path}")]
    MissingPath { key: String, path: String },
    #[error("role `{0}` needs a non-empty model id (set `{0}_model`)")]
    MissingModel(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

/// Generator roles that a command may need.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Highlighter,
    Summarizer,
    Feedbacker,
    Distiller,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Highlighter => "highlighter",
            Role::Summarizer => "summarizer",
            Role::Feedbacker => "feedbacker",
            Role::Distiller => "distiller",
        }
    }
}

const ROLES: [Role; 4] = [Role::Highlighter, Role::Summarizer, Role::Feedbacker, Role::Distiller];

const GLOBAL_KEYS: &[&str] = &[
    "dataset",
    "format",
    "lenient",
    "highlighter_template",
    "summarizer_template",
    "distill_template",
    "distill_examples",
    "max_prompt_tokens",
    "endpoint",
    "cache_dir",
    "workers",
    "max_in_flight",
    "timeout_secs",
    "max_attempts",
    "fallback",
    "max_accepted",
    "n_max",
    "mode",
    "success_threshold",
];

const ROLE_SUFFIXES: &[&str] = &["backend", "model", "endpoint", "temperature", "top_p", "max_new_tokens"];

fn is_known(key: &str) -> bool {
    GLOBAL_KEYS.contains(&key)
        || ROLES.iter().any(|r| {
            key.strip_prefix(r.name())
                .and_then(|rest| rest.strip_prefix('_'))
                .is_some_and(|suffix| ROLE_SUFFIXES.contains(&suffix))
        })
}

/// Summarizer input for the inference pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationMode {
    Full,
    NoHighlight,
    Subtab,
}

impl FromStr for AblationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(AblationMode::Full),
            "no_highlight" => Ok(AblationMode::NoHighlight),
            "subtab" => Ok(AblationMode::Subtab),
            other => Err(format!("expected full, no_highlight or subtab, got `{other}`")),
        }
    }
}

/// How a role's generator is provided.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Backend {
    Http,
    Echo,
    /// Always answers with the given text.
    Static(String),
}

impl FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http" => Ok(Backend::Http),
            "echo" => Ok(Backend::Echo),
            _ => s
                .strip_prefix("static:")
                .map(|t| Backend::Static(t.to_string()))
                .ok_or_else(|| format!("expected http, echo or static:<text>, got `{s}`")),
        }
    }
}

/// Layered key/value settings. Later layers win.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Builds the configuration from an optional file, the environment, and
    /// explicit `key=value` overrides.
    pub fn load<I>(file: Option<&Path>, env: I, overrides: &[(String, String)]) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            cfg.merge_file(path)?;
        }
        for (k, v) in env {
            let Some(key) = k.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let key = key.to_ascii_lowercase();
            if is_known(&key) {
                cfg.values.insert(key, v);
            }
        }
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    fn merge_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let file_err = |detail: String| ConfigError::File {
            path: path.display().to_string(),
            detail,
        };
        let text = std::fs::read_to_string(path).map_err(|e| file_err(e.to_string()))?;
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| file_err(e.to_string()))?;
        for (k, v) in table {
            let s = match v {
                toml::Value::String(s) => s,
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => f.to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                _ => return Err(file_err(format!("`{k}` must be a string, number or boolean"))),
            };
            self.set(&k, &s)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if !is_known(key) {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).filter(|v| !v.is_empty())
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.get(key)
            .map(|v| {
                v.parse().map_err(|e: T::Err| ConfigError::Invalid {
                    key: key.to_string(),
                    detail: e.to_string(),
                })
            })
            .transpose()
    }

    fn parsed_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.parsed(key)?.unwrap_or(default))
    }

    fn existing_path(&self, key: &str) -> Result<Option<PathBuf>, ConfigError> {
        match self.get(key) {
            None => Ok(None),
            Some(p) => {
                let path = PathBuf::from(p);
                if path.exists() {
                    Ok(Some(path))
                } else {
                    Err(ConfigError::MissingPath {
                        key: key.to_string(),
                        path: p.to_string(),
                    })
                }
            }
        }
    }

    pub fn dataset(&self) -> Result<PathBuf, ConfigError> {
        self.existing_path("dataset")?.ok_or_else(|| ConfigError::Invalid {
            key: "dataset".into(),
            detail: "required".into(),
        })
    }

    pub fn format(&self) -> Result<DatasetFormat, ConfigError> {
        self.parsed_or("format", DatasetFormat::Canonical)
    }

    pub fn lenient(&self) -> Result<bool, ConfigError> {
        self.parsed_or("lenient", false)
    }

    pub fn workers(&self) -> Result<usize, ConfigError> {
        let w = self.parsed_or("workers", 4usize)?;
        if w == 0 {
            return Err(ConfigError::Invalid {
                key: "workers".into(),
                detail: "must be at least 1".into(),
            });
        }
        Ok(w)
    }

    pub fn mode(&self) -> Result<AblationMode, ConfigError> {
        self.parsed_or("mode", AblationMode::Full)
    }

    pub fn success_threshold(&self) -> Result<f64, ConfigError> {
        let t = self.parsed_or("success_threshold", 0.95f64)?;
        if !(0.0..=1.0).contains(&t) {
            return Err(ConfigError::Invalid {
                key: "success_threshold".into(),
                detail: "must lie in [0, 1]".into(),
            });
        }
        Ok(t)
    }

    pub fn search_options(&self) -> Result<SearchOptions, ConfigError> {
        Ok(SearchOptions {
            fallback: self.parsed_or("fallback", true)?,
            max_accepted: self.parsed("max_accepted")?,
        })
    }

    pub fn n_max(&self) -> Result<usize, ConfigError> {
        self.parsed_or("n_max", DEFAULT_EXHAUSTIVE_MAX_ROWS)
    }

    /// Prompt builder with any configured template and example overrides.
    pub fn prompts(&self) -> Result<PromptBuilder, ConfigError> {
        let mut builder = PromptBuilder::default();
        for (key, role) in [
            ("highlighter_template", PromptRole::Highlighter),
            ("summarizer_template", PromptRole::Summarizer),
            ("distill_template", PromptRole::Distill),
        ] {
            if let Some(path) = self.existing_path(key)? {
                builder = builder.with_template(PromptTemplate::from_file(role, &path)?);
            }
        }
        if let Some(path) = self.existing_path("distill_examples")? {
            let text = std::fs::read_to_string(&path).map_err(|e| ConfigError::File {
                path: path.display().to_string(),
                detail: e.to_string(),
            })?;
            builder = builder.with_examples(parse_example_blocks(&text))?;
        }
        let budget = self.parsed_or("max_prompt_tokens", DEFAULT_MAX_PROMPT_TOKENS)?;
        Ok(builder.with_max_prompt_tokens((budget > 0).then_some(budget)))
    }

    fn role_key(role: Role, suffix: &str) -> String {
        format!("{}_{}", role.name(), suffix)
    }

    /// The feedbacker defaults to greedy decoding; other roles to nucleus
    /// sampling at low temperature.
    pub fn sampling(&self, role: Role) -> Result<SamplingConfig, ConfigError> {
        let base = match role {
            Role::Feedbacker => SamplingConfig::deterministic(),
            _ => SamplingConfig::default(),
        };
        let cfg = SamplingConfig {
            nucleus_p: self.parsed_or(&Self::role_key(role, "top_p"), base.nucleus_p)?,
            temperature: self.parsed_or(&Self::role_key(role, "temperature"), base.temperature)?,
            max_new_tokens: self.parsed_or(&Self::role_key(role, "max_new_tokens"), base.max_new_tokens)?,
        };
        cfg.validate().map_err(|detail| ConfigError::Invalid {
            key: format!("{}_*", role.name()),
            detail,
        })?;
        Ok(cfg)
    }

    pub fn backend(&self, role: Role) -> Result<Backend, ConfigError> {
        self.parsed_or(&Self::role_key(role, "backend"), Backend::Http)
    }

    pub fn cache(&self) -> Option<Arc<ResponseCache>> {
        self.get("cache_dir").map(|d| Arc::new(ResponseCache::new(d)))
    }
}

/// Shared process-wide resources for building role generators.
pub struct Backends {
    limiter: Arc<Semaphore>,
    cache: Option<Arc<ResponseCache>>,
}

impl Backends {
    pub fn new(cfg: &RunConfig) -> Result<Self, ConfigError> {
        let permits = cfg.parsed_or("max_in_flight", 4usize)?.max(1);
        Ok(Backends {
            limiter: Arc::new(Semaphore::new(permits)),
            cache: cfg.cache(),
        })
    }

    pub fn cache(&self) -> Option<&ResponseCache> {
        self.cache.as_deref()
    }

    /// Builds the generator for `role`, wrapped in the response cache when
    /// one is configured. `calls` counts requests that reach the backend.
    pub fn generator(
        &self,
        cfg: &RunConfig,
        role: Role,
        calls: Arc<std::sync::atomic::AtomicUsize>,
    ) -> Result<Box<dyn Generator>, ConfigError> {
        let inner: Box<dyn Generator> = match cfg.backend(role)? {
            Backend::Echo => Box::new(EchoOracle::new()),
            Backend::Static(text) => Box::new(FnGenerator::new(
                format!("static:{text}"),
                move |_: &str, _: &SamplingConfig| Ok(text.clone()),
            )),
            Backend::Http => {
                let model = cfg
                    .get(&RunConfig::role_key(role, "model"))
                    .ok_or_else(|| ConfigError::MissingModel(role.name().to_string()))?;
                let endpoint = cfg
                    .get(&RunConfig::role_key(role, "endpoint"))
                    .or_else(|| cfg.get("endpoint"))
                    .ok_or_else(|| ConfigError::Invalid {
                        key: "endpoint".into(),
                        detail: format!("required for the http backend of `{}`", role.name()),
                    })?;
                let mut http = HttpConfig::new(endpoint, model);
                http.timeout = Duration::from_secs(cfg.parsed_or("timeout_secs", 60u64)?);
                http.max_attempts = cfg.parsed_or("max_attempts", 5u32)?.max(1);
                let generator =
                    HttpGenerator::new(http, Arc::clone(&self.limiter)).map_err(|e| ConfigError::Invalid {
                        key: "endpoint".into(),
                        detail: e.to_string(),
                    })?;
                Box::new(generator)
            }
        };
        let counted = Counted { inner, calls };
        Ok(match &self.cache {
            Some(cache) => Box::new(CachedGenerator::new(counted, Arc::clone(cache))),
            None => Box::new(counted),
        })
    }
}

struct Counted {
    inner: Box<dyn Generator>,
    calls: Arc<std::sync::atomic::AtomicUsize>,
}

impl Generator for Counted {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn generate(&self, prompt: &str, cfg: &SamplingConfig) -> Result<String, crate::feedback::GenerateError> {
        self.calls.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        self.inner.generate(prompt, cfg)
    }
}
