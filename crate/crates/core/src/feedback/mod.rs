//! The generator contract shared by the highlighter, summarizer and
//! feedbacker roles, its backends, and the evidence reward built on top.

mod cache;
mod echo;
mod http;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{eval_reward, Reward};
use crate::prompting::{PromptBuilder, PromptError};
use crate::table::{Evidence, Table};
use crate::transforms::{self, TransformError};

pub use cache::{cached_generate, CacheKey, CachedGenerator, ResponseCache};
pub use echo::EchoOracle;
pub use http::{HttpConfig, HttpGenerator, Semaphore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GenerateError {
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("rate limited after {attempts} attempts")]
    RateLimit { attempts: u32 },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("no linearized table found in prompt")]
    NoTableFound,
    #[error("{0}")]
    Other(String),
}

impl GenerateError {
    /// Errors that point at the backend or network rather than the input.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            GenerateError::Auth(_)
                | GenerateError::RateLimit { .. }
                | GenerateError::Transport(_)
                | GenerateError::Http { .. }
                | GenerateError::MalformedResponse(_)
        )
    }
}

/// Decoding parameters passed with every request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub nucleus_p: f64,
    pub temperature: f64,
    pub max_new_tokens: u32,
}

impl Default for SamplingConfig {
    /// Nucleus sampling with p = 0.9 at temperature 0.1.
    fn default() -> Self {
        SamplingConfig {
            nucleus_p: 0.9,
            temperature: 0.1,
            max_new_tokens: 256,
        }
    }
}

impl SamplingConfig {
    /// Greedy decoding, used for label search where rewards must be comparable.
    pub fn deterministic() -> Self {
        SamplingConfig {
            nucleus_p: 1.0,
            temperature: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.nucleus_p > 0.0 && self.nucleus_p <= 1.0) {
            return Err(format!("nucleus_p must be in (0, 1], got {}", self.nucleus_p));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(format!("temperature must be >= 0, got {}", self.temperature));
        }
        Ok(())
    }
}

/// Prompt text in, generated text out.
pub trait Generator: Send + Sync {
    fn model_id(&self) -> &str;
    fn generate(&self, prompt: &str, cfg: &SamplingConfig) -> Result<String, GenerateError>;
}

impl<G: Generator + ?Sized> Generator for &G {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn generate(&self, prompt: &str, cfg: &SamplingConfig) -> Result<String, GenerateError> {
        (**self).generate(prompt, cfg)
    }
}

impl<G: Generator + ?Sized> Generator for Box<G> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn generate(&self, prompt: &str, cfg: &SamplingConfig) -> Result<String, GenerateError> {
        (**self).generate(prompt, cfg)
    }
}

impl<G: Generator + ?Sized> Generator for Arc<G> {
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn generate(&self, prompt: &str, cfg: &SamplingConfig) -> Result<String, GenerateError> {
        (**self).generate(prompt, cfg)
    }
}

/// Always returns the same text.
#[derive(Debug, Clone)]
pub struct StaticGenerator {
    model_id: String,
    response: String,
}

impl StaticGenerator {
    pub fn new(response: impl Into<String>) -> Self {
        StaticGenerator {
            model_id: "static".into(),
            response: response.into(),
        }
    }
}

impl Generator for StaticGenerator {
    fn model_id(&self) -> &str {
        &self.model_id
    }
    fn generate(&self, _prompt: &str, _cfg: &SamplingConfig) -> Result<String, GenerateError> {
        Ok(self.response.clone())
    }
}

/// Adapts a closure; handy for scripted test doubles.
pub struct FnGenerator<F> {
    model_id: String,
    f: F,
}

impl<F> FnGenerator<F>
where
    F: Fn(&str, &SamplingConfig) -> Result<String, GenerateError> + Send + Sync,
{
    pub fn new(model_id: impl Into<String>, f: F) -> Self {
        FnGenerator {
            model_id: model_id.into(),
            f,
        }
    }
}

impl<F> Generator for FnGenerator<F>
where
    F: Fn(&str, &SamplingConfig) -> Result<String, GenerateError> + Send + Sync,
{
    fn model_id(&self) -> &str {
        &self.model_id
    }
    fn generate(&self, prompt: &str, cfg: &SamplingConfig) -> Result<String, GenerateError> {
        (self.f)(prompt, cfg)
    }
}

/// Counts calls that reach the wrapped generator.
pub struct CountingGenerator<G> {
    inner: G,
    calls: AtomicUsize,
}

impl<G: Generator> CountingGenerator<G> {
    pub fn new(inner: G) -> Self {
        CountingGenerator {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn inner(&self) -> &G {
        &self.inner
    }
}

impl<G: Generator> Generator for CountingGenerator<G> {
    fn model_id(&self) -> &str {
        self.inner.model_id()
    }
    fn generate(&self, prompt: &str, cfg: &SamplingConfig) -> Result<String, GenerateError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.generate(prompt, cfg)
    }
}

#[derive(Debug, Error)]
pub enum FeedbackError {
    #[error(transparent)]
    Generate(#[from] GenerateError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Transform(#[from] TransformError),
}

impl FeedbackError {
    pub fn is_backend(&self) -> bool {
        matches!(self, FeedbackError::Generate(e) if e.is_backend())
    }
}

/// How candidate evidence is shown to the feedbacker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackMode {
    /// Only the evidence rows (plus header).
    Subtable,
    /// The full table with evidence rows starred.
    Highlight,
}

/// Scores candidate evidence by asking a feedbacker to answer from it.
#[derive(Clone, Copy)]
pub struct Feedback<'a> {
    pub generator: &'a dyn Generator,
    pub prompts: &'a PromptBuilder,
    pub sampling: SamplingConfig,
}

impl<'a> Feedback<'a> {
    pub fn new(generator: &'a dyn Generator, prompts: &'a PromptBuilder, sampling: SamplingConfig) -> Self {
        Feedback {
            generator,
            prompts,
            sampling,
        }
    }

    /// Builds the summarizer prompt over SubTab(T, E) or HL(T, E), runs the
    /// feedbacker and scores its output against `reference`.
    pub fn reward(
        &self,
        table: &Table,
        evidence: &Evidence,
        query: &str,
        reference: &str,
        mode: FeedbackMode,
    ) -> Result<Reward, FeedbackError> {
        let prompt = match mode {
            FeedbackMode::Subtable => {
                let sub = transforms::subtable(table, evidence)?;
                self.prompts.build_summarizer_prompt(&sub, None, query, None)?
            }
            FeedbackMode::Highlight => self
                .prompts
                .build_summarizer_prompt(table, Some(evidence), query, None)?,
        };
        let output = self.generator.generate(&prompt.text, &self.sampling)?;
        Ok(eval_reward(&output, reference))
    }
}

/// Free-function form of [`Feedback::reward`].
#[allow(clippy::too_many_arguments)]
pub fn feedback_reward(
    table: &Table,
    evidence: &Evidence,
    query: &str,
    reference: &str,
    mode: FeedbackMode,
    feedbacker: &dyn Generator,
    prompts: &PromptBuilder,
    sampling: SamplingConfig,
) -> Result<Reward, FeedbackError> {
    Feedback::new(feedbacker, prompts, sampling).reward(table, evidence, query, reference, mode)
}
