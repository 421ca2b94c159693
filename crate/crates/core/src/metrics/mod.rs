//! N-gram evaluation metrics and the scalar reward used for label search.
//!
//! All metrics share one tokenizer: lowercase, whitespace split, and every
//! ASCII punctuation character as its own token.

mod bleu;
mod meteor;
mod rouge;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bleu::{bleu, bleu_tokens, corpus_bleu, BLEU_EPSILON, BLEU_MAX_N};
pub use meteor::{meteor, meteor_tokens};
pub use rouge::{rouge_l, rouge_l_tokens, rouge_n, rouge_n_tokens};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot evaluate an empty corpus")]
    EmptyCorpus,
    #[error("reward {0} outside [0, 1]")]
    InvalidReward(f64),
}

/// A score in `[0, 1]`. NaN is rejected.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Reward(f64);

impl Reward {
    pub const ZERO: Reward = Reward(0.0);
    pub const ONE: Reward = Reward(1.0);

    pub fn new(value: f64) -> Result<Self, MetricsError> {
        if (0.0..=1.0).contains(&value) {
            Ok(Reward(value))
        } else {
            Err(MetricsError::InvalidReward(value))
        }
    }

    /// Clamps computed scores that overshoot by rounding.
    pub(crate) fn clamped(value: f64) -> Self {
        debug_assert!(!value.is_nan());
        Reward(value.clamp(0.0, 1.0))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Reward {
    type Error = MetricsError;

    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Reward::new(v)
    }
}

impl From<Reward> for f64 {
    fn from(r: Reward) -> f64 {
        r.0
    }
}

impl fmt::Display for Reward {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}", self.0)
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        for ch in word.chars() {
            if ch.is_ascii_punctuation() {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(ch.to_string());
            } else {
                current.extend(ch.to_lowercase());
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

/// The reward of a feedback output against the golden reference: sentence BLEU.
pub fn eval_reward(hypothesis: &str, reference: &str) -> Reward {
    bleu(hypothesis, reference)
}

pub const METEOR_NOTE: &str = "METEOR uses exact and stem matching only (no synonym stage)";
pub const TOKENIZER_NOTE: &str =
    "tokenization is lowercase with ASCII punctuation split; scores are not comparable to standardized BLEU tooling";

/// Corpus-level scores on a 0-100 scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub bleu: f64,
    pub rouge1: f64,
    pub rouge2: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
    pub meteor: f64,
    pub sample_count: usize,
    pub notes: Vec<String>,
}

impl ScoreReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("score report serializes")
    }
}

impl fmt::Display for ScoreReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>8}", "metric", "score")?;
        writeln!(f, "{}", "-".repeat(19))?;
        for (name, v) in [
            ("BLEU", self.bleu),
            ("ROUGE-1", self.rouge1),
            ("ROUGE-2", self.rouge2),
            ("ROUGE-L", self.rouge_l),
            ("METEOR", self.meteor),
        ] {
            writeln!(f, "{name:<10} {v:>8.2}")?;
        }
        writeln!(f, "{:<10} {:>8}", "samples", self.sample_count)?;
        for note in &self.notes {
            writeln!(f, "note: {note}")?;
        }
        Ok(())
    }
}

/// Corpus BLEU from pooled n-gram statistics; ROUGE and METEOR macro-averaged.
pub fn corpus_evaluate<H, R>(pairs: &[(H, R)]) -> Result<ScoreReport, MetricsError>
where
    H: AsRef<str>,
    R: AsRef<str>,
{
    if pairs.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let tokenized: Vec<(Vec<String>, Vec<String>)> = pairs
        .iter()
        .map(|(h, r)| (tokenize(h.as_ref()), tokenize(r.as_ref())))
        .collect();

    let n = tokenized.len() as f64;
    let mean =
        |f: &dyn Fn(&[String], &[String]) -> Reward| tokenized.iter().map(|(h, r)| f(h, r).value()).sum::<f64>() / n;
    let rouge1 = mean(&|h, r| rouge_n_tokens(h, r, 1));
    let rouge2 = mean(&|h, r| rouge_n_tokens(h, r, 2));
    let rouge_l = mean(&|h, r| rouge_l_tokens(h, r));
    let meteor = mean(&|h, r| meteor_tokens(h, r));
    let bleu = corpus_bleu(&tokenized, BLEU_MAX_N);

    Ok(ScoreReport {
        bleu: bleu.value() * 100.0,
        rouge1: rouge1 * 100.0,
        rouge2: rouge2 * 100.0,
        rouge_l: rouge_l * 100.0,
        meteor: meteor * 100.0,
        sample_count: pairs.len(),
        notes: vec![METEOR_NOTE.to_string(), TOKENIZER_NOTE.to_string()],
    })
}

/// Counts of every n-gram of order `n`.
pub(crate) fn ngrams(tokens: &[String], n: usize) -> std::collections::HashMap<&[String], usize> {
    let mut counts = std::collections::HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Clipped overlap between two n-gram count maps.
pub(crate) fn clipped_overlap(
    hyp: &std::collections::HashMap<&[String], usize>,
    reference: &std::collections::HashMap<&[String], usize>,
) -> usize {
    hyp.iter()
        .map(|(g, &c)| c.min(reference.get(g).copied().unwrap_or(0)))
        .sum()
}
