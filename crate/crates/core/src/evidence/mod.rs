//! Evidence-label construction: greedy search, the exhaustive oracle,
//! distillation, reward-based merging, and training-data export.

mod distill;
mod export;
mod merge;
mod search;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feedback::FeedbackError;
use crate::metrics::Reward;
use crate::prompting::PromptError;
use crate::table::Evidence;

pub use distill::{distill_labels, distill_one, DistillReport};
pub use export::{
    export_highlighter_training, export_summarizer_training, ExportOutcome, SummarizerLabel, TrainingRecord,
};
pub use merge::{merge_labels, MergeOutcome};
pub use search::{
    exhaustive_search, greedy_search, Phase, SearchOptions, SearchOutcome, SearchTrace, TraceEntry,
    DEFAULT_EXHAUSTIVE_MAX_ROWS,
};

#[derive(Debug, Error)]
pub enum LabelError {
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("table has {n_rows} rows; exhaustive search is limited to {n_max}")]
    TableTooLarge { n_rows: usize, n_max: usize },
    #[error("sample `{0}` has no candidate evidence")]
    NoCandidates(String),
    #[error("sample `{id}` has no `{label}` label")]
    MissingLabel { id: String, label: String },
}

impl LabelError {
    pub fn is_backend(&self) -> bool {
        matches!(self, LabelError::Feedback(e) if e.is_backend())
    }
}

/// Where an evidence label came from. Declaration order is merge priority.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Manual,
    Distill,
    Search,
}

impl LabelSource {
    pub const PRIORITY: [LabelSource; 3] = [LabelSource::Manual, LabelSource::Distill, LabelSource::Search];

    pub fn name(self) -> &'static str {
        match self {
            LabelSource::Manual => "manual",
            LabelSource::Distill => "distill",
            LabelSource::Search => "search",
        }
    }
}

impl fmt::Display for LabelSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One line of a label file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub id: String,
    #[serde(default)]
    pub e_search: Option<Evidence>,
    #[serde(default)]
    pub e_distill: Option<Evidence>,
    #[serde(default)]
    pub e_manual: Option<Evidence>,
    #[serde(default)]
    pub e_merge: Option<Evidence>,
    /// Merge reward per source name.
    #[serde(default)]
    pub rewards: BTreeMap<String, Reward>,
    #[serde(default)]
    pub flags: Vec<String>,
}

impl LabeledSample {
    pub fn new(id: impl Into<String>) -> Self {
        LabeledSample {
            id: id.into(),
            ..Default::default()
        }
    }

    pub fn get(&self, source: LabelSource) -> Option<&Evidence> {
        match source {
            LabelSource::Manual => self.e_manual.as_ref(),
            LabelSource::Distill => self.e_distill.as_ref(),
            LabelSource::Search => self.e_search.as_ref(),
        }
    }

    /// Fills fields that are absent here from `other`; flags are appended.
    pub fn absorb(&mut self, other: LabeledSample) {
        self.e_search = self.e_search.take().or(other.e_search);
        self.e_distill = self.e_distill.take().or(other.e_distill);
        self.e_manual = self.e_manual.take().or(other.e_manual);
        self.e_merge = self.e_merge.take().or(other.e_merge);
        for (k, v) in other.rewards {
            self.rewards.entry(k).or_insert(v);
        }
        for f in other.flags {
            if !self.flags.contains(&f) {
                self.flags.push(f);
            }
        }
    }

    pub fn flag(&mut self, flag: impl Into<String>) {
        let f = flag.into();
        if !self.flags.contains(&f) {
            self.flags.push(f);
        }
    }
}
