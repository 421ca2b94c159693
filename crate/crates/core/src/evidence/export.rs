use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{LabelError, LabeledSample};
use crate::prompting::PromptBuilder;
use crate::table::Dataset;

/// One instruction-tuning pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub prompt: String,
    pub completion: String,
}

#[derive(Debug, Default)]
pub struct ExportOutcome {
    pub records: Vec<TrainingRecord>,
    /// Ids skipped in lenient mode.
    pub skipped: Vec<String>,
}

/// Which label drives the summarizer's highlighted input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SummarizerLabel {
    Merge,
    Distill,
}

fn index(labels: &[LabeledSample]) -> HashMap<&str, &LabeledSample> {
    labels.iter().map(|l| (l.id.as_str(), l)).collect()
}

/// Highlighter pairs: the inference prompt and the merged evidence as `{i, ...}`.
pub fn export_highlighter_training(
    dataset: &Dataset,
    labels: &[LabeledSample],
    prompts: &PromptBuilder,
    strict: bool,
) -> Result<ExportOutcome, LabelError> {
    let by_id = index(labels);
    let mut out = ExportOutcome::default();
    for s in dataset.samples() {
        let Some(e) = by_id.get(s.id.as_str()).and_then(|l| l.e_merge.as_ref()) else {
            if strict {
                return Err(LabelError::MissingLabel {
                    id: s.id.clone(),
                    label: "merge".into(),
                });
            }
            out.skipped.push(s.id.clone());
            continue;
        };
        let rendered = prompts.build_highlighter_prompt(&s.table, &s.query, Some(e))?;
        let (prompt, completion) = rendered.split_output();
        out.records.push(TrainingRecord {
            prompt: prompt.to_string(),
            completion: completion.to_string(),
        });
    }
    Ok(out)
}

/// Summarizer pairs: the prompt over the table highlighted with the chosen
/// label, and the reference text as completion.
pub fn export_summarizer_training(
    dataset: &Dataset,
    labels: &[LabeledSample],
    prompts: &PromptBuilder,
    source: SummarizerLabel,
    strict: bool,
) -> Result<ExportOutcome, LabelError> {
    let by_id = index(labels);
    let mut out = ExportOutcome::default();
    for s in dataset.samples() {
        let label = by_id.get(s.id.as_str()).and_then(|l| match source {
            SummarizerLabel::Merge => l.e_merge.as_ref(),
            SummarizerLabel::Distill => l.e_distill.as_ref(),
        });
        let Some(e) = label else {
            if strict {
                return Err(LabelError::MissingLabel {
                    id: s.id.clone(),
                    label: match source {
                        SummarizerLabel::Merge => "merge",
                        SummarizerLabel::Distill => "distill",
                    }
                    .into(),
                });
            }
            out.skipped.push(s.id.clone());
            continue;
        };
        let rendered = prompts.build_summarizer_prompt(&s.table, Some(e), &s.query, Some(&s.reference))?;
        let (prompt, completion) = rendered.split_output();
        out.records.push(TrainingRecord {
            prompt: prompt.to_string(),
            completion: completion.to_string(),
        });
    }
    Ok(out)
}
