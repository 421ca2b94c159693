use super::{LabelError, LabeledSample};
use crate::feedback::{FeedbackError, Generator, SamplingConfig};
use crate::prompting::{parse_evidence_output, PromptBuilder};
use crate::table::{Dataset, Evidence, Sample};

#[derive(Debug, Default)]
pub struct DistillReport {
    pub parsed: usize,
    /// (sample id, reason)
    pub failures: Vec<(String, String)>,
    /// (sample id, parser warning)
    pub warnings: Vec<(String, String)>,
}

impl DistillReport {
    pub fn parse_rate(&self) -> f64 {
        let total = self.parsed + self.failures.len();
        if total == 0 {
            0.0
        } else {
            self.parsed as f64 / total as f64
        }
    }
}

/// Asks `client` for the evidence rows of one sample, given its reference.
pub fn distill_one(
    sample: &Sample,
    client: &dyn Generator,
    prompts: &PromptBuilder,
    sampling: &SamplingConfig,
) -> Result<(Evidence, Vec<String>), LabelError> {
    let prompt = prompts
        .build_distill_prompt_default(&sample.table, &sample.query, &sample.reference)?
        .with_id(&sample.id);
    let raw = client.generate(&prompt.text, sampling).map_err(FeedbackError::from)?;
    Ok(parse_evidence_output(&raw, sample.table.n_rows())?)
}

/// Distills labels for every sample; failures leave `e_distill` empty and
/// are reported rather than aborting the job.
pub fn distill_labels(
    dataset: &Dataset,
    client: &dyn Generator,
    prompts: &PromptBuilder,
    sampling: &SamplingConfig,
) -> (Vec<LabeledSample>, DistillReport) {
    let mut report = DistillReport::default();
    let labels = dataset
        .samples()
        .iter()
        .map(|s| {
            let mut l = LabeledSample::new(&s.id);
            l.e_manual = s.manual_evidence.clone();
            match distill_one(s, client, prompts, sampling) {
                Ok((e, warnings)) => {
                    report.parsed += 1;
                    if !warnings.is_empty() {
                        l.flag("distill-range-warning");
                    }
                    report.warnings.extend(warnings.into_iter().map(|w| (s.id.clone(), w)));
                    l.e_distill = Some(e);
                }
                Err(e) => {
                    l.flag("distill-failed");
                    report.failures.push((s.id.clone(), e.to_string()));
                }
            }
            l
        })
        .collect();
    (labels, report)
}
