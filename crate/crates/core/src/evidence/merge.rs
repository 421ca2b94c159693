use super::{LabelError, LabelSource, LabeledSample};
use crate::feedback::{Feedback, FeedbackMode};
use crate::metrics::Reward;
use crate::table::{Evidence, Sample};

#[derive(Debug, Clone)]
pub struct MergeOutcome {
    pub labeled: LabeledSample,
    pub winner: LabelSource,
    /// Feedback evaluations performed.
    pub oracle_calls: usize,
}

/// Picks, among the available labels, the one whose highlighted table makes
/// the feedbacker score best. Ties go to manual, then distill, then search.
/// Identical candidate sets are scored once; a lone candidate is returned
/// without scoring.
pub fn merge_labels(
    labeled: &LabeledSample,
    sample: &Sample,
    feedback: &Feedback<'_>,
) -> Result<MergeOutcome, LabelError> {
    let mut out = labeled.clone();
    if out.e_manual.is_none() {
        out.e_manual = sample.manual_evidence.clone();
    }
    let candidates: Vec<(LabelSource, Evidence)> = LabelSource::PRIORITY
        .iter()
        .filter_map(|&src| out.get(src).map(|e| (src, e.clone())))
        .collect();

    match candidates.as_slice() {
        [] => return Err(LabelError::NoCandidates(sample.id.clone())),
        [(src, e)] => {
            out.e_merge = Some(e.clone());
            out.flag("single-candidate");
            out.flag(format!("merge:{src}"));
            return Ok(MergeOutcome {
                labeled: out,
                winner: *src,
                oracle_calls: 0,
            });
        }
        _ => {}
    }

    let mut scored: Vec<(Evidence, Reward)> = Vec::new();
    let mut calls = 0;
    let mut best: Option<(LabelSource, Evidence, Reward)> = None;
    for (src, e) in candidates {
        let reward = match scored.iter().find(|(se, _)| *se == e) {
            Some((_, r)) => *r,
            None => {
                calls += 1;
                let r = feedback.reward(
                    &sample.table,
                    &e,
                    &sample.query,
                    &sample.reference,
                    FeedbackMode::Highlight,
                )?;
                scored.push((e.clone(), r));
                r
            }
        };
        out.rewards.insert(src.name().to_string(), reward);
        if best.as_ref().is_none_or(|(_, _, br)| reward.value() > br.value()) {
            best = Some((src, e, reward));
        }
    }

    let (winner, evidence, _) = best.expect("at least two candidates");
    out.e_merge = Some(evidence);
    out.flag(format!("merge:{winner}"));
    Ok(MergeOutcome {
        labeled: out,
        winner,
        oracle_calls: calls,
    })
}
