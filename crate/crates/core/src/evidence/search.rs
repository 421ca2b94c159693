//! Greedy evidence search with a feedback summarizer, and the exhaustive
//! search used to check it.
//!
//! Phase 1 scores every single row as a sub-table. Rows are then visited in
//! descending singleton reward (ascending index on ties) and each is added to
//! the running set only if the sub-table of the union scores strictly higher
//! than the running set. Without failures this costs exactly `2n` feedback
//! calls instead of `2^n - 1`.

use serde::Serialize;

use super::LabelError;
use crate::feedback::{Feedback, FeedbackError, FeedbackMode};
use crate::metrics::Reward;
use crate::table::{Evidence, Sample};

pub const DEFAULT_EXHAUSTIVE_MAX_ROWS: usize = 12;

#[derive(Debug, Clone, Copy)]
pub struct SearchOptions {
    /// Return the best singleton when no candidate was accepted.
    pub fallback: bool,
    /// Stop after this many accepted additions.
    pub max_accepted: Option<usize>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            fallback: true,
            max_accepted: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Singleton,
    Accumulate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceEntry {
    pub evidence: Evidence,
    /// `None` when evaluation failed twice and the candidate was skipped.
    pub reward: Option<Reward>,
    pub phase: Phase,
    pub accepted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SearchTrace {
    pub candidates: Vec<TraceEntry>,
    /// Feedback evaluations attempted, retries included.
    pub oracle_calls: usize,
    pub fallback_used: bool,
}

impl SearchTrace {
    pub fn max_reward(&self) -> Option<Reward> {
        self.candidates
            .iter()
            .filter_map(|c| c.reward)
            .fold(None, |acc: Option<Reward>, r| match acc {
                Some(a) if a.value() >= r.value() => Some(a),
                _ => Some(r),
            })
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub evidence: Evidence,
    pub reward: Reward,
    pub trace: SearchTrace,
}

/// Evaluates one candidate, retrying a failed generation once.
fn evaluate(
    sample: &Sample,
    feedback: &Feedback<'_>,
    evidence: &Evidence,
    trace: &mut SearchTrace,
) -> Result<Result<Reward, FeedbackError>, LabelError> {
    let mut last = None;
    for _ in 0..2 {
        trace.oracle_calls += 1;
        match feedback.reward(
            &sample.table,
            evidence,
            &sample.query,
            &sample.reference,
            FeedbackMode::Subtable,
        ) {
            Ok(r) => return Ok(Ok(r)),
            Err(e @ FeedbackError::Generate(_)) => {
                log::debug!("sample {} candidate {} failed: {}", sample.id, evidence, e);
                last = Some(e);
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Err(last.expect("two failed attempts")))
}

pub fn greedy_search(
    sample: &Sample,
    feedback: &Feedback<'_>,
    opts: SearchOptions,
) -> Result<SearchOutcome, LabelError> {
    let n = sample.table.n_rows();
    let mut trace = SearchTrace::default();
    let mut last_err = None;

    let mut singletons: Vec<(usize, Reward)> = Vec::with_capacity(n);
    for i in 1..=n {
        let ev = Evidence::singleton(i);
        let entry = match evaluate(sample, feedback, &ev, &mut trace)? {
            Ok(r) => {
                singletons.push((i, r));
                TraceEntry {
                    evidence: ev,
                    reward: Some(r),
                    phase: Phase::Singleton,
                    accepted: false,
                    note: None,
                }
            }
            Err(e) => {
                let note = Some(format!("skipped: {e}"));
                last_err = Some(e);
                TraceEntry {
                    evidence: ev,
                    reward: None,
                    phase: Phase::Singleton,
                    accepted: false,
                    note,
                }
            }
        };
        trace.candidates.push(entry);
    }
    if singletons.is_empty() {
        return Err(last_err.expect("n >= 1 and every candidate failed").into());
    }

    singletons.sort_by(|a, b| b.1.value().total_cmp(&a.1.value()).then(a.0.cmp(&b.0)));

    let mut current = Evidence::empty();
    let mut current_reward = Reward::ZERO;
    let mut accepted = 0usize;
    for &(i, _) in &singletons {
        if opts.max_accepted.is_some_and(|k| accepted >= k) {
            break;
        }
        let candidate = current.union(&Evidence::singleton(i));
        match evaluate(sample, feedback, &candidate, &mut trace)? {
            Ok(r) => {
                let take = r.value() > current_reward.value();
                trace.candidates.push(TraceEntry {
                    evidence: candidate.clone(),
                    reward: Some(r),
                    phase: Phase::Accumulate,
                    accepted: take,
                    note: None,
                });
                if take {
                    current = candidate;
                    current_reward = r;
                    accepted += 1;
                }
            }
            Err(e) => trace.candidates.push(TraceEntry {
                evidence: candidate,
                reward: None,
                phase: Phase::Accumulate,
                accepted: false,
                note: Some(format!("skipped: {e}")),
            }),
        }
    }

    if current.is_empty() && opts.fallback {
        let (i, r) = singletons[0];
        current = Evidence::singleton(i);
        current_reward = r;
        trace.fallback_used = true;
    }

    Ok(SearchOutcome {
        evidence: current,
        reward: current_reward,
        trace,
    })
}

/// Scores every non-empty subset; returns the lexicographically smallest
/// best-scoring one.
pub fn exhaustive_search(
    sample: &Sample,
    feedback: &Feedback<'_>,
    n_max: usize,
) -> Result<(Evidence, Reward), LabelError> {
    let n = sample.table.n_rows();
    if n > n_max {
        return Err(LabelError::TableTooLarge { n_rows: n, n_max });
    }
    let mut best: Option<(Evidence, Reward)> = None;
    for mask in 1u64..(1u64 << n) {
        let ev = Evidence::from_unsorted((0..n).filter(|b| mask >> b & 1 == 1).map(|b| b + 1));
        let r = feedback.reward(
            &sample.table,
            &ev,
            &sample.query,
            &sample.reference,
            FeedbackMode::Subtable,
        )?;
        let better = match &best {
            None => true,
            Some((be, br)) => r.value() > br.value() || (r.value() == br.value() && ev < *be),
        };
        if better {
            best = Some((ev, r));
        }
    }
    Ok(best.expect("n >= 1"))
}
