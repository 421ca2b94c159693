use std::sync::OnceLock;

use rust_stemmers::{Algorithm, Stemmer};

use super::{tokenize, Reward};

const ALPHA: f64 = 0.9;
const BETA: f64 = 3.0;
const GAMMA: f64 = 0.5;

fn stemmer() -> &'static Stemmer {
    static STEMMER: OnceLock<Stemmer> = OnceLock::new();
    STEMMER.get_or_init(|| Stemmer::create(Algorithm::English))
}

/// One matching stage over the still-unaligned tokens. A hypothesis token
/// prefers the reference slot right after its predecessor's alignment, then
/// the earliest free slot.
fn align_stage(hyp_keys: &[String], ref_keys: &[String], hyp_to_ref: &mut [Option<usize>], ref_used: &mut [bool]) {
    for i in 0..hyp_keys.len() {
        if hyp_to_ref[i].is_some() {
            continue;
        }
        let free = |j: usize| !ref_used[j] && ref_keys[j] == hyp_keys[i];
        let adjacent = i
            .checked_sub(1)
            .and_then(|p| hyp_to_ref[p])
            .map(|j| j + 1)
            .filter(|&j| j < ref_keys.len() && free(j));
        if let Some(j) = adjacent.or_else(|| (0..ref_keys.len()).find(|&j| free(j))) {
            hyp_to_ref[i] = Some(j);
            ref_used[j] = true;
        }
    }
}

fn count_chunks(hyp_to_ref: &[Option<usize>]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<(usize, usize)> = None;
    for (i, m) in hyp_to_ref.iter().enumerate() {
        if let Some(j) = *m {
            match prev {
                Some((pi, pj)) if pi + 1 == i && pj + 1 == j => {}
                _ => chunks += 1,
            }
            prev = Some((i, j));
        } else {
            prev = None;
        }
    }
    chunks
}

/// METEOR with exact then stem matching.
pub fn meteor_tokens(hypothesis: &[String], reference: &[String]) -> Reward {
    if hypothesis.is_empty() || reference.is_empty() {
        return Reward::ZERO;
    }
    let mut hyp_to_ref = vec![None; hypothesis.len()];
    let mut ref_used = vec![false; reference.len()];
    align_stage(hypothesis, reference, &mut hyp_to_ref, &mut ref_used);

    let stem = |toks: &[String]| -> Vec<String> { toks.iter().map(|t| stemmer().stem(t).into_owned()).collect() };
    align_stage(&stem(hypothesis), &stem(reference), &mut hyp_to_ref, &mut ref_used);

    let matches = hyp_to_ref.iter().filter(|m| m.is_some()).count();
    if matches == 0 {
        return Reward::ZERO;
    }
    let precision = matches as f64 / hypothesis.len() as f64;
    let recall = matches as f64 / reference.len() as f64;
    let fmean = precision * recall / (ALPHA * precision + (1.0 - ALPHA) * recall);
    let fragmentation = count_chunks(&hyp_to_ref) as f64 / matches as f64;
    let penalty = GAMMA * fragmentation.powf(BETA);
    Reward::clamped(fmean * (1.0 - penalty))
}

pub fn meteor(hypothesis: &str, reference: &str) -> Reward {
    meteor_tokens(&tokenize(hypothesis), &tokenize(reference))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_identical_token() {
        assert_eq!(meteor("ajax", "ajax").value(), 0.5);
    }

    #[test]
    fn disjoint_is_zero() {
        assert_eq!(meteor("a b", "c d").value(), 0.0);
    }

    #[test]
    fn stem_match() {
        assert!(meteor("cats", "cat").value() > 0.0);
        assert_eq!(meteor("cats", "cat").value(), 0.5);
    }

    #[test]
    fn prefers_contiguous_alignment() {
        let h = tokenize("the cat the mat");
        let r = tokenize("the cat the mat");
        let mut map = vec![None; 4];
        let mut used = vec![false; 4];
        align_stage(&h, &r, &mut map, &mut used);
        assert_eq!(map, [Some(0), Some(1), Some(2), Some(3)]);
        assert_eq!(count_chunks(&map), 1);
    }

    #[test]
    fn partial_match_value() {
        // P = 2/3, R = 1/2, one chunk over two matches.
        assert!((meteor("a b x", "a b c d").value() - 0.48076923076923084).abs() < 1e-12);
    }

    #[test]
    fn swapped_halves_make_two_chunks() {
        assert!((meteor("a b c d", "c d a b").value() - 0.9375).abs() < 1e-12);
    }
}
