use super::{clipped_overlap, ngrams, tokenize, Reward};

/// F1 written as `2·overlap / (|hyp| + |ref|)`, which is symmetric by construction.
fn f1(overlap: usize, hyp_total: usize, ref_total: usize) -> Reward {
    if overlap == 0 || hyp_total == 0 || ref_total == 0 {
        return Reward::ZERO;
    }
    Reward::clamped(2.0 * overlap as f64 / (hyp_total + ref_total) as f64)
}

pub fn rouge_n_tokens(hypothesis: &[String], reference: &[String], n: usize) -> Reward {
    let h = ngrams(hypothesis, n);
    let r = ngrams(reference, n);
    let hyp_total = hypothesis.len().saturating_sub(n.saturating_sub(1));
    let ref_total = reference.len().saturating_sub(n.saturating_sub(1));
    f1(clipped_overlap(&h, &r), hyp_total, ref_total)
}

/// ROUGE-N F1 with clipped n-gram counts.
pub fn rouge_n(hypothesis: &str, reference: &str, n: usize) -> Reward {
    rouge_n_tokens(&tokenize(hypothesis), &tokenize(reference), n)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l_tokens(hypothesis: &[String], reference: &[String]) -> Reward {
    f1(lcs_len(hypothesis, reference), hypothesis.len(), reference.len())
}

/// ROUGE-L F1 from the longest common subsequence.
pub fn rouge_l(hypothesis: &str, reference: &str) -> Reward {
    rouge_l_tokens(&tokenize(hypothesis), &tokenize(reference))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rouge_n_examples() {
        assert!((rouge_n("a b c", "a b d", 1).value() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(rouge_n("x y z", "x y z", 2).value(), 1.0);
        assert_eq!(rouge_n("a", "b c", 2).value(), 0.0);
    }

    #[test]
    fn rouge_l_examples() {
        assert!((rouge_l("a c e", "a b c d e").value() - 0.75).abs() < 1e-12);
        assert_eq!(rouge_l("a b", "a b").value(), 1.0);
        assert_eq!(rouge_l("a b", "c d").value(), 0.0);
    }

    #[test]
    fn lcs_basic() {
        let t = |s: &str| tokenize(s);
        assert_eq!(lcs_len(&t("a b c b d a b"), &t("b d c a b a")), 4);
        assert_eq!(lcs_len(&t(""), &t("a")), 0);
    }
}
