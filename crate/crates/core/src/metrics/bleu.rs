use super::{clipped_overlap, ngrams, tokenize, Reward};

pub const BLEU_MAX_N: usize = 4;

/// Numerator used for an order whose clipped match count is zero.
pub const BLEU_EPSILON: f64 = 0.1;

#[derive(Debug, Clone, Default)]
struct BleuStats {
    matches: Vec<usize>,
    hyp_totals: Vec<usize>,
    ref_totals: Vec<usize>,
    hyp_len: usize,
    ref_len: usize,
}

impl BleuStats {
    fn new(max_n: usize) -> Self {
        BleuStats {
            matches: vec![0; max_n],
            hyp_totals: vec![0; max_n],
            ref_totals: vec![0; max_n],
            hyp_len: 0,
            ref_len: 0,
        }
    }

    fn add(&mut self, hyp: &[String], reference: &[String]) {
        for k in 0..self.matches.len() {
            let n = k + 1;
            let h = ngrams(hyp, n);
            let r = ngrams(reference, n);
            self.matches[k] += clipped_overlap(&h, &r);
            self.hyp_totals[k] += hyp.len().saturating_sub(n - 1);
            self.ref_totals[k] += reference.len().saturating_sub(n - 1);
        }
        self.hyp_len += hyp.len();
        self.ref_len += reference.len();
    }

    /// Geometric mean over the orders present on both sides, times the
    /// brevity penalty. Zero-match orders use `BLEU_EPSILON / total`.
    fn score(&self) -> Reward {
        if self.hyp_len == 0 || self.ref_len == 0 {
            return Reward::ZERO;
        }
        let mut log_sum = 0.0;
        let mut orders = 0usize;
        for k in 0..self.matches.len() {
            let total = self.hyp_totals[k];
            if total == 0 || self.ref_totals[k] == 0 {
                continue;
            }
            let numerator = if self.matches[k] == 0 {
                BLEU_EPSILON
            } else {
                self.matches[k] as f64
            };
            log_sum += (numerator / total as f64).ln();
            orders += 1;
        }
        let precision = (log_sum / orders as f64).exp();
        let brevity = if self.hyp_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        };
        Reward::clamped(brevity * precision)
    }
}

/// Smoothed sentence BLEU on token sequences.
pub fn bleu_tokens(hypothesis: &[String], reference: &[String], max_n: usize) -> Reward {
    let mut stats = BleuStats::new(max_n.max(1));
    stats.add(hypothesis, reference);
    stats.score()
}

/// Smoothed sentence BLEU (orders 1..=4).
pub fn bleu(hypothesis: &str, reference: &str) -> Reward {
    bleu_tokens(&tokenize(hypothesis), &tokenize(reference), BLEU_MAX_N)
}

/// Corpus BLEU over pooled n-gram statistics.
pub fn corpus_bleu(pairs: &[(Vec<String>, Vec<String>)], max_n: usize) -> Reward {
    let mut stats = BleuStats::new(max_n.max(1));
    for (h, r) in pairs {
        stats.add(h, r);
    }
    stats.score()
}
