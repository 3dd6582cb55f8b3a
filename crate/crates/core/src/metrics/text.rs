use std::collections::HashMap;
use std::hash::Hash;

use crate::{Error, Result};

const MAX_ORDER: usize = 4;

fn ngram_counts<T: Hash + Eq>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Mean over orders 1 to 4 of distinct / total n-grams in one response,
/// skipping orders longer than the response. `None` for an empty one.
pub fn distinct_ngram_ratio<T: Hash + Eq>(tokens: &[T]) -> Option<f64> {
    let orders = tokens.len().min(MAX_ORDER);
    if orders == 0 {
        return None;
    }
    let sum: f64 = (1..=orders)
        .map(|n| ngram_counts(tokens, n).len() as f64 / (tokens.len() + 1 - n) as f64)
        .sum();
    Some(sum / orders as f64)
}

/// Intra-response diversity: [`distinct_ngram_ratio`] averaged over the
/// non-empty responses, times 100. `None` when every response is empty.
pub fn div_ngram<T: Hash + Eq>(responses: &[Vec<T>]) -> Result<Option<f64>> {
    if responses.is_empty() {
        return Err(Error::contract("div_ngram needs at least one response"));
    }
    let ratios: Vec<f64> = responses.iter().filter_map(|r| distinct_ngram_ratio(r)).collect();
    Ok((!ratios.is_empty()).then(|| 100.0 * ratios.iter().sum::<f64>() / ratios.len() as f64))
}

/// Sentence BLEU-4 of `hypothesis` against `references`, in `[0, 1]`.
///
/// Uniform weights over orders 1 to 4 with modified (clipped) precision.
/// Orders 2 to 4 use add-one smoothing; unigram precision is unsmoothed, so
/// a hypothesis sharing no token with any reference scores 0. The brevity
/// penalty `exp(1 - r/c)` applies when `c <= r`, with `r` the reference
/// length closest to `c` (the shorter on ties). An empty hypothesis
/// scores 1 against a set holding an empty reference and 0 otherwise.
pub fn sentence_bleu<T: Hash + Eq>(hypothesis: &[T], references: &[&[T]]) -> f64 {
    let c = hypothesis.len();
    if c == 0 {
        return if references.iter().any(|r| r.is_empty()) { 1.0 } else { 0.0 };
    }
    let mut log_sum = 0.0;
    for n in 1..=MAX_ORDER {
        let hyp = ngram_counts(hypothesis, n);
        let mut max_ref: HashMap<&[T], usize> = HashMap::new();
        for r in references {
            for (g, k) in ngram_counts(r, n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(k);
            }
        }
        let matched: usize = hyp.iter().map(|(g, &k)| k.min(max_ref.get(g).copied().unwrap_or(0))).sum();
        let total = c.saturating_sub(n - 1);
        let p = if n == 1 {
            matched as f64 / total as f64
        } else {
            (matched as f64 + 1.0) / (total as f64 + 1.0)
        };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln();
    }
    let r = references
        .iter()
        .map(|x| x.len())
        .min_by_key(|&len| (len.abs_diff(c), len))
        .unwrap_or(c);
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (log_sum / MAX_ORDER as f64).exp()
}

/// Mean BLEU of each response against the others, times 100.
pub fn self_bleu<T: Hash + Eq>(responses: &[Vec<T>]) -> Result<f64> {
    if responses.len() < 2 {
        return Err(Error::contract(format!("self-BLEU needs at least 2 responses, got {}", responses.len())));
    }
    let total: f64 = (0..responses.len())
        .map(|i| {
            let refs: Vec<&[T]> = responses
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, r)| r.as_slice())
                .collect();
            sentence_bleu(&responses[i], &refs)
        })
        .sum();
    Ok(100.0 * total / responses.len() as f64)
}

/// Inter-response diversity: `100 - self_bleu` averaged over problems.
pub fn div_selfbleu<T: Hash + Eq>(per_problem: &[Vec<Vec<T>>]) -> Result<f64> {
    if per_problem.is_empty() {
        return Err(Error::contract("div_selfbleu needs at least one problem"));
    }
    let mut sum = 0.0;
    for responses in per_problem {
        sum += 100.0 - self_bleu(responses)?;
    }
    Ok(sum / per_problem.len() as f64)
}
