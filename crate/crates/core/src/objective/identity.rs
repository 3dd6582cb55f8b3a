use serde::{Deserialize, Serialize};

use crate::autodiff::log_softmax_row;
use crate::policy::{enumerate_all_sequences, Policy, TokenId};
use crate::{Error, Result};

/// Divisor applied to the per-token sum of each sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LengthNormalizer {
    /// `1/T` with `T` the sequence's own length.
    PerSequence,
    /// `1/max_len` for every sequence.
    MaxLen,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    /// Expected mean conditional entropy of `π_θ` along `π_old` sequences.
    pub lhs: f64,
    /// Expected importance-weighted diversity surrogate.
    pub rhs: f64,
    pub gap: f64,
    pub sequences: usize,
}

/// Compares the entropy form and the importance-weighted form of the
/// diversity objective by exact enumeration of every `π_old` sequence.
///
/// Per sequence `o` of length `T` with normalizer `N`:
/// `lhs += P_old(o) (1/N) Σ_t H(π_θ(·|o_<t))` and
/// `rhs += P_old(o) (1/N) Σ_t -(π_θ(o_t)/π_old(o_t)) log π_θ(o_t)`.
///
/// The two agree exactly when `N` does not depend on the sequence (a fixed
/// normalizer, or no token ends sequences early). With `1/T` and an EOS
/// that can end sequences at different lengths they differ in general,
/// because `T` depends on the tokens the importance weight reweights.
pub fn verify_identity(
    theta: &Policy,
    old: &Policy,
    prompt: &[TokenId],
    eos: TokenId,
    max_len: usize,
    normalizer: LengthNormalizer,
) -> Result<IdentityReport> {
    if theta.vocab_size() != old.vocab_size() {
        return Err(Error::contract("policies use different vocabularies"));
    }
    let v = theta.vocab_size();
    let sequences = enumerate_all_sequences(old, prompt, eos, max_len)?;
    let (mut lhs, mut rhs) = (0.0, 0.0);
    let mut row = vec![0.0; v];
    for (seq, q) in &sequences {
        let mut full = prompt.to_vec();
        full.extend_from_slice(seq);
        let contexts: Vec<&[TokenId]> = (0..seq.len()).map(|t| &full[..prompt.len() + t]).collect();
        let z = theta.logits_rows(&contexts)?;
        let old_lp = old.sequence_log_probs(prompt, seq)?;
        let (mut entropy, mut surrogate) = (0.0, 0.0);
        for (t, &tok) in seq.iter().enumerate() {
            log_softmax_row(&z.data()[t * v..(t + 1) * v], &mut row);
            entropy -= row.iter().map(|&l| if l.is_finite() { l.exp() * l } else { 0.0 }).sum::<f64>();
            surrogate -= (row[tok] - old_lp[t]).exp() * row[tok];
        }
        let n = match normalizer {
            LengthNormalizer::PerSequence => seq.len(),
            LengthNormalizer::MaxLen => max_len,
        } as f64;
        lhs += q * entropy / n;
        rhs += q * surrogate / n;
    }
    Ok(IdentityReport { lhs, rhs, gap: (lhs - rhs).abs(), sequences: sequences.len() })
}

/// Per-token factor of the diversity gradient, `-(1 + ln p)`.
pub fn direction_coefficient(p: f64) -> f64 {
    -(1.0 + p.ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenDirection {
    pub token: TokenId,
    pub prob: f64,
    pub coefficient: f64,
    /// `+1` when the diversity gradient raises the token's probability,
    /// `-1` when it lowers it, `0` on the boundary `p = 1/e`.
    pub sign: i8,
}

/// The diversity gradient at each realized token is `-(1 + ln p_t) ∇π_θ`:
/// tokens with `p_t < 1/e` are pushed up and likelier ones pushed down.
pub fn gradient_direction_report(policy: &Policy, prompt: &[TokenId], tokens: &[TokenId]) -> Result<Vec<TokenDirection>> {
    let lp = policy.sequence_log_probs(prompt, tokens)?;
    Ok(tokens
        .iter()
        .zip(lp)
        .map(|(&token, l)| {
            let coefficient = -(1.0 + l);
            let sign = if coefficient > 0.0 {
                1
            } else if coefficient < 0.0 {
                -1
            } else {
                0
            };
            TokenDirection { token, prob: l.exp(), coefficient, sign }
        })
        .collect())
}
