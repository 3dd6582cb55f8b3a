//! Autoregressive softmax policies over a fixed vocabulary.
//!
//! A policy maps a context (prompt followed by the generated prefix) to a
//! distribution over the next token; the probability of a completion is the
//! product of its per-token conditionals. Two backends are provided: an
//! exactly enumerable [`TabularPolicy`] and a small [`NeuralPolicy`].
//!
//! Sampling may use a temperature, but every recorded or differentiated
//! log-probability is taken at temperature 1.

mod checkpoint;
mod neural;
mod tabular;
mod vocab;


use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use neural::{NeuralDims, NeuralPolicy};
pub use tabular::TabularPolicy;
pub use vocab::{math, TokenId, Vocabulary};

use crate::autodiff::{log_softmax_row, softmax_row, Array, Tape, Var};
use crate::{Error, Result};

/// Largest number of sequences [`enumerate_all_sequences`] will produce.
pub const ENUMERATION_BUDGET: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Tabular(TabularPolicy),
    Neural(NeuralPolicy),
}

impl From<TabularPolicy> for Policy {
    fn from(p: TabularPolicy) -> Self {
        Policy::Tabular(p)
    }
}

impl From<NeuralPolicy> for Policy {
    fn from(p: NeuralPolicy) -> Self {
        Policy::Neural(p)
    }
}

impl Policy {
    pub fn vocab_size(&self) -> usize {
        match self {
            Policy::Tabular(p) => p.vocab_size(),
            Policy::Neural(p) => p.vocab_size(),
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Policy::Tabular(p) => p.params(),
            Policy::Neural(p) => p.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Policy::Tabular(p) => p.params_mut(),
            Policy::Neural(p) => p.params_mut(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().len()
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        let v = self.vocab_size();
        match tokens.iter().find(|&&t| t >= v) {
            Some(t) => Err(Error::contract(format!("token id {t} outside vocabulary of {v}"))),
            None => Ok(()),
        }
    }

    /// Logits for each context, one row per context.
    pub fn logits_rows(&self, contexts: &[&[TokenId]]) -> Result<Array> {
        for c in contexts {
            self.check_tokens(c)?;
        }
        Ok(match self {
            Policy::Tabular(p) => p.logits_rows(contexts),
            Policy::Neural(p) => p.logits_rows(contexts),
        })
    }

    pub fn logits(&self, context: &[TokenId]) -> Result<Vec<f64>> {
        Ok(self.logits_rows(&[context])?.into_data())
    }

    /// Next-token distribution at `temperature` for `prompt ++ prefix`.
    pub fn token_distribution(
        &self,
        prompt: &[TokenId],
        prefix: &[TokenId],
        temperature: f64,
    ) -> Result<Vec<f64>> {
        if !(temperature > 0.0) {
            return Err(Error::contract(format!("temperature must be positive, got {temperature}")));
        }
        let context = concat(prompt, prefix);
        let z: Vec<f64> = self.logits(&context)?.into_iter().map(|x| x / temperature).collect();
        let mut p = vec![0.0; z.len()];
        softmax_row(&z, &mut p);
        Ok(p)
    }

    /// Shannon entropy (nats) of the temperature-1 next-token distribution.
    pub fn entropy(&self, context: &[TokenId]) -> Result<f64> {
        let z = self.logits(context)?;
        Ok(entropy_of_logits(&z))
    }

    /// Temperature-1 log-probability of every token of `tokens` given the
    /// tokens before it.
    pub fn sequence_log_probs(&self, prompt: &[TokenId], tokens: &[TokenId]) -> Result<Vec<f64>> {
        if tokens.is_empty() {
            return Err(Error::contract("cannot score an empty completion"));
        }
        self.check_tokens(tokens)?;
        let full = concat(prompt, tokens);
        let contexts: Vec<&[TokenId]> = (0..tokens.len()).map(|t| &full[..prompt.len() + t]).collect();
        let z = self.logits_rows(&contexts)?;
        let v = self.vocab_size();
        let mut lp = vec![0.0; v];
        Ok(tokens
            .iter()
            .enumerate()
            .map(|(t, &tok)| {
                log_softmax_row(&z.data()[t * v..(t + 1) * v], &mut lp);
                lp[tok]
            })
            .collect())
    }

    /// Argmax decoding; ties go to the lowest token id.
    pub fn greedy_completion(&self, prompt: &[TokenId], eos: TokenId, max_len: usize) -> Result<Vec<TokenId>> {
        let mut context = prompt.to_vec();
        let mut out = Vec::new();
        while out.len() < max_len {
            let z = self.logits(&context)?;
            let mut best = 0;
            for (i, &x) in z.iter().enumerate() {
                if x > z[best] {
                    best = i;
                }
            }
            out.push(best);
            context.push(best);
            if best == eos {
                break;
            }
        }
        Ok(out)
    }
}

pub fn entropy_of_logits(z: &[f64]) -> f64 {
    let mut lp = vec![0.0; z.len()];
    log_softmax_row(z, &mut lp);
    -lp.iter().map(|&l| if l.is_finite() { l.exp() * l } else { 0.0 }).sum::<f64>()
}

fn concat(a: &[TokenId], b: &[TokenId]) -> Vec<TokenId> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

/// One sampled completion with its temperature-1 log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub tokens: Vec<TokenId>,
    pub log_probs: Vec<f64>,
}

/// Samples until `eos` or `max_len` tokens, drawing from the temperature
/// distribution and recording temperature-1 log-probabilities.
pub fn sample_completion(
    policy: &Policy,
    prompt: &[TokenId],
    eos: TokenId,
    temperature: f64,
    max_len: usize,
    seed: u64,
) -> Result<Completion> {
    if max_len == 0 {
        return Err(Error::contract("max_len must be at least 1"));
    }
    if !(temperature > 0.0) {
        return Err(Error::contract(format!("temperature must be positive, got {temperature}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = policy.vocab_size();
    let mut context = prompt.to_vec();
    let mut tokens = Vec::new();
    let mut log_probs = Vec::new();
    let (mut lp, mut p) = (vec![0.0; v], vec![0.0; v]);
    while tokens.len() < max_len {
        let z = policy.logits(&context)?;
        log_softmax_row(&z, &mut lp);
        let scaled: Vec<f64> = z.iter().map(|x| x / temperature).collect();
        softmax_row(&scaled, &mut p);
        let tok = draw(&p, rng.gen::<f64>());
        tokens.push(tok);
        log_probs.push(lp[tok]);
        context.push(tok);
        if tok == eos {
            break;
        }
    }
    Ok(Completion { tokens, log_probs })
}

/// Inverse-CDF draw; never returns a zero-probability token.
fn draw(p: &[f64], u: f64) -> TokenId {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &pi) in p.iter().enumerate() {
        if pi <= 0.0 {
            continue;
        }
        last = i;
        acc += pi;
        if u < acc {
            return i;
        }
    }
    last
}

/// Every completion of `prompt` with its exact probability.
///
/// Completions end at `eos` or at `max_len` tokens. Branches whose
/// probability underflows to exactly zero are dropped.
pub fn enumerate_all_sequences(
    policy: &Policy,
    prompt: &[TokenId],
    eos: TokenId,
    max_len: usize,
) -> Result<Vec<(Vec<TokenId>, f64)>> {
    if max_len == 0 {
        return Err(Error::contract("max_len must be at least 1"));
    }
    let mut out = Vec::new();
    let mut stack = vec![(Vec::new(), 1.0)];
    while let Some((prefix, prob)) = stack.pop() {
        let done = prefix.len() == max_len || prefix.last() == Some(&eos);
        if done {
            if out.len() == ENUMERATION_BUDGET {
                return Err(Error::Size { budget: ENUMERATION_BUDGET });
            }
            out.push((prefix, prob));
            continue;
        }
        let dist = policy.token_distribution(prompt, &prefix, 1.0)?;
        for (tok, &p) in dist.iter().enumerate().rev() {
            let q = prob * p;
            if q > 0.0 {
                let mut next = prefix.clone();
                next.push(tok);
                stack.push((next, q));
            }
        }
    }
    Ok(out)
}

/// Role of a frozen policy copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotRole {
    /// Behavior policy that sampled the current batch.
    Old,
    /// Anchor of the KL penalty.
    Ref,
}

/// Immutable copy of a policy.
#[derive(Debug, Clone)]
pub struct PolicySnapshot {
    role: SnapshotRole,
    policy: Policy,
}

impl PolicySnapshot {
    pub fn new(policy: &Policy, role: SnapshotRole) -> Self {
        Self { role, policy: policy.clone() }
    }

    pub fn role(&self) -> SnapshotRole {
        self.role
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }
}

/// A policy whose parameters live on a tape as one flat leaf.
pub struct BoundPolicy<'p> {
    policy: &'p Policy,
    flat: Var,
}

impl<'p> BoundPolicy<'p> {
    /// Records the policy's current parameters as a new leaf.
    pub fn new(policy: &'p Policy, tape: &mut Tape) -> Self {
        let flat = tape.leaf(Array::vector(policy.params().to_vec()));
        Self { policy, flat }
    }

    /// Uses an existing flat node as the parameters; the policy only
    /// supplies the architecture.
    pub fn from_var(policy: &'p Policy, tape: &Tape, flat: Var) -> Result<Self> {
        if tape.value(flat).len() != policy.num_params() {
            return Err(Error::contract(format!(
                "parameter node has {} entries, policy needs {}",
                tape.value(flat).len(),
                policy.num_params()
            )));
        }
        Ok(Self { policy, flat })
    }

    pub fn policy(&self) -> &Policy {
        self.policy
    }

    pub fn params_var(&self) -> Var {
        self.flat
    }

    /// Logits node of shape `[T, V]`, one row per position of `tokens`.
    pub fn step_logits(&self, tape: &mut Tape, prompt: &[TokenId], tokens: &[TokenId]) -> Result<Var> {
        if tokens.is_empty() {
            return Err(Error::contract("cannot score an empty completion"));
        }
        self.policy.check_tokens(prompt)?;
        self.policy.check_tokens(tokens)?;
        let full = concat(prompt, tokens);
        let contexts: Vec<&[TokenId]> = (0..tokens.len()).map(|t| &full[..prompt.len() + t]).collect();
        match self.policy {
            Policy::Tabular(p) => p.logits_on_tape(tape, self.flat, &contexts),
            Policy::Neural(p) => p.logits_on_tape(tape, self.flat, &contexts),
        }
    }

    /// Differentiable per-token log-probabilities (vector of length `T`).
    pub fn token_log_probs(&self, tape: &mut Tape, prompt: &[TokenId], tokens: &[TokenId]) -> Result<Var> {
        let z = self.step_logits(tape, prompt, tokens)?;
        let lp = tape.log_softmax(z)?;
        Ok(tape.pick(lp, tokens)?)
    }

    /// Accumulated gradient with respect to the flat parameters.
    pub fn gradient(&self, tape: &Tape) -> Vec<f64> {
        tape.grad(self.flat).data().to_vec()
    }
}
