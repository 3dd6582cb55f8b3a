use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TokenId;
use crate::autodiff::{Array, Tape, Var};
use crate::{Error, Result};

/// Logit table indexed by the last `order` tokens of the context.
///
/// Context keys use an alphabet of `vocab_size + 1` symbols; the extra
/// symbol pads contexts shorter than `order`. Every conditional is a
/// softmax over finite logits and therefore has full support.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    vocab_size: usize,
    order: usize,
    logits: Vec<f64>,
}

impl TabularPolicy {
    pub fn zeros(vocab_size: usize, order: usize) -> Self {
        let rows = (vocab_size + 1).pow(order as u32);
        Self { vocab_size, order, logits: vec![0.0; rows * vocab_size] }
    }

    /// Logits drawn uniformly from `[-scale, scale]`.
    pub fn random(vocab_size: usize, order: usize, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = Self::zeros(vocab_size, order);
        for z in &mut p.logits {
            *z = rng.gen_range(-scale..=scale);
        }
        p
    }

    pub fn from_logits(vocab_size: usize, order: usize, logits: Vec<f64>) -> Result<Self> {
        let p = Self::zeros(vocab_size, order);
        if logits.len() != p.logits.len() {
            return Err(Error::contract(format!(
                "tabular table needs {} logits, got {}",
                p.logits.len(),
                logits.len()
            )));
        }
        if logits.iter().any(|z| !z.is_finite()) {
            return Err(Error::numeric("tabular logits must be finite"));
        }
        Ok(Self { logits, ..p })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn rows(&self) -> usize {
        self.logits.len() / self.vocab_size
    }

    pub fn params(&self) -> &[f64] {
        &self.logits
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    /// Row index of the logit table for a context.
    pub fn context_key(&self, context: &[TokenId]) -> usize {
        let pad = self.vocab_size;
        let alphabet = self.vocab_size + 1;
        let mut key = 0;
        for j in 0..self.order {
            // position j of the window, oldest first
            let back = self.order - j;
            let tok = if context.len() >= back { context[context.len() - back] } else { pad };
            key = key * alphabet + tok;
        }
        key
    }

    /// Mutable logits of the row used for `context`.
    pub fn row_mut(&mut self, context: &[TokenId]) -> &mut [f64] {
        let k = self.context_key(context);
        let v = self.vocab_size;
        &mut self.logits[k * v..(k + 1) * v]
    }

    pub(crate) fn logits_rows(&self, contexts: &[&[TokenId]]) -> Array {
        let v = self.vocab_size;
        let mut data = Vec::with_capacity(contexts.len() * v);
        for c in contexts {
            let k = self.context_key(c);
            data.extend_from_slice(&self.logits[k * v..(k + 1) * v]);
        }
        Array::new(vec![contexts.len(), v], data).expect("row buffer matches shape")
    }

    pub(crate) fn logits_on_tape(
        &self,
        tape: &mut Tape,
        flat: Var,
        contexts: &[&[TokenId]],
    ) -> Result<Var> {
        let rows = self.rows();
        let table = tape.reshape(flat, vec![rows, self.vocab_size])?;
        let keys: Vec<usize> = contexts.iter().map(|c| self.context_key(c)).collect();
        Ok(tape.gather_rows(table, &keys)?)
    }
}
