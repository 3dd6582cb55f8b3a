use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TokenId;
use crate::autodiff::{Array, Tape, Var};
use crate::{Error, Result};

/// Shape of the MLP policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeuralDims {
    pub embed_dim: usize,
    /// Number of most recent context tokens fed to the network.
    pub window: usize,
    pub hidden: usize,
}

impl Default for NeuralDims {
    fn default() -> Self {
        Self { embed_dim: 16, window: 8, hidden: 64 }
    }
}

/// Window MLP: embeddings of the last `window` tokens are concatenated,
/// passed through one tanh layer and projected to vocabulary logits.
///
/// Parameters live in one flat buffer laid out as
/// `[embedding | w_hidden | b_hidden | w_out | b_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralPolicy {
    vocab_size: usize,
    pad: TokenId,
    dims: NeuralDims,
    params: Vec<f64>,
}

struct Layout {
    embedding: (usize, usize),
    w_hidden: (usize, usize),
    b_hidden: (usize, usize),
    w_out: (usize, usize),
    b_out: (usize, usize),
}

impl NeuralPolicy {
    /// Parameters drawn uniformly from `[-init_scale, init_scale]`.
    pub fn new(vocab_size: usize, pad: TokenId, dims: NeuralDims, init_scale: f64, seed: u64) -> Result<Self> {
        if pad >= vocab_size {
            return Err(Error::contract(format!("pad token {pad} outside vocabulary")));
        }
        if dims.embed_dim == 0 || dims.window == 0 || dims.hidden == 0 {
            return Err(Error::contract("neural dimensions must be positive"));
        }
        let n = Self::param_count(vocab_size, dims);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = (0..n).map(|_| rng.gen_range(-init_scale..=init_scale)).collect();
        Ok(Self { vocab_size, pad, dims, params })
    }

    pub fn from_params(vocab_size: usize, pad: TokenId, dims: NeuralDims, params: Vec<f64>) -> Result<Self> {
        let n = Self::param_count(vocab_size, dims);
        if params.len() != n {
            return Err(Error::contract(format!("neural policy needs {n} parameters, got {}", params.len())));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::numeric("neural parameters must be finite"));
        }
        Ok(Self { vocab_size, pad, dims, params })
    }

    pub fn param_count(vocab_size: usize, dims: NeuralDims) -> usize {
        let input = dims.window * dims.embed_dim;
        vocab_size * dims.embed_dim + input * dims.hidden + dims.hidden + dims.hidden * vocab_size + vocab_size
    }

    fn layout(&self) -> Layout {
        let d = self.dims;
        let input = d.window * d.embed_dim;
        let e = self.vocab_size * d.embed_dim;
        let w1 = input * d.hidden;
        let w2 = d.hidden * self.vocab_size;
        Layout {
            embedding: (0, e),
            w_hidden: (e, e + w1),
            b_hidden: (e + w1, e + w1 + d.hidden),
            w_out: (e + w1 + d.hidden, e + w1 + d.hidden + w2),
            b_out: (e + w1 + d.hidden + w2, self.params.len()),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn pad(&self) -> TokenId {
        self.pad
    }

    pub fn dims(&self) -> NeuralDims {
        self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Left-padded window of the most recent tokens.
    fn window(&self, context: &[TokenId]) -> Vec<TokenId> {
        let k = self.dims.window;
        let mut w = vec![self.pad; k.saturating_sub(context.len())];
        w.extend_from_slice(&context[context.len().saturating_sub(k)..]);
        w
    }

    /// Flat indices into the embedding table for each context window.
    fn embedding_indices(&self, contexts: &[&[TokenId]]) -> Vec<usize> {
        let d = self.dims.embed_dim;
        let base = self.layout().embedding.0;
        let mut idx = Vec::with_capacity(contexts.len() * self.dims.window * d);
        for c in contexts {
            for tok in self.window(c) {
                idx.extend(base + tok * d..base + (tok + 1) * d);
            }
        }
        idx
    }

    pub(crate) fn logits_rows(&self, contexts: &[&[TokenId]]) -> Array {
        let l = self.layout();
        let d = self.dims;
        let t = contexts.len();
        let input = d.window * d.embed_dim;
        let x: Vec<f64> = self.embedding_indices(contexts).into_iter().map(|i| self.params[i]).collect();
        let x = Array::matrix(t, input, x).expect("input shape");
        let w1 = Array::matrix(input, d.hidden, self.params[l.w_hidden.0..l.w_hidden.1].to_vec()).expect("w1");
        let mut h = x.matmul(&w1).expect("hidden matmul");
        let b1 = &self.params[l.b_hidden.0..l.b_hidden.1];
        for row in h.data_mut().chunks_mut(d.hidden) {
            for (v, b) in row.iter_mut().zip(b1) {
                *v = (*v + b).tanh();
            }
        }
        let w2 = Array::matrix(d.hidden, self.vocab_size, self.params[l.w_out.0..l.w_out.1].to_vec()).expect("w2");
        let mut z = h.matmul(&w2).expect("output matmul");
        let b2 = &self.params[l.b_out.0..l.b_out.1];
        for row in z.data_mut().chunks_mut(self.vocab_size) {
            for (v, b) in row.iter_mut().zip(b2) {
                *v += b;
            }
        }
        z
    }

    pub(crate) fn logits_on_tape(&self, tape: &mut Tape, flat: Var, contexts: &[&[TokenId]]) -> Result<Var> {
        let l = self.layout();
        let d = self.dims;
        let input = d.window * d.embed_dim;
        let segment = |tape: &mut Tape, (a, b): (usize, usize), shape: Vec<usize>| {
            tape.gather(flat, (a..b).collect(), shape)
        };
        let x = tape.gather(flat, self.embedding_indices(contexts), vec![contexts.len(), input])?;
        let w1 = segment(tape, l.w_hidden, vec![input, d.hidden])?;
        let b1 = segment(tape, l.b_hidden, vec![d.hidden])?;
        let w2 = segment(tape, l.w_out, vec![d.hidden, self.vocab_size])?;
        let b2 = segment(tape, l.b_out, vec![self.vocab_size])?;
        let pre = tape.matmul(x, w1)?;
        let pre = tape.add_row(pre, b1)?;
        let h = tape.tanh(pre);
        let z = tape.matmul(h, w2)?;
        Ok(tape.add_row(z, b2)?)
    }
}
