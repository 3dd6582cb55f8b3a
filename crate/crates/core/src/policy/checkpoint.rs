use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NeuralDims, NeuralPolicy, Policy, TabularPolicy, Vocabulary};
use crate::{Error, Result};

const FORMAT_VERSION: u32 = 1;

/// On-disk policy: backend tag and hyperparameters, vocabulary hash and the
/// flat parameter array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub vocab_hash: String,
    pub vocab_size: usize,
    pub backend: Backend,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Backend {
    Tabular { order: usize },
    Neural { pad: usize, dims: NeuralDims },
}

impl Checkpoint {
    pub fn from_policy(policy: &Policy, vocab: &Vocabulary) -> Self {
        let backend = match policy {
            Policy::Tabular(p) => Backend::Tabular { order: p.order() },
            Policy::Neural(p) => Backend::Neural { pad: p.pad(), dims: p.dims() },
        };
        Self {
            version: FORMAT_VERSION,
            vocab_hash: vocab.hash(),
            vocab_size: vocab.len(),
            backend,
            params: policy.params().to_vec(),
        }
    }

    /// Rebuilds the policy after checking the vocabulary hash.
    pub fn into_policy(self, vocab: &Vocabulary) -> Result<Policy> {
        if self.version != FORMAT_VERSION {
            return Err(Error::Load(format!("unsupported checkpoint version {}", self.version)));
        }
        if self.vocab_hash != vocab.hash() || self.vocab_size != vocab.len() {
            return Err(Error::Load(format!(
                "vocabulary hash mismatch: checkpoint {} vs configured {}",
                self.vocab_hash,
                vocab.hash()
            )));
        }
        Ok(match self.backend {
            Backend::Tabular { order } => TabularPolicy::from_logits(self.vocab_size, order, self.params)?.into(),
            Backend::Neural { pad, dims } => NeuralPolicy::from_params(self.vocab_size, pad, dims, self.params)?.into(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

pub fn save_checkpoint(policy: &Policy, vocab: &Vocabulary, path: &Path) -> Result<()> {
    let json = Checkpoint::from_policy(policy, vocab).to_json()?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path, vocab: &Vocabulary) -> Result<Policy> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    ckpt.into_policy(vocab)
}
