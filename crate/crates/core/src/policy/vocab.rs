use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub type TokenId = usize;

/// Fixed token ids of the micro-math vocabulary.
pub mod math {
    use super::TokenId;

    /// Digits `0`..=`9` occupy ids 0..=9.
    pub const DIGIT_0: TokenId = 0;
    pub const PLUS: TokenId = 10;
    pub const MINUS: TokenId = 11;
    pub const TIMES: TokenId = 12;
    pub const EQUALS: TokenId = 13;
    pub const BOX_OPEN: TokenId = 14;
    pub const BOX_CLOSE: TokenId = 15;
    /// Separates steps inside a response.
    pub const STEP: TokenId = 16;
    /// Ends the question inside a prompt.
    pub const SEPARATOR: TokenId = 17;
    pub const BOS: TokenId = 18;
    pub const EOS: TokenId = 19;
    pub const SIZE: usize = 20;

    pub const SYMBOLS: [&str; SIZE] = [
        "0", "1", "2", "3", "4", "5", "6", "7", "8", "9", "+", "-", "*", "=", "[", "]", ";", "?", "<bos>", "<eos>",
    ];

    pub fn symbol(t: TokenId) -> &'static str {
        SYMBOLS.get(t).copied().unwrap_or("<?>")
    }

    pub fn digit(d: u32) -> TokenId {
        debug_assert!(d < 10);
        DIGIT_0 + d as TokenId
    }

    pub fn as_digit(t: TokenId) -> Option<u32> {
        (t < 10).then_some(t as u32)
    }

    pub fn is_operator(t: TokenId) -> bool {
        matches!(t, PLUS | MINUS | TIMES)
    }
}

/// Ordered symbol table with dense ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    symbols: Vec<String>,
    index: HashMap<String, TokenId>,
    eos: TokenId,
    bos: Option<TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary; `eos` must name exactly one symbol.
    pub fn new(symbols: Vec<String>, eos: &str, bos: Option<&str>) -> Result<Self> {
        let mut index = HashMap::with_capacity(symbols.len());
        for (id, s) in symbols.iter().enumerate() {
            if index.insert(s.clone(), id).is_some() {
                return Err(Error::contract(format!("duplicate symbol {s:?}")));
            }
        }
        let eos_id = *index
            .get(eos)
            .ok_or_else(|| Error::contract(format!("EOS symbol {eos:?} missing")))?;
        let bos_id = match bos {
            Some(b) => Some(
                *index.get(b).ok_or_else(|| Error::contract(format!("BOS symbol {b:?} missing")))?,
            ),
            None => None,
        };
        Ok(Self { symbols, index, eos: eos_id, bos: bos_id })
    }

    /// Small vocabulary of plain symbols plus a trailing `<eos>`.
    pub fn simple(symbols: &[&str]) -> Self {
        let mut all: Vec<String> = symbols.iter().map(|s| s.to_string()).collect();
        all.push("<eos>".into());
        Self::new(all, "<eos>", None).expect("simple vocabulary symbols must be unique")
    }

    /// The 20-symbol micro-math vocabulary; ids follow [`math`].
    pub fn micro_math() -> Self {
        let symbols = math::SYMBOLS.iter().map(|s| s.to_string()).collect();
        Self::new(symbols, "<eos>", Some("<bos>")).expect("micro-math vocabulary is well formed")
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn eos(&self) -> TokenId {
        self.eos
    }

    pub fn bos(&self) -> Option<TokenId> {
        self.bos
    }

    pub fn symbol(&self, id: TokenId) -> Option<&str> {
        self.symbols.get(id).map(String::as_str)
    }

    pub fn id(&self, symbol: &str) -> Option<TokenId> {
        self.index.get(symbol).copied()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    /// Hex SHA-256 over the ordered symbols; checkpoints are tied to it.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.symbols {
            h.update((s.len() as u64).to_le_bytes());
            h.update(s.as_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn check(&self, tokens: &[TokenId]) -> Result<()> {
        match tokens.iter().find(|&&t| t >= self.len()) {
            Some(t) => Err(Error::contract(format!("token id {t} outside vocabulary of {}", self.len()))),
            None => Ok(()),
        }
    }

    /// Concatenates symbols without separators.
    pub fn render(&self, tokens: &[TokenId]) -> String {
        tokens.iter().map(|&t| self.symbol(t).unwrap_or("<?>")).collect()
    }

    /// Greedy longest-match tokenization of `text`; whitespace is skipped.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        let mut out = Vec::new();
        let mut rest = text.trim_start();
        while !rest.is_empty() {
            let best = self
                .symbols
                .iter()
                .enumerate()
                .filter(|(_, s)| !s.is_empty() && rest.starts_with(s.as_str()))
                .max_by_key(|(_, s)| s.len());
            match best {
                Some((id, s)) => {
                    out.push(id);
                    rest = rest[s.len()..].trim_start();
                }
                None => return Err(Error::contract(format!("cannot tokenize {rest:?}"))),
            }
        }
        Ok(out)
    }
}
