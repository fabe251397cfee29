//! Character-level SMILES tokenizer with BOS/EOS/PAD/UNK specials.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
const SPECIALS: usize = 4;

/// Characters seen in organic SMILES, in id order after the four specials.
pub const DEFAULT_ALPHABET: &str = "#%()+-./0123456789:=@ABCDEFGHIKLMNOPRSTVXZ[\\]abcdefgilmnoprstu";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl Vocab {
    pub fn new(alphabet: &str) -> Result<Self> {
        let chars: Vec<char> = alphabet.chars().collect();
        let mut index = HashMap::with_capacity(chars.len());
        for (i, &c) in chars.iter().enumerate() {
            if index.insert(c, SPECIALS + i).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary character {c:?}")));
            }
        }
        Ok(Self { chars, index })
    }

    /// Number of token ids including specials.
    pub fn len(&self) -> usize {
        SPECIALS + self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(UNK)
    }

    pub fn char_of(&self, id: usize) -> Option<char> {
        id.checked_sub(SPECIALS).and_then(|i| self.chars.get(i).copied())
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new(DEFAULT_ALPHABET).expect("default alphabet has no duplicates")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    /// Exactly `max_len` ids; PAD only as a suffix.
    pub ids: Vec<usize>,
    /// Set when the input did not fit and was cut before EOS.
    pub truncated: bool,
}

impl TokenSeq {
    pub fn scorable(&self) -> usize {
        self.ids.iter().filter(|&&t| t != PAD).count()
    }

    /// Checks the PAD-suffix and range invariants.
    pub fn validate(&self, vocab_len: usize) -> Result<()> {
        let mut seen_pad = false;
        for &t in &self.ids {
            if t >= vocab_len {
                return Err(Error::Format(format!("token id {t} outside vocabulary of {vocab_len}")));
            }
            if t == PAD {
                seen_pad = true;
            } else if seen_pad {
                return Err(Error::Format("PAD token before a non-PAD token".into()));
            }
        }
        Ok(())
    }
}

pub fn tokenize(vocab: &Vocab, smiles: &str, max_len: usize) -> Result<TokenSeq> {
    if smiles.is_empty() {
        return Err(Error::Format("empty SMILES string".into()));
    }
    if max_len < 3 {
        return Err(Error::Config(format!(
            "max_len {max_len} cannot hold BOS, a token and EOS"
        )));
    }
    let body: Vec<usize> = smiles.chars().map(|c| vocab.id(c)).collect();
    let room = max_len - 2;
    let truncated = body.len() > room;
    let mut ids = Vec::with_capacity(max_len);
    ids.push(BOS);
    ids.extend(body.into_iter().take(room));
    ids.push(EOS);
    ids.resize(max_len, PAD);
    Ok(TokenSeq { ids, truncated })
}

/// Inverse of [`tokenize`]; UNK renders as `?`.
pub fn detokenize(vocab: &Vocab, seq: &TokenSeq) -> String {
    seq.ids
        .iter()
        .filter(|&&t| t != PAD && t != BOS && t != EOS)
        .map(|&t| if t == UNK { '?' } else { vocab.char_of(t).unwrap_or('?') })
        .collect()
}
