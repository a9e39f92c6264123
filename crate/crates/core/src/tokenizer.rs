//! Lowercasing whitespace/punctuation tokenizer and vocabulary.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";

/// Splits `text` into lowercase word tokens; every punctuation character is a
/// token of its own.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !cur.is_empty() {
                out.push(core::mem::take(&mut cur));
            }
        } else if is_punct(ch) {
            if !cur.is_empty() {
                out.push(core::mem::take(&mut cur));
            }
            out.push(ch.to_string());
        } else {
            cur.extend(ch.to_lowercase());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Word tokens with punctuation dropped, as used by lexical retrieval.
pub fn words(text: &str) -> Vec<String> {
    tokenize(text).into_iter().filter(|t| !t.chars().all(is_punct)).collect()
}

fn is_punct(ch: char) -> bool {
    !ch.is_alphanumeric() && !ch.is_whitespace()
}

/// Token ↔ id map; id is the line number in the vocab file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: BTreeMap<String, u32>,
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = crate::Error;

    fn try_from(tokens: Vec<String>) -> crate::Result<Self> {
        Self::from_tokens(tokens)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Builds a vocabulary from an ordered token list.
    ///
    /// The four special tokens must be present.
    pub fn from_tokens(tokens: Vec<String>) -> crate::Result<Self> {
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(crate::Error::Validation { id: t.clone(), reason: "duplicate vocab entry".into() });
            }
        }
        for special in [PAD, UNK, CLS, SEP] {
            if !index.contains_key(special) {
                return Err(crate::Error::Validation {
                    id: special.into(),
                    reason: "special token missing from vocab".into(),
                });
            }
        }
        Ok(Self { tokens, index })
    }

    /// Specials first, then every distinct token of `texts` in sorted order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut set = BTreeSet::new();
        for t in texts {
            set.extend(tokenize(t));
        }
        let mut tokens: Vec<String> = [PAD, UNK, CLS, SEP].iter().map(|s| s.to_string()).collect();
        tokens.extend(set.into_iter().filter(|t| ![PAD, UNK, CLS, SEP].contains(&t.as_str())));
        Self::from_tokens(tokens).expect("specials are present")
    }

    /// One token per line.
    pub fn parse(text: &str) -> crate::Result<Self> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn cls(&self) -> u32 {
        self.index[CLS]
    }

    pub fn sep(&self) -> u32 {
        self.index[SEP]
    }

    pub fn unk(&self) -> u32 {
        self.index[UNK]
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|t| self.id(t).unwrap_or_else(|| self.unk())).collect()
    }
}
