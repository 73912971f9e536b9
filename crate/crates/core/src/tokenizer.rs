//! Word-level tokenizer with reserved special tokens.
//!
//! Text is lowercased and split on whitespace; every punctuation character
//! becomes its own token. Ids below [`NUM_SPECIAL`] are reserved.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const CLS: TokenId = 2;
pub const SEP: TokenId = 3;
pub const MASK: TokenId = 4;
pub const BOS: TokenId = 5;
pub const EOS: TokenId = 6;
pub const NUM_SPECIAL: usize = 7;

/// Surface forms of the reserved tokens, indexed by id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecialTokens {
    pub pad: &'static str,
    pub unk: &'static str,
    pub cls: &'static str,
    pub sep: &'static str,
    pub mask: &'static str,
    pub bos: &'static str,
    pub eos: &'static str,
}

pub const SPECIAL_TOKENS: SpecialTokens = SpecialTokens {
    pad: "[PAD]",
    unk: "[UNK]",
    cls: "[CLS]",
    sep: "[SEP]",
    mask: "[MASK]",
    bos: "[BOS]",
    eos: "[EOS]",
};

impl SpecialTokens {
    pub fn in_id_order(&self) -> [&'static str; NUM_SPECIAL] {
        [
            self.pad, self.unk, self.cls, self.sep, self.mask, self.bos, self.eos,
        ]
    }
}

pub fn is_special(id: TokenId) -> bool {
    (id as usize) < NUM_SPECIAL
}

/// Lowercases and splits on whitespace and punctuation.
pub fn basic_tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
            out.push(ch.to_lowercase().collect());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Encoded text. Never longer than the `max_len` it was encoded with.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<TokenId>,
    pub truncated: bool,
}

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Self {
        Self {
            ids,
            truncated: false,
        }
    }

    /// Truncates `ids` to `max_len`, setting the flag when anything was cut.
    pub fn bounded(mut ids: Vec<TokenId>, max_len: usize) -> Self {
        let truncated = ids.len() > max_len;
        ids.truncate(max_len);
        Self { ids, truncated }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// The text-to-ids contract task builders depend on. Subword tokenizers can
/// implement it without touching the builders.
pub trait TextEncoder {
    /// Ids for `text` with no length limit and no special tokens added.
    fn encode_ids(&self, text: &str) -> Vec<TokenId>;

    /// Text for `ids`; special tokens are dropped.
    fn decode(&self, ids: &[TokenId]) -> String;

    fn vocab_size(&self) -> usize;

    fn encode(&self, text: &str, max_len: usize) -> TokenSequence {
        TokenSequence::bounded(self.encode_ids(text), max_len)
    }
}

/// Bijective token/id map. Ids `0..NUM_SPECIAL` are the special tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds from regular tokens in id order, after the specials.
    pub fn from_regular_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut all: Vec<String> = SPECIAL_TOKENS
            .in_id_order()
            .iter()
            .map(|s| s.to_string())
            .collect();
        all.extend(tokens.into_iter().map(Into::into));
        Self::from_all_tokens(all)
    }

    fn from_all_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, s) in SPECIAL_TOKENS.in_id_order().iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::Config(format!(
                    "vocabulary line {} must be the special token {s}",
                    i + 1
                )));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as TokenId).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary token `{t}`")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Plain text, one token per line; the line number is the id.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_all_tokens(text.lines().map(str::to_string).collect())
    }
}

impl TextEncoder for Vocabulary {
    fn encode_ids(&self, text: &str) -> Vec<TokenId> {
        basic_tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .filter(|&&id| !is_special(id))
            .filter_map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn vocab_size(&self) -> usize {
        self.len()
    }
}

/// Tokens with frequency `>= min_count`, most frequent first, ties in
/// lexicographic order.
pub fn build_vocab<I, S>(corpus: I, min_count: usize) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut docs = 0usize;
    for text in corpus {
        docs += 1;
        for tok in basic_tokenize(text.as_ref()) {
            *counts.entry(tok).or_default() += 1;
        }
    }
    if docs == 0 {
        return Err(Error::Empty("corpus"));
    }
    let specials = SPECIAL_TOKENS.in_id_order();
    let mut kept: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_count.max(1) && !specials.contains(&t.as_str()))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_regular_tokens(kept.into_iter().map(|(t, _)| t))
}
