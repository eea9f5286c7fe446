//! Lowercasing word tokenizer and corpus-built vocabulary.
//!
//! Tokens are maximal runs of ASCII letters/digits (an inner apostrophe is
//! kept, as in "aren't"); every other character separates tokens.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;

pub fn tokenize(text: &str) -> Vec<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    let re = RE.get_or_init(|| Regex::new(r"[a-z0-9]+(?:'[a-z]+)?").unwrap());
    let lower = text.to_lowercase();
    re.find_iter(&lower).map(|m| m.as_str().to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    /// Index = token id; 0 and 1 are the pad and unknown tokens.
    pub tokens: Vec<String>,
    #[serde(skip)]
    index: BTreeMap<String, u32>,
}

impl Vocabulary {
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != PAD || tokens[1] != UNK {
            return Err(Error::InvalidConfig("vocabulary must start with <pad>, <unk>".into()));
        }
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Ok(Self { tokens, index })
    }

    /// Tokens seen at least `min_count` times, by descending count then
    /// alphabetically.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in texts {
            for tok in tokenize(t) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().filter(|(_, c)| *c >= min_count.max(1)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut tokens = vec![PAD.to_string(), UNK.to_string()];
        tokens.extend(ranked.into_iter().map(|(t, _)| t));
        Self::from_tokens(tokens).expect("special tokens present")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    /// Token ids, truncated to `max_len`; errors when the text has no tokens.
    pub fn encode(&self, text: &str, max_len: usize) -> Result<Vec<u32>> {
        let ids: Vec<u32> = tokenize(text).iter().take(max_len).map(|t| self.id(t)).collect();
        if ids.is_empty() {
            return Err(Error::EmptyText);
        }
        Ok(ids)
    }
}
