//! Word-level caption vocabulary with reserved control tokens.

use std::collections::{BTreeSet, HashMap};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const MASK: usize = 1;
pub const SOM: usize = 2;
pub const EOM: usize = 3;
pub const SOT: usize = 4;
pub const EOT: usize = 5;
pub const SOOBJ: usize = 6;
pub const EOOBJ: usize = 7;
pub const STOPOBJ: usize = 8;
pub const UNK: usize = 9;

pub const SPECIAL_TOKENS: [&str; 10] =
    ["<pad>", "<mask>", "<som>", "<eom>", "<sot>", "<eot>", "<soobj>", "<eoobj>", "<stopobj>", "<unk>"];

/// Lower-cases and splits on whitespace; every other non-alphanumeric
/// character except the apostrophe becomes its own token.
pub fn split_words(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in s.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() || ch == '\'' {
            cur.push(ch);
            continue;
        }
        if !cur.is_empty() {
            out.push(std::mem::take(&mut cur));
        }
        if !ch.is_whitespace() {
            out.push(ch.to_string());
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn is_punct(tok: &str) -> bool {
    let mut chars = tok.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if !c.is_alphanumeric() && c != '\'')
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextVocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl TextVocab {
    /// Vocabulary of all words in `corpus`, sorted, after the control tokens.
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<String> = corpus.into_iter().flat_map(split_words).collect();
        Self::from_tokens(SPECIAL_TOKENS.iter().map(|s| s.to_string()).chain(words).collect())
            .expect("control tokens are in place")
    }

    /// Rebuilds from a stored token table, which must start with the control tokens.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < SPECIAL_TOKENS.len() || tokens.iter().zip(SPECIAL_TOKENS).any(|(a, b)| a != b) {
            return Err(Error::InvalidConfig("vocabulary must start with the control tokens".into()));
        }
        let index: HashMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != tokens.len() {
            return Err(Error::InvalidConfig("duplicate vocabulary entry".into()));
        }
        Ok(TextVocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied().filter(|&i| i >= SPECIAL_TOKENS.len())
    }

    pub fn encode(&self, s: &str) -> Vec<usize> {
        split_words(s).iter().map(|w| self.id(w).unwrap_or(UNK)).collect()
    }

    /// Words joined by spaces, with punctuation attached to the preceding word.
    pub fn decode(&self, ids: &[usize]) -> Result<String> {
        let mut out = String::new();
        for &id in ids {
            let tok = self.tokens.get(id).ok_or(Error::InvalidToken { id, vocab: self.len() })?;
            if !out.is_empty() && !is_punct(tok) {
                out.push(' ');
            }
            out.push_str(tok);
        }
        Ok(out)
    }
}
