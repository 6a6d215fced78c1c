//! Character vocabulary and string encoding.
//!
//! Characters are Unicode scalar values taken verbatim from the training
//! corpus: no case folding, no normalization. Index 0 is padding and index 1
//! stands in for any character not seen at construction time.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const PAD_INDEX: usize = 0;
pub const UNK_INDEX: usize = 1;
const RESERVED: usize = 2;

/// Bidirectional character/index map. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    index_of: HashMap<char, usize>,
}

impl CharVocab {
    /// Collects every distinct character of `corpus` in first-appearance order.
    pub fn build<I, S>(corpus: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut chars = Vec::new();
        let mut index_of = HashMap::new();
        for text in corpus {
            for ch in text.as_ref().chars() {
                index_of.entry(ch).or_insert_with(|| {
                    chars.push(ch);
                    RESERVED + chars.len() - 1
                });
            }
        }
        if chars.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(Self { chars, index_of })
    }

    /// Rebuilds a vocabulary from its persisted character list (reserved slots excluded).
    pub fn from_chars(chars: Vec<char>) -> Result<Self> {
        if chars.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut index_of = HashMap::with_capacity(chars.len());
        for (i, &ch) in chars.iter().enumerate() {
            if index_of.insert(ch, RESERVED + i).is_some() {
                return Err(Error::VocabMismatch(format!("duplicate character {ch:?}")));
            }
        }
        Ok(Self { chars, index_of })
    }

    /// Total number of indices, reserved slots included.
    pub fn size(&self) -> usize {
        self.chars.len() + RESERVED
    }

    /// Corpus characters in index order, starting at index 2.
    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn index_of(&self, ch: char) -> usize {
        self.index_of.get(&ch).copied().unwrap_or(UNK_INDEX)
    }

    /// Character for a non-reserved index.
    pub fn char_at(&self, index: usize) -> Option<char> {
        index.checked_sub(RESERVED).and_then(|i| self.chars.get(i).copied())
    }

    pub fn encode(&self, text: &str) -> Result<EncodedSequence> {
        let indices: Vec<usize> = text.chars().map(|ch| self.index_of(ch)).collect();
        if indices.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(EncodedSequence { indices })
    }

    /// Inverse of [`encode`](Self::encode); `None` if any index is reserved or out of range.
    pub fn decode(&self, seq: &EncodedSequence) -> Option<String> {
        seq.indices.iter().map(|&i| self.char_at(i)).collect()
    }
}

/// Index sequence for one string. Never empty and never contains [`PAD_INDEX`].
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EncodedSequence {
    indices: Vec<usize>,
}

impl EncodedSequence {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyInput);
        }
        if indices.contains(&PAD_INDEX) {
            return Err(Error::Data("encoded sequence contains the padding index".into()));
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}
