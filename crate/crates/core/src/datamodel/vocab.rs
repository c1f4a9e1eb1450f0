use std::collections::{BTreeSet, HashMap};

use super::{DataError, RelationQuery};

pub const START_TOKEN: &str = "<start>";
pub const END_TOKEN: &str = "<end>";
pub const PAD_TOKEN: &str = "<pad>";

/// Decoder token space. Indices 0, 1, 2 are `<start>`, `<end>`, `<pad>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const START: usize = 0;
    pub const END: usize = 1;
    pub const PAD: usize = 2;

    /// Reserved tokens followed by `words` in the given order (duplicates
    /// and reserved names dropped).
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for w in [START_TOKEN, END_TOKEN, PAD_TOKEN] {
            v.push(w);
        }
        for w in words {
            v.push(w.as_ref());
        }
        v
    }

    fn push(&mut self, w: &str) {
        if !self.index.contains_key(w) {
            self.index.insert(w.to_string(), self.tokens.len());
            self.tokens.push(w.to_string());
        }
    }

    /// Sorted union of every word in `queries`.
    pub fn from_queries<'a>(queries: impl IntoIterator<Item = &'a RelationQuery>) -> Self {
        let words: BTreeSet<&str> = queries
            .into_iter()
            .flat_map(|q| q.tokens().map(String::as_str))
            .collect();
        Self::new(words)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> Result<usize, DataError> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| DataError::UnknownToken(token.to_string()))
    }

    pub fn token(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn words(&self) -> &[String] {
        &self.tokens[3..]
    }
}
