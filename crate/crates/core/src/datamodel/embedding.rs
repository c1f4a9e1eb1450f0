use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::DataError;

pub const DEFAULT_EMBEDDING_DIM: usize = 300;
pub const DEFAULT_EMBEDDING_SEED: u64 = 0x5eed_0e3b;

/// How a multi-word phrase becomes one vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbedMode {
    /// Vector of the first token.
    Single,
    /// Arithmetic mean of all token vectors.
    Average,
}

/// Fixed word vectors with a deterministic fallback for unknown tokens.
///
/// The fallback hashes the token together with `seed` and draws components
/// uniformly from `[-1, 1]`, so the same token always gets the same vector.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    seed: u64,
    vectors: HashMap<String, Vec<f64>>,
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

impl Default for EmbeddingTable {
    fn default() -> Self {
        Self::hashed(DEFAULT_EMBEDDING_DIM, DEFAULT_EMBEDDING_SEED)
    }
}

impl EmbeddingTable {
    /// Table with no stored vectors; every lookup uses the fallback.
    pub fn hashed(dim: usize, seed: u64) -> Self {
        Self {
            dim,
            seed,
            vectors: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn insert(&mut self, token: &str, vector: Vec<f64>) -> Result<(), DataError> {
        if vector.len() != self.dim {
            return Err(DataError::Format(format!(
                "embedding for '{token}' has {} components, table dimension is {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(DataError::Format(format!(
                "embedding for '{token}' is not finite"
            )));
        }
        self.vectors.insert(token.to_string(), vector);
        Ok(())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vectors.contains_key(token)
    }

    pub fn lookup(&self, token: &str) -> Vec<f64> {
        if let Some(v) = self.vectors.get(token) {
            return v.clone();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token.as_bytes()) ^ self.seed);
        (0..self.dim)
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect()
    }

    /// Parses the whitespace-separated `token v1 ... vD` text layout. The
    /// dimension is taken from the first line; `seed` drives the fallback.
    pub fn parse_text(text: &str, seed: u64) -> Result<Self, DataError> {
        let mut table: Option<Self> = None;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let token = fields.next().expect("non-empty line");
            let values: Vec<f64> = fields
                .map(|f| {
                    f.parse::<f64>().map_err(|_| {
                        DataError::Format(format!(
                            "embedding line {}: bad number '{f}'",
                            lineno + 1
                        ))
                    })
                })
                .collect::<Result<_, _>>()?;
            if values.is_empty() {
                return Err(DataError::Format(format!(
                    "embedding line {} has no values",
                    lineno + 1
                )));
            }
            let t = table.get_or_insert_with(|| Self::hashed(values.len(), seed));
            t.insert(&token.to_lowercase(), values)
                .map_err(|e| DataError::Format(format!("embedding line {}: {e}", lineno + 1)))?;
        }
        table.ok_or_else(|| DataError::Format("embedding file is empty".into()))
    }

    pub fn load(path: &Path, seed: u64) -> Result<Self, DataError> {
        let text = fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::parse_text(&text, seed)
    }
}

/// One vector for a phrase under `mode`. Unknown tokens use the fallback.
pub fn embed_tokens(
    tokens: &[String],
    table: &EmbeddingTable,
    mode: EmbedMode,
) -> Result<Vec<f64>, DataError> {
    let Some(first) = tokens.first() else {
        return Err(DataError::Domain("cannot embed an empty token list".into()));
    };
    match mode {
        EmbedMode::Single => Ok(table.lookup(first)),
        EmbedMode::Average => {
            let mut acc = vec![0.0; table.dim()];
            for t in tokens {
                for (a, v) in acc.iter_mut().zip(table.lookup(t)) {
                    *a += v;
                }
            }
            let n = tokens.len() as f64;
            Ok(acc.into_iter().map(|v| v / n).collect())
        }
    }
}
