//! Word embedding table: a seeded hash projection with an optional
//! override table of externally supplied vectors.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::math::{fnv1a, mix64, normalized};

/// Maps a token to a unit vector. The same token always maps to the same
/// vector for a given `(dim, seed, overrides)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordEmbedder {
    dim: usize,
    seed: u64,
    #[serde(with = "override_table")]
    overrides: BTreeMap<String, Vec<f64>>,
}

impl WordEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self { dim, seed, overrides: BTreeMap::new() }
    }

    /// Adds override vectors; each is rescaled to unit norm. Vectors of the
    /// wrong dimension are ignored.
    pub fn with_overrides(mut self, table: BTreeMap<String, Vec<f64>>) -> Self {
        for (tok, v) in table {
            if v.len() == self.dim {
                self.overrides.insert(tok, normalized(&v));
            }
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn overrides(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.overrides
    }

    pub fn token(&self, token: &str) -> Vec<f64> {
        if let Some(v) = self.overrides.get(token) {
            return v.clone();
        }
        self.hashed(token)
    }

    /// The hash projection, ignoring overrides.
    pub fn hashed(&self, token: &str) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(fnv1a(token.as_bytes()) ^ self.seed));
        let v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        normalized(&v)
    }

    /// Mean of token vectors; the zero vector for an empty surface.
    pub fn surface(&self, tokens: &[String]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        if tokens.is_empty() {
            return acc;
        }
        for t in tokens {
            crate::math::add_assign(&mut acc, &self.token(t));
        }
        let n = tokens.len() as f64;
        acc.iter_mut().for_each(|x| *x /= n);
        acc
    }
}

pub(crate) mod override_table {
    use super::*;
    use crate::codec::{decode_f64s, encode_f64s};
    use serde::{de, Deserializer, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Table {
        tokens: Vec<String>,
        vectors: String,
    }

    pub fn serialize<S: Serializer>(m: &BTreeMap<String, Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
        let tokens: Vec<String> = m.keys().cloned().collect();
        let flat: Vec<f64> = m.values().flatten().copied().collect();
        Table { tokens, vectors: encode_f64s(&flat) }.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<String, Vec<f64>>, D::Error> {
        let t = Table::deserialize(d)?;
        let flat = decode_f64s(&t.vectors).map_err(de::Error::custom)?;
        if t.tokens.is_empty() {
            return Ok(BTreeMap::new());
        }
        if flat.len() % t.tokens.len() != 0 {
            return Err(de::Error::custom("override table size mismatch"));
        }
        let dim = flat.len() / t.tokens.len();
        Ok(t.tokens.into_iter().zip(flat.chunks(dim.max(1))).map(|(k, v)| (k, v.to_vec())).collect())
    }
}
