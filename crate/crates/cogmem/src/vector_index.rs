//! Exact in-memory top-k cosine index plus the deterministic feature-hash
//! embedder.
//!
//! The index is a linear scan on purpose: store sizes are small, exactness
//! turns every retrieval test into an oracle test, and the trait-free
//! surface is easy to swap for an external vector database later.

use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

/// Default embedding dimension.
pub const DEFAULT_DIMENSION: usize = 64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IndexError {
    #[error("vector dimension {got} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// A dense vector, unit-normalized on construction. The all-zero vector is
/// the documented sentinel for empty text and never normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    /// Builds an embedding, scaling to unit L2 norm unless the input is the
    /// zero vector.
    pub fn new(mut values: Vec<f64>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
        }
        Self { values }
    }

    pub fn zero(dim: usize) -> Self {
        Self { values: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// FNV-1a 64-bit. Fixed here so bucket assignment never shifts across
/// platforms or std versions.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Deterministic bag-of-words feature-hash embedder: lowercase, split on
/// non-alphanumeric runs, each token bumps one of `dim` buckets, then
/// unit-normalize. Empty text maps to the zero-vector sentinel.
pub fn embed(text: &str, dim: usize) -> Embedding {
    assert!(dim > 0, "embedding dimension must be positive");
    let mut buckets = vec![0.0f64; dim];
    let lower = text.to_lowercase();
    for token in lower.split(|c: char| !c.is_alphanumeric()) {
        if token.is_empty() {
            continue;
        }
        let bucket = (fnv1a(token.as_bytes()) % dim as u64) as usize;
        buckets[bucket] += 1.0;
    }
    Embedding::new(buckets)
}

/// Cosine similarity of two already-normalized embeddings; a zero-vector
/// operand yields 0.
pub fn cosine(u: &Embedding, v: &Embedding) -> Result<f64, IndexError> {
    if u.dim() != v.dim() {
        return Err(IndexError::DimensionMismatch { expected: u.dim(), got: v.dim() });
    }
    Ok(u.values.iter().zip(&v.values).map(|(a, b)| a * b).sum())
}

/// An indexed vector with an opaque reference into the owning store.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub entry_id: String,
    pub vector: Embedding,
    pub payload_id: String,
}

/// Exact top-k cosine index. Search output equals a brute-force scan by
/// construction: similarity descending, ties broken by insertion order
/// (older first). Upserting an existing id keeps its insertion slot.
#[derive(Debug, Default)]
pub struct VectorIndex {
    dim: usize,
    entries: Vec<IndexEntry>,
    by_id: HashMap<String, usize>,
}

impl VectorIndex {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "index dimension must be positive");
        Self { dim, entries: Vec::new(), by_id: HashMap::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn upsert(&mut self, entry: IndexEntry) -> Result<(), IndexError> {
        if entry.vector.dim() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: entry.vector.dim(),
            });
        }
        match self.by_id.get(&entry.entry_id) {
            Some(&pos) => self.entries[pos] = entry,
            None => {
                self.by_id.insert(entry.entry_id.clone(), self.entries.len());
                self.entries.push(entry);
            }
        }
        Ok(())
    }

    /// Removes an entry, reporting whether it existed.
    pub fn remove(&mut self, entry_id: &str) -> bool {
        let Some(pos) = self.by_id.remove(entry_id) else {
            return false;
        };
        self.entries.remove(pos);
        for (i, e) in self.entries.iter().enumerate().skip(pos) {
            self.by_id.insert(e.entry_id.clone(), i);
        }
        true
    }

    /// Entries with cosine ≥ `min_sim`, similarity descending, insertion
    /// order breaking ties, truncated to `k`.
    pub fn search_top_k(
        &self,
        query: &Embedding,
        k: usize,
        min_sim: f64,
    ) -> Result<Vec<(String, f64)>, IndexError> {
        assert!(k >= 1, "k must be at least 1");
        if query.dim() != self.dim {
            return Err(IndexError::DimensionMismatch { expected: self.dim, got: query.dim() });
        }
        let mut hits: Vec<(usize, f64)> = Vec::new();
        for (seq, entry) in self.entries.iter().enumerate() {
            let sim = cosine(query, &entry.vector)?;
            if sim >= min_sim {
                hits.push((seq, sim));
            }
        }
        hits.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        hits.truncate(k);
        Ok(hits
            .into_iter()
            .map(|(seq, sim)| (self.entries[seq].entry_id.clone(), sim))
            .collect())
    }
}
