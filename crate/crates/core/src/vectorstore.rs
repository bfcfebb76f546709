//! Labelled word embeddings with exact Euclidean nearest-neighbour search.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::{modified_hamming, Word};

pub const FORMAT_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("vector has {found} components, store dimension is {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("vector has a non-finite component")]
    NonFinite,
    #[error("store is empty")]
    Empty,
    #[error("k must be at least 1")]
    ZeroK,
    #[error("no queries given")]
    NoQueries,
    #[error("store file version {0} is not supported (expected {FORMAT_VERSION})")]
    Version(u64),
    #[error("malformed store file: {0}")]
    Format(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingEntry {
    pub label: Word,
    #[serde(rename = "ord")]
    pub ordinal: u64,
    #[serde(rename = "vec")]
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub label: Word,
    #[serde(rename = "dist")]
    pub distance: f64,
    #[serde(skip)]
    pub ordinal: u64,
}

/// How a neighbour's label is judged against the true label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Same word or a similar one (modified Hamming distance at most 1).
    #[default]
    Similar,
    Exact,
}

impl MatchMode {
    pub fn matches(self, a: &Word, b: &Word) -> bool {
        match self {
            MatchMode::Similar => modified_hamming(a, b).is_similar(),
            MatchMode::Exact => a == b,
        }
    }
}

/// Append-only store; ordinals count insertions from 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingStore {
    version: u64,
    dim: usize,
    entries: Vec<EmbeddingEntry>,
}

/// Euclidean distance accumulated in `f64`.
pub fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self { version: FORMAT_VERSION, dim, entries: Vec::new() }
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[EmbeddingEntry] {
        &self.entries
    }

    fn check(&self, v: &[f32]) -> Result<(), StoreError> {
        if v.len() != self.dim {
            return Err(StoreError::Dimension { expected: self.dim, found: v.len() });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(StoreError::NonFinite);
        }
        Ok(())
    }

    /// Appends an entry and returns its ordinal.
    pub fn add(&mut self, label: Word, vector: Vec<f32>) -> Result<u64, StoreError> {
        self.check(&vector)?;
        let ordinal = self.entries.last().map_or(0, |e| e.ordinal + 1);
        self.entries.push(EmbeddingEntry { label, ordinal, vector });
        Ok(ordinal)
    }

    /// The `min(k, len)` nearest entries by ascending distance, ties by
    /// ascending ordinal.
    pub fn knn(&self, query: &[f32], k: usize) -> Result<Vec<Neighbor>, StoreError> {
        if k == 0 {
            return Err(StoreError::ZeroK);
        }
        if self.entries.is_empty() {
            return Err(StoreError::Empty);
        }
        self.check(query)?;
        let mut scored: Vec<(f64, usize)> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (euclidean(query, &e.vector), i))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(cmp);
        Ok(scored
            .into_iter()
            .map(|(d, i)| Neighbor {
                label: self.entries[i].label.clone(),
                distance: d,
                ordinal: self.entries[i].ordinal,
            })
            .collect())
    }

    /// Fraction of correct labels among the `k` nearest neighbours of every
    /// query. The denominator counts the neighbours actually returned, which
    /// is `k` per query unless the store holds fewer entries.
    pub fn modified_precision(
        &self,
        queries: &[(Vec<f32>, Word)],
        k: usize,
        mode: MatchMode,
    ) -> Result<f64, StoreError> {
        if queries.is_empty() {
            return Err(StoreError::NoQueries);
        }
        let mut correct = 0usize;
        let mut total = 0usize;
        for (v, truth) in queries {
            let nn = self.knn(v, k)?;
            total += nn.len();
            correct += nn.iter().filter(|n| mode.matches(&n.label, truth)).count();
        }
        Ok(correct as f64 / total as f64)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("store serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, StoreError> {
        #[derive(Deserialize)]
        struct Header {
            version: u64,
        }
        let header: Header = serde_json::from_str(text).map_err(|e| StoreError::Format(e.to_string()))?;
        if header.version != FORMAT_VERSION {
            return Err(StoreError::Version(header.version));
        }
        let store: EmbeddingStore = serde_json::from_str(text).map_err(|e| StoreError::Format(e.to_string()))?;
        let mut last = None;
        for e in &store.entries {
            store.check(&e.vector)?;
            if last.is_some_and(|l| e.ordinal <= l) {
                return Err(StoreError::Format(format!("ordinal {} is not increasing", e.ordinal)));
            }
            last = Some(e.ordinal);
        }
        Ok(store)
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        fs::write(path, self.to_json()).map_err(|source| StoreError::Io { path: path.to_path_buf(), source })
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        let text = fs::read_to_string(path).map_err(|source| StoreError::Io { path: path.to_path_buf(), source })?;
        Self::from_json(&text)
    }
}
