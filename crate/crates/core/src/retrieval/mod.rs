//! Vectorization and exact cosine search over chunks.
//!
//! The built-in embedder is a smoothed TF-IDF model ([`TfIdfModel`]); any
//! other [`Embedder`] (for example a remote embeddings endpoint) can back a
//! [`VectorIndex`] instead. Search is an exact scan, ordered by score
//! descending and then by chunk id ascending.

mod index;
mod tfidf;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use index::{
    build_index, load_index, save_index, search, search_filtered, search_vector, IndexEntry, RetrievalHit, VectorIndex,
    INDEX_FORMAT_VERSION,
};
pub use tfidf::{tokenize, TfIdfModel, TOKENIZER_CONFIG};

/// Hits scoring below this are treated as "no relevant context".
pub const DEFAULT_MIN_SCORE: f64 = 0.05;

const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("corpus has no tokens to fit")]
    EmptyCorpus,
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("index build failed at chunk {chunk_id}: {reason}")]
    BuildFailed { chunk_id: String, reason: String },
    #[error("index was built with embedder {index_tag}, query embedder is {query_tag}")]
    StaleIndex { index_tag: String, query_tag: String },
    #[error("unsupported index version {0}")]
    UnsupportedVersion(u64),
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
    #[error("embedding failed: {0}")]
    Embed(String),
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for RetrievalError {
    fn from(e: std::io::Error) -> Self {
        RetrievalError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub dim: usize,
    pub normalized: bool,
}

impl EmbeddingVector {
    pub fn raw(values: Vec<f64>) -> Self {
        Self {
            dim: values.len(),
            values,
            normalized: false,
        }
    }

    /// L2-normalize `values`. The zero vector stays zero and is still flagged
    /// as normalized.
    pub fn normalized(mut values: Vec<f64>) -> Self {
        let norm = l2_norm(&values);
        if norm > 0.0 {
            for v in &mut values {
                *v /= norm;
            }
        }
        Self {
            dim: values.len(),
            values,
            normalized: true,
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: vec![0.0; dim],
            dim,
            normalized: true,
        }
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.values)
    }

    /// Whether the stored flag agrees with the actual norm.
    pub fn is_consistent(&self) -> bool {
        if self.values.len() != self.dim {
            return false;
        }
        if !self.normalized {
            return true;
        }
        let n = self.norm();
        n == 0.0 || (n - 1.0).abs() <= NORM_TOLERANCE
    }
}

fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Cosine similarity of two equal-length slices; 0 when either norm is 0.
pub fn cosine_dense(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0)
}

pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, RetrievalError> {
    if a.dim != b.dim || a.values.len() != b.values.len() {
        return Err(RetrievalError::DimMismatch {
            left: a.dim,
            right: b.dim,
        });
    }
    Ok(cosine_dense(&a.values, &b.values))
}

/// Anything that maps text to a vector. `tag` identifies the model so an
/// index cannot be queried with a different one.
pub trait Embedder: Send + Sync {
    fn tag(&self) -> String;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, RetrievalError>;
}

impl<E: Embedder + ?Sized> Embedder for Arc<E> {
    fn tag(&self) -> String {
        (**self).tag()
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        (**self).embed(text)
    }
}

/// An index paired with the embedder that built it.
pub struct Retriever {
    pub index: VectorIndex,
    pub embedder: Arc<dyn Embedder>,
}

impl Retriever {
    pub fn new(index: VectorIndex, embedder: Arc<dyn Embedder>) -> Result<Self, RetrievalError> {
        let query_tag = embedder.tag();
        if query_tag != index.embedder_tag {
            return Err(RetrievalError::StaleIndex {
                index_tag: index.embedder_tag.clone(),
                query_tag,
            });
        }
        Ok(Self { index, embedder })
    }

    pub fn search(&self, query: &str, k: usize, min_score: f64) -> Result<Vec<RetrievalHit>, RetrievalError> {
        search(&self.index, self.embedder.as_ref(), query, k, min_score)
    }

    /// Search restricted to entries whose metadata `session` equals `tag`.
    pub fn search_session(
        &self,
        query: &str,
        k: usize,
        min_score: f64,
        session: Option<&str>,
    ) -> Result<Vec<RetrievalHit>, RetrievalError> {
        match session {
            None => self.search(query, k, min_score),
            Some(tag) => search_filtered(&self.index, self.embedder.as_ref(), query, k, min_score, |e| {
                e.metadata
                    .get(crate::ingest::META_SESSION)
                    .is_some_and(|v| v.as_str() == Some(tag) || tag.parse::<serde_json::Value>().is_ok_and(|t| t == *v))
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_similarity_is_one() {
        let v = EmbeddingVector::raw(vec![0.3, -1.2, 4.0]);
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_is_zero() {
        let a = EmbeddingVector::raw(vec![1.0, 0.0, 0.0]);
        let b = EmbeddingVector::raw(vec![0.0, 1.0, 0.0]);
        assert_eq!(cosine(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn diagonal_against_axis() {
        let a = EmbeddingVector::raw(vec![1.0, 1.0]);
        let b = EmbeddingVector::raw(vec![1.0, 0.0]);
        assert!((cosine(&a, &b).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_scores_zero() {
        let a = EmbeddingVector::zeros(2);
        let b = EmbeddingVector::raw(vec![1.0, 0.0]);
        assert_eq!(cosine(&a, &b).unwrap(), 0.0);
        assert!(a.is_consistent());
    }

    #[test]
    fn dimension_mismatch() {
        let a = EmbeddingVector::raw(vec![1.0]);
        let b = EmbeddingVector::raw(vec![1.0, 0.0]);
        assert_eq!(cosine(&a, &b), Err(RetrievalError::DimMismatch { left: 1, right: 2 }));
    }

    proptest::proptest! {
        #[test]
        fn cosine_is_symmetric(pairs in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..32)) {
            let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let a = EmbeddingVector::raw(a);
            let b = EmbeddingVector::raw(b);
            let ab = cosine(&a, &b).unwrap();
            let ba = cosine(&b, &a).unwrap();
            proptest::prop_assert!((ab - ba).abs() <= 1e-12);
            proptest::prop_assert!((-1.0..=1.0).contains(&ab));
        }

        #[test]
        fn normalized_vectors_have_unit_norm(values in proptest::collection::vec(-1e6f64..1e6, 1..64)) {
            let v = EmbeddingVector::normalized(values);
            proptest::prop_assert!(v.is_consistent());
        }
    }
}
