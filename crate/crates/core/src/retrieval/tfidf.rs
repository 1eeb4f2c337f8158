use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Embedder, EmbeddingVector, RetrievalError};
use crate::ingest::Chunk;

/// Marker stored with every model so a reader knows how text was tokenized.
pub const TOKENIZER_CONFIG: &str = "lowercase+unicode-alphanumeric-words";

/// Lowercased runs of Unicode alphanumeric characters. No stop words, no stemming.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Smoothed TF-IDF: `idf(t) = ln((1 + N) / (1 + df(t))) + 1`. Vectors use raw
/// term counts times idf and are L2-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfIdfModel {
    /// Term to dense column index, assigned in lexicographic term order.
    pub vocabulary: BTreeMap<String, usize>,
    pub idf: Vec<f64>,
    pub corpus_size: usize,
    pub tokenizer_config: String,
}

impl TfIdfModel {
    pub fn fit(chunks: &[Chunk]) -> Result<Self, RetrievalError> {
        Self::fit_texts(chunks.iter().map(|c| c.text.as_str()))
    }

    pub fn fit_texts<'a, I>(texts: I) -> Result<Self, RetrievalError>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut n = 0usize;
        for text in texts {
            n += 1;
            let distinct: BTreeSet<String> = tokenize(text).into_iter().collect();
            for term in distinct {
                *df.entry(term).or_default() += 1;
            }
        }
        if df.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let corpus = n as f64;
        let mut vocabulary = BTreeMap::new();
        let mut idf = Vec::with_capacity(df.len());
        for (i, (term, count)) in df.into_iter().enumerate() {
            idf.push(((1.0 + corpus) / (1.0 + count as f64)).ln() + 1.0);
            vocabulary.insert(term, i);
        }
        Ok(Self {
            vocabulary,
            idf,
            corpus_size: n,
            tokenizer_config: TOKENIZER_CONFIG.to_string(),
        })
    }

    pub fn dim(&self) -> usize {
        self.idf.len()
    }

    pub fn idf_of(&self, term: &str) -> Option<f64> {
        self.vocabulary.get(term).map(|&i| self.idf[i])
    }

    /// Raw count × idf per in-vocabulary token, L2-normalized. Text with no
    /// known token maps to the zero vector.
    pub fn embed_text(&self, text: &str) -> EmbeddingVector {
        let mut values = vec![0.0; self.dim()];
        for token in tokenize(text) {
            if let Some(&i) = self.vocabulary.get(&token) {
                values[i] += 1.0;
            }
        }
        for (v, w) in values.iter_mut().zip(&self.idf) {
            *v *= w;
        }
        EmbeddingVector::normalized(values)
    }

    /// Copy of the model with every idf weight multiplied by `factor`.
    pub fn with_scaled_idf(&self, factor: f64) -> Self {
        Self {
            idf: self.idf.iter().map(|w| w * factor).collect(),
            ..self.clone()
        }
    }

    /// Content hash of vocabulary and idf bits.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(self.tokenizer_config.as_bytes());
        hasher.update((self.corpus_size as u64).to_le_bytes());
        for (term, &i) in &self.vocabulary {
            hasher.update((term.len() as u64).to_le_bytes());
            hasher.update(term.as_bytes());
            hasher.update((i as u64).to_le_bytes());
        }
        for w in &self.idf {
            hasher.update(w.to_bits().to_le_bytes());
        }
        hex::encode(&hasher.finalize()[..8])
    }

    pub fn save(&self, path: &Path) -> Result<(), RetrievalError> {
        let json = serde_json::to_string(self).map_err(|e| RetrievalError::Io(e.to_string()))?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RetrievalError> {
        let raw = std::fs::read_to_string(path)?;
        let model: Self =
            serde_json::from_str(&raw).map_err(|e| RetrievalError::CorruptIndex(format!("{}: {e}", path.display())))?;
        let dense = model.vocabulary.values().copied().collect::<BTreeSet<_>>();
        if model.vocabulary.len() != model.idf.len() || dense.iter().copied().ne(0..model.idf.len()) {
            return Err(RetrievalError::CorruptIndex(format!(
                "{}: vocabulary indices are not dense",
                path.display()
            )));
        }
        Ok(model)
    }
}

impl Embedder for TfIdfModel {
    fn tag(&self) -> String {
        format!("tfidf:{}", self.fingerprint())
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, RetrievalError> {
        Ok(self.embed_text(text))
    }
}
