use std::cmp::Ordering;
use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{cosine_dense, Embedder, EmbeddingVector, RetrievalError};
use crate::ingest::{Chunk, Metadata};

pub const INDEX_FORMAT_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub chunk_id: String,
    pub vector: EmbeddingVector,
    pub metadata: Metadata,
    pub text: String,
}

/// Exact in-memory vector store. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    pub version: u64,
    pub embedder_tag: String,
    pub dim: usize,
    pub entries: Vec<IndexEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalHit {
    pub chunk_id: String,
    pub score: f64,
    pub text: String,
    pub metadata: Metadata,
}

impl VectorIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

pub fn build_index(chunks: &[Chunk], embedder: &dyn Embedder) -> Result<VectorIndex, RetrievalError> {
    if chunks.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(chunks.len());
    let mut dim = None;
    for chunk in chunks {
        let fail = |reason: String| RetrievalError::BuildFailed {
            chunk_id: chunk.chunk_id.clone(),
            reason,
        };
        if !seen.insert(chunk.chunk_id.as_str()) {
            return Err(fail("duplicate chunk_id".into()));
        }
        let vector = embedder.embed(&chunk.text).map_err(|e| fail(e.to_string()))?;
        match dim {
            None => dim = Some(vector.dim),
            Some(d) if d != vector.dim => return Err(fail(format!("embedding dim {} differs from {d}", vector.dim))),
            Some(_) => {}
        }
        entries.push(IndexEntry {
            chunk_id: chunk.chunk_id.clone(),
            vector,
            metadata: chunk.metadata.clone(),
            text: chunk.text.clone(),
        });
    }
    Ok(VectorIndex {
        version: INDEX_FORMAT_VERSION,
        embedder_tag: embedder.tag(),
        dim: dim.unwrap_or(0),
        entries,
    })
}

pub fn search(
    index: &VectorIndex,
    embedder: &dyn Embedder,
    query: &str,
    k: usize,
    min_score: f64,
) -> Result<Vec<RetrievalHit>, RetrievalError> {
    search_filtered(index, embedder, query, k, min_score, |_| true)
}

/// [`search`] restricted to entries accepted by `keep`.
pub fn search_filtered<F>(
    index: &VectorIndex,
    embedder: &dyn Embedder,
    query: &str,
    k: usize,
    min_score: f64,
    keep: F,
) -> Result<Vec<RetrievalHit>, RetrievalError>
where
    F: Fn(&IndexEntry) -> bool,
{
    let query_tag = embedder.tag();
    if query_tag != index.embedder_tag {
        return Err(RetrievalError::StaleIndex {
            index_tag: index.embedder_tag.clone(),
            query_tag,
        });
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    let vector = embedder.embed(query)?;
    rank(index, &vector, k, min_score, keep)
}

/// Exact top-k by cosine against a pre-computed query vector.
pub fn search_vector(
    index: &VectorIndex,
    query: &EmbeddingVector,
    k: usize,
    min_score: f64,
) -> Result<Vec<RetrievalHit>, RetrievalError> {
    rank(index, query, k, min_score, |_| true)
}

fn rank<F>(
    index: &VectorIndex,
    query: &EmbeddingVector,
    k: usize,
    min_score: f64,
    keep: F,
) -> Result<Vec<RetrievalHit>, RetrievalError>
where
    F: Fn(&IndexEntry) -> bool,
{
    if k == 0 || index.is_empty() {
        return Ok(Vec::new());
    }
    if query.dim != index.dim {
        return Err(RetrievalError::DimMismatch {
            left: query.dim,
            right: index.dim,
        });
    }
    let mut scored: Vec<(f64, &IndexEntry)> = index
        .entries
        .iter()
        .filter(|e| keep(e))
        .map(|e| (cosine_dense(&query.values, &e.vector.values), e))
        .filter(|(s, _)| *s >= min_score)
        .collect();
    let order = |a: &(f64, &IndexEntry), b: &(f64, &IndexEntry)| -> Ordering {
        b.0.total_cmp(&a.0).then_with(|| a.1.chunk_id.cmp(&b.1.chunk_id))
    };
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, order);
        scored.truncate(k);
    }
    scored.sort_by(order);
    Ok(scored
        .into_iter()
        .map(|(score, e)| RetrievalHit {
            chunk_id: e.chunk_id.clone(),
            score,
            text: e.text.clone(),
            metadata: e.metadata.clone(),
        })
        .collect())
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u64,
    embedder_tag: String,
    dim: usize,
    entries: usize,
}

/// Write the index as a header line followed by one JSON line per entry.
/// Floats are written in shortest round-trip form, so a reload is bit-exact.
pub fn save_index(index: &VectorIndex, path: &Path) -> Result<(), RetrievalError> {
    let ser = |e: serde_json::Error| RetrievalError::Io(e.to_string());
    let mut buf = Vec::new();
    let header = Header {
        version: index.version,
        embedder_tag: index.embedder_tag.clone(),
        dim: index.dim,
        entries: index.entries.len(),
    };
    serde_json::to_writer(&mut buf, &header).map_err(ser)?;
    buf.push(b'\n');
    for entry in &index.entries {
        serde_json::to_writer(&mut buf, entry).map_err(ser)?;
        buf.push(b'\n');
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<VectorIndex, RetrievalError> {
    let raw = std::fs::read_to_string(path)?;
    let corrupt = |msg: String| RetrievalError::CorruptIndex(format!("{}: {msg}", path.display()));
    if !raw.ends_with('\n') {
        return Err(corrupt("missing final newline (truncated?)".into()));
    }
    let mut lines = raw.lines();
    let header_line = lines.next().ok_or_else(|| corrupt("empty file".into()))?;
    let header_value: Value = serde_json::from_str(header_line).map_err(|e| corrupt(format!("header: {e}")))?;
    match header_value.get("version").and_then(Value::as_u64) {
        Some(INDEX_FORMAT_VERSION) => {}
        Some(v) => return Err(RetrievalError::UnsupportedVersion(v)),
        None => return Err(corrupt("header has no version".into())),
    }
    let header: Header = serde_json::from_value(header_value).map_err(|e| corrupt(format!("header: {e}")))?;

    let mut entries = Vec::with_capacity(header.entries);
    for (i, line) in lines.enumerate() {
        let entry: IndexEntry = serde_json::from_str(line).map_err(|e| corrupt(format!("entry {i}: {e}")))?;
        if entry.vector.dim != header.dim || entry.vector.values.len() != header.dim {
            return Err(corrupt(format!("entry {i}: vector dim does not match header")));
        }
        entries.push(entry);
    }
    if entries.len() != header.entries {
        return Err(corrupt(format!(
            "header promises {} entries, found {}",
            header.entries,
            entries.len()
        )));
    }
    Ok(VectorIndex {
        version: header.version,
        embedder_tag: header.embedder_tag,
        dim: header.dim,
        entries,
    })
}
