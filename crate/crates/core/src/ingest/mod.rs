//! Corpus ingestion: turn raw source text into normalized documents and
//! split those documents into metadata-wrapped chunks.
//!
//! All sizes and spans are measured in Unicode scalar values (`char`s), not
//! bytes. A chunk's `text` is always exactly `body[start..end]` in character
//! coordinates, so chunks can be mapped back onto their source document.
//!
//! Four strategies are provided:
//!
//! - [`chunk_fixed`]: sliding character windows with overlap.
//! - [`chunk_recursive`]: hierarchical separator splitting with greedy merging.
//! - [`chunk_structural`]: one chunk per markdown section or per record.
//! - [`chunk_semantic`]: sentence grouping at low-similarity boundaries.

mod chunk;
mod normalize;
mod record;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

pub use chunk::{
    chunk_document, chunk_fixed, chunk_recursive, chunk_semantic, chunk_semantic_tfidf, chunk_structural,
    semantic_boundaries, split_sentences, wrap_metadata,
};
pub use normalize::{normalize_body, normalize_document};
pub use record::{
    read_chunks_jsonl, read_documents_jsonl, write_chunks_jsonl, write_documents_jsonl, ChunkRecord, DocumentRecord,
};

/// Free-form key/value metadata. Ordered so serialization is deterministic.
pub type Metadata = BTreeMap<String, Value>;

/// Metadata key holding the document title on every chunk.
pub const META_TITLE: &str = "title";
/// Metadata key holding the chunking strategy name on every chunk.
pub const META_STRATEGY: &str = "strategy";
/// Metadata key holding the heading trail (array of strings) for structural chunks.
pub const META_SECTION_PATH: &str = "section_path";
/// Metadata key holding the innermost heading for structural chunks.
pub const META_SECTION: &str = "section";
/// Metadata key used for session tags, both in provenance and on chunks.
pub const META_SESSION: &str = "session";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IngestError {
    #[error("document is empty after normalization")]
    EmptyDocument,
    #[error("chunk {chunk_id} belongs to document {chunk_doc}, not {doc}")]
    WrongDocument {
        chunk_id: String,
        chunk_doc: String,
        doc: String,
    },
    #[error("invalid chunking policy: {0}")]
    InvalidPolicy(String),
    #[error("strategy {strategy:?} does not apply here: {reason}")]
    StrategyMismatch { strategy: ChunkStrategy, reason: String },
    #[error("line {line}: {reason}")]
    BadRecord { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for IngestError {
    fn from(e: std::io::Error) -> Self {
        IngestError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DocumentFormat {
    Plain,
    Markdown,
    StructuredRecord,
}

impl DocumentFormat {
    /// Guess a format from a file extension.
    pub fn from_extension(ext: &str) -> Self {
        match ext.to_ascii_lowercase().as_str() {
            "md" | "markdown" => DocumentFormat::Markdown,
            "jsonl" | "ndjson" => DocumentFormat::StructuredRecord,
            _ => DocumentFormat::Plain,
        }
    }
}

/// A normalized source document. `body` is in canonical whitespace form:
/// no carriage returns, no trailing whitespace on any line, and never more
/// than one blank line in a row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceDocument {
    pub doc_id: String,
    pub title: String,
    pub body: String,
    pub format: DocumentFormat,
    #[serde(default)]
    pub provenance: Metadata,
}

impl SourceDocument {
    /// Body length in characters.
    pub fn char_len(&self) -> usize {
        self.body.chars().count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChunkStrategy {
    FixedSize,
    Recursive,
    DocumentSpecific,
    Semantic,
}

impl ChunkStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            ChunkStrategy::FixedSize => "fixed_size",
            ChunkStrategy::Recursive => "recursive",
            ChunkStrategy::DocumentSpecific => "document_specific",
            ChunkStrategy::Semantic => "semantic",
        }
    }
}

impl std::str::FromStr for ChunkStrategy {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "fixed" | "fixed_size" | "fixedsize" => Ok(ChunkStrategy::FixedSize),
            "recursive" => Ok(ChunkStrategy::Recursive),
            "structural" | "document_specific" | "documentspecific" => Ok(ChunkStrategy::DocumentSpecific),
            "semantic" => Ok(ChunkStrategy::Semantic),
            other => Err(IngestError::InvalidPolicy(format!("unknown strategy {other:?}"))),
        }
    }
}

pub const DEFAULT_TARGET_CHARS: usize = 1000;
pub const DEFAULT_OVERLAP_CHARS: usize = 200;
pub const DEFAULT_BOUNDARY_QUANTILE: f64 = 0.25;
pub const DEFAULT_MIN_CHUNK_CHARS: usize = 100;

/// Coarse-to-fine separators used by recursive chunking by default.
pub fn default_separators() -> Vec<String> {
    vec!["\n\n".to_string(), "\n".to_string(), " ".to_string()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChunkingPolicy {
    pub strategy: ChunkStrategy,
    pub target_chars: usize,
    pub overlap_chars: usize,
    pub separators: Vec<String>,
    pub boundary_similarity_quantile: f64,
    pub min_chunk_chars: usize,
}

impl Default for ChunkingPolicy {
    fn default() -> Self {
        Self {
            strategy: ChunkStrategy::FixedSize,
            target_chars: DEFAULT_TARGET_CHARS,
            overlap_chars: DEFAULT_OVERLAP_CHARS,
            separators: default_separators(),
            boundary_similarity_quantile: DEFAULT_BOUNDARY_QUANTILE,
            min_chunk_chars: DEFAULT_MIN_CHUNK_CHARS,
        }
    }
}

impl ChunkingPolicy {
    pub fn new(strategy: ChunkStrategy) -> Self {
        Self {
            strategy,
            ..Self::default()
        }
    }

    pub fn with_sizes(mut self, target_chars: usize, overlap_chars: usize) -> Self {
        self.target_chars = target_chars;
        self.overlap_chars = overlap_chars;
        self
    }

    pub fn with_min_chunk_chars(mut self, min_chunk_chars: usize) -> Self {
        self.min_chunk_chars = min_chunk_chars;
        self
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.target_chars == 0 {
            return Err(IngestError::InvalidPolicy("target_chars must be positive".into()));
        }
        if self.overlap_chars >= self.target_chars {
            return Err(IngestError::InvalidPolicy(format!(
                "overlap_chars ({}) must be smaller than target_chars ({})",
                self.overlap_chars, self.target_chars
            )));
        }
        if self.min_chunk_chars == 0 || self.min_chunk_chars > self.target_chars {
            return Err(IngestError::InvalidPolicy(format!(
                "min_chunk_chars ({}) must be in 1..=target_chars",
                self.min_chunk_chars
            )));
        }
        if self.strategy == ChunkStrategy::Recursive
            && (self.separators.is_empty() || self.separators.iter().any(String::is_empty))
        {
            return Err(IngestError::InvalidPolicy(
                "recursive chunking needs a non-empty list of non-empty separators".into(),
            ));
        }
        let q = self.boundary_similarity_quantile;
        if !(q > 0.0 && q < 1.0) {
            return Err(IngestError::InvalidPolicy(format!(
                "boundary_similarity_quantile ({q}) must lie in (0, 1)"
            )));
        }
        Ok(())
    }

    /// Window stride for fixed-size chunking.
    pub fn stride(&self) -> usize {
        self.target_chars - self.overlap_chars
    }
}

/// Half-open character interval `[start, end)` into a document body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(end >= start);
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// The retrieval unit: a span of a document plus a metadata wrapper that
/// keeps its context (title, section trail, session) attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub ordinal: usize,
    pub text: String,
    pub span: Span,
    pub metadata: Metadata,
}

impl Chunk {
    /// Heading trail recorded by structural chunking; empty otherwise.
    pub fn section_path(&self) -> Vec<String> {
        match self.metadata.get(META_SECTION_PATH) {
            Some(Value::Array(items)) => items.iter().filter_map(|v| v.as_str().map(str::to_string)).collect(),
            _ => Vec::new(),
        }
    }

    pub fn chunk_id_for(doc_id: &str, ordinal: usize) -> String {
        format!("{doc_id}#{ordinal}")
    }
}
