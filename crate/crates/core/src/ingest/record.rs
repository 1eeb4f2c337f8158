//! Line-delimited JSON shapes for documents and chunks.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{normalize_document, Chunk, DocumentFormat, IngestError, Metadata, SourceDocument, Span};

/// One line of a structured-record file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub title: String,
    pub body: String,
    pub format: DocumentFormat,
    #[serde(default)]
    pub metadata: Metadata,
}

impl DocumentRecord {
    /// Normalize the record body into a document with the record's id and title.
    pub fn into_document(self) -> Result<SourceDocument, IngestError> {
        let mut provenance = self.metadata;
        provenance.insert("doc_id".into(), Value::String(self.doc_id));
        provenance.insert("title".into(), Value::String(self.title));
        normalize_document(&self.body, self.format, provenance)
    }
}

impl From<&SourceDocument> for DocumentRecord {
    fn from(doc: &SourceDocument) -> Self {
        Self {
            doc_id: doc.doc_id.clone(),
            title: doc.title.clone(),
            body: doc.body.clone(),
            format: doc.format,
            metadata: doc.provenance.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkRecord {
    pub chunk_id: String,
    pub doc_id: String,
    pub ordinal: usize,
    pub text: String,
    pub start: usize,
    pub end: usize,
    #[serde(default)]
    pub metadata: Metadata,
}

impl From<&Chunk> for ChunkRecord {
    fn from(c: &Chunk) -> Self {
        Self {
            chunk_id: c.chunk_id.clone(),
            doc_id: c.doc_id.clone(),
            ordinal: c.ordinal,
            text: c.text.clone(),
            start: c.span.start,
            end: c.span.end,
            metadata: c.metadata.clone(),
        }
    }
}

impl From<ChunkRecord> for Chunk {
    fn from(r: ChunkRecord) -> Self {
        Self {
            chunk_id: r.chunk_id,
            doc_id: r.doc_id,
            ordinal: r.ordinal,
            text: r.text,
            span: Span::new(r.start, r.end),
            metadata: r.metadata,
        }
    }
}

/// Parse a structured-record file into normalized documents. Blank lines are
/// skipped; duplicate `doc_id`s are an error.
pub fn read_documents_jsonl<R: BufRead>(reader: R) -> Result<Vec<SourceDocument>, IngestError> {
    let mut docs: Vec<SourceDocument> = Vec::new();
    let mut ids = std::collections::HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |reason: String| IngestError::BadRecord { line: i + 1, reason };
        let record: DocumentRecord = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let doc = record.into_document().map_err(|e| bad(e.to_string()))?;
        if !ids.insert(doc.doc_id.clone()) {
            return Err(bad(format!("duplicate doc_id {:?}", doc.doc_id)));
        }
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_documents_jsonl(path: &Path, docs: &[SourceDocument]) -> Result<(), IngestError> {
    write_lines(path, docs.iter().map(DocumentRecord::from))
}

pub fn write_chunks_jsonl(path: &Path, chunks: &[Chunk]) -> Result<(), IngestError> {
    write_lines(path, chunks.iter().map(ChunkRecord::from))
}

pub fn read_chunks_jsonl(path: &Path) -> Result<Vec<Chunk>, IngestError> {
    let file = std::fs::File::open(path).map_err(|e| IngestError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: ChunkRecord = serde_json::from_str(&line).map_err(|e| IngestError::BadRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.push(record.into());
    }
    Ok(out)
}

fn write_lines<T: Serialize>(path: &Path, items: impl Iterator<Item = T>) -> Result<(), IngestError> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, &item).map_err(|e| IngestError::Io(e.to_string()))?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| IngestError::Io(format!("{}: {e}", path.display())))?;
    f.write_all(&buf)?;
    Ok(())
}
