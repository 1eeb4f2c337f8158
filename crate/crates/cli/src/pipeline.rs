//! Building blocks shared by the subcommands and the HTTP service.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use coached_core::agent::PromptTemplates;
use coached_core::ingest::{
    chunk_document, normalize_document, read_chunks_jsonl, read_documents_jsonl, write_chunks_jsonl,
    write_documents_jsonl, Chunk, DocumentFormat, Metadata, SourceDocument,
};
use coached_core::llm::{ChatBackend, HttpBackend, HttpConfig, ScriptedBackend};
use coached_core::retrieval::{build_index, load_index, save_index, Retriever, TfIdfModel};
use serde::Serialize;

use crate::config::AppConfig;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusSummary {
    pub documents: usize,
    pub chunks: usize,
    pub mean_chunk_chars: f64,
}

impl CorpusSummary {
    pub fn of(docs: &[SourceDocument], chunks: &[Chunk]) -> Self {
        let total: usize = chunks.iter().map(|c| c.span.len()).sum();
        Self {
            documents: docs.len(),
            chunks: chunks.len(),
            mean_chunk_chars: if chunks.is_empty() {
                0.0
            } else {
                total as f64 / chunks.len() as f64
            },
        }
    }
}

/// Read one input file into normalized documents. Markdown and plain files
/// become one document whose id is the file stem; `.jsonl` files hold one
/// document record per line.
pub fn read_input(path: &Path) -> Result<Vec<SourceDocument>, CliError> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let format = DocumentFormat::from_extension(ext);
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", path.display()));
    if format == DocumentFormat::StructuredRecord {
        let reader = BufReader::new(File::open(path).map_err(io)?);
        return read_documents_jsonl(reader).map_err(|e| CliError::Input(format!("{}: {e}", path.display())));
    }
    let raw = std::fs::read_to_string(path).map_err(io)?;
    let mut provenance = Metadata::new();
    if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
        provenance.insert("doc_id".into(), stem.into());
    }
    provenance.insert("source_path".into(), path.display().to_string().into());
    let doc = normalize_document(&raw, format, provenance)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(vec![doc])
}

pub struct IngestOutcome {
    pub documents: Vec<SourceDocument>,
    pub chunks: Vec<Chunk>,
    /// One entry per input that could not be read or chunked.
    pub errors: Vec<(PathBuf, CliError)>,
}

/// Normalize and chunk `inputs`. A failing file is recorded and skipped.
pub fn ingest_files(config: &AppConfig, inputs: &[PathBuf]) -> IngestOutcome {
    let mut documents: Vec<SourceDocument> = Vec::new();
    let mut chunks = Vec::new();
    let mut errors = Vec::new();
    for path in inputs {
        let result = read_input(path).and_then(|docs| {
            let mut out = Vec::new();
            for doc in &docs {
                if documents.iter().any(|d| d.doc_id == doc.doc_id) {
                    return Err(CliError::Input(format!(
                        "{}: duplicate doc_id {:?}",
                        path.display(),
                        doc.doc_id
                    )));
                }
                let cs = chunk_document(doc, &config.chunking)
                    .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
                out.extend(cs);
            }
            Ok((docs, out))
        });
        match result {
            Ok((docs, cs)) => {
                documents.extend(docs);
                chunks.extend(cs);
            }
            Err(e) => errors.push((path.clone(), e)),
        }
    }
    IngestOutcome {
        documents,
        chunks,
        errors,
    }
}

pub fn write_corpus(config: &AppConfig, docs: &[SourceDocument], chunks: &[Chunk]) -> Result<(), CliError> {
    for path in [&config.corpus.documents, &config.corpus.chunks] {
        ensure_parent(path)?;
    }
    write_documents_jsonl(&config.corpus.documents, docs).map_err(|e| CliError::Io(e.to_string()))?;
    write_chunks_jsonl(&config.corpus.chunks, chunks).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(())
}

pub fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IndexSummary {
    pub entries: usize,
    pub dim: usize,
    pub embedder: String,
}

/// Fit TF-IDF on `chunks`, build the index and write both files.
pub fn build_and_save_index(config: &AppConfig, chunks: &[Chunk]) -> Result<(Retriever, IndexSummary), CliError> {
    let model = Arc::new(TfIdfModel::fit(chunks)?);
    let index = build_index(chunks, model.as_ref())?;
    ensure_parent(&config.retrieval.index)?;
    save_index(&index, &config.retrieval.index)?;
    model.save(&config.retrieval.model_path())?;
    let summary = IndexSummary {
        entries: index.len(),
        dim: index.dim,
        embedder: index.embedder_tag.clone(),
    };
    Ok((Retriever::new(index, model)?, summary))
}

/// Index the chunk file named in the config.
pub fn index_corpus(config: &AppConfig) -> Result<(Retriever, IndexSummary), CliError> {
    let chunks = read_chunks_jsonl(&config.corpus.chunks).map_err(|e| CliError::Input(e.to_string()))?;
    build_and_save_index(config, &chunks)
}

pub fn load_retriever(config: &AppConfig) -> Result<Retriever, CliError> {
    let at = |p: &Path, e: coached_core::retrieval::RetrievalError| CliError::Input(format!("{}: {e}", p.display()));
    let index = load_index(&config.retrieval.index).map_err(|e| at(&config.retrieval.index, e))?;
    let model_path = config.retrieval.model_path();
    let model = TfIdfModel::load(&model_path).map_err(|e| at(&model_path, e))?;
    Ok(Retriever::new(index, Arc::new(model))?)
}

pub fn load_templates(config: &AppConfig) -> Result<PromptTemplates, CliError> {
    let templates = match &config.templates.path {
        Some(p) => PromptTemplates::load(p)?,
        None => PromptTemplates::default(),
    };
    templates.validate()?;
    Ok(templates)
}

/// The chat backend named in the config. Must be called outside any async
/// runtime: the HTTP backend owns a blocking client.
pub fn build_backend(config: &AppConfig) -> Result<Arc<dyn ChatBackend>, CliError> {
    let b = &config.backend;
    match (&b.base_url, &b.scripted_spec_path) {
        (Some(_), Some(_)) => Err(CliError::Config(
            "backend.base_url and backend.scripted_spec_path are mutually exclusive".into(),
        )),
        (None, Some(path)) => Ok(Arc::new(ScriptedBackend::from_file(path)?)),
        (Some(url), None) => {
            let mut http = HttpConfig::new(url.clone());
            http.api_key = b.api_key.clone();
            http.retry_max = b.retry_max;
            http.timeout = Duration::from_secs(b.timeout_secs);
            http.max_in_flight = b.max_in_flight;
            Ok(Arc::new(HttpBackend::connect(http)?))
        }
        (None, None) => Err(CliError::Config(
            "no backend configured: set backend.base_url or backend.scripted_spec_path".into(),
        )),
    }
}
