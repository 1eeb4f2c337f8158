use serde_json::Value;

use super::{
    default_separators, Chunk, ChunkStrategy, ChunkingPolicy, DocumentFormat, IngestError, Metadata, SourceDocument,
    Span, META_SECTION, META_SECTION_PATH, META_STRATEGY, META_TITLE,
};
use crate::retrieval::{cosine_dense, TfIdfModel};

/// Character-indexed view over a string slice.
struct CharText<'a> {
    text: &'a str,
    /// Byte offset of every char, plus a final entry equal to `text.len()`.
    offsets: Vec<usize>,
}

impl<'a> CharText<'a> {
    fn new(text: &'a str) -> Self {
        let mut offsets: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        offsets.push(text.len());
        Self { text, offsets }
    }

    fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    fn slice(&self, span: Span) -> &'a str {
        &self.text[self.offsets[span.start]..self.offsets[span.end]]
    }

    fn char_index_of_byte(&self, byte: usize) -> usize {
        self.offsets
            .binary_search(&byte)
            .expect("byte offset on a char boundary")
    }
}

/// Split `doc` according to `policy.strategy`. Semantic chunking uses a
/// TF-IDF model fitted on the document's own sentences.
pub fn chunk_document(doc: &SourceDocument, policy: &ChunkingPolicy) -> Result<Vec<Chunk>, IngestError> {
    match policy.strategy {
        ChunkStrategy::FixedSize => chunk_fixed(doc, policy),
        ChunkStrategy::Recursive => chunk_recursive(doc, policy),
        ChunkStrategy::DocumentSpecific => chunk_structural(doc, policy),
        ChunkStrategy::Semantic => chunk_semantic_tfidf(doc, policy),
    }
}

fn expect_strategy(policy: &ChunkingPolicy, want: ChunkStrategy) -> Result<(), IngestError> {
    policy.validate()?;
    if policy.strategy != want {
        return Err(IngestError::StrategyMismatch {
            strategy: policy.strategy,
            reason: format!("expected {}", want.as_str()),
        });
    }
    Ok(())
}

/// Sliding windows of `target_chars` with stride `target_chars - overlap_chars`.
pub fn chunk_fixed(doc: &SourceDocument, policy: &ChunkingPolicy) -> Result<Vec<Chunk>, IngestError> {
    expect_strategy(policy, ChunkStrategy::FixedSize)?;
    let text = CharText::new(&doc.body);
    let spans = if text.len() < policy.min_chunk_chars {
        vec![Span::new(0, text.len())]
    } else {
        windows(Span::new(0, text.len()), policy.target_chars, policy.stride())
    };
    let pieces = spans.into_iter().map(|s| (s, Metadata::new())).collect();
    assemble(doc, &text, pieces, ChunkStrategy::FixedSize)
}

fn windows(range: Span, width: usize, stride: usize) -> Vec<Span> {
    let mut out = Vec::new();
    let mut start = range.start;
    loop {
        let end = (start + width).min(range.end);
        out.push(Span::new(start, end));
        if end == range.end {
            break;
        }
        start += stride;
    }
    out
}

#[derive(Debug, Clone, Copy)]
enum Atom {
    /// A separator-delimited piece; adjacent pieces may be merged.
    Piece(Span),
    /// A fixed-size fallback window; always emitted on its own.
    Window(Span),
}

/// Hierarchical separator splitting with greedy forward merging.
///
/// Separators keep their position at the end of the preceding piece, so the
/// resulting chunks tile the body exactly. Overlap only arises where a run
/// without any separator had to fall back to fixed windows.
pub fn chunk_recursive(doc: &SourceDocument, policy: &ChunkingPolicy) -> Result<Vec<Chunk>, IngestError> {
    expect_strategy(policy, ChunkStrategy::Recursive)?;
    let text = CharText::new(&doc.body);
    let spans = if text.len() < policy.min_chunk_chars {
        vec![Span::new(0, text.len())]
    } else {
        recursive_spans(&text, Span::new(0, text.len()), policy, &policy.separators)
    };
    let pieces = spans.into_iter().map(|s| (s, Metadata::new())).collect();
    assemble(doc, &text, pieces, ChunkStrategy::Recursive)
}

fn recursive_spans(text: &CharText<'_>, range: Span, policy: &ChunkingPolicy, separators: &[String]) -> Vec<Span> {
    let mut atoms = Vec::new();
    split_atoms(text, range, separators, 0, policy, &mut atoms);
    merge_atoms(&atoms, policy.target_chars)
}

fn split_atoms(
    text: &CharText<'_>,
    range: Span,
    separators: &[String],
    level: usize,
    policy: &ChunkingPolicy,
    out: &mut Vec<Atom>,
) {
    if range.len() <= policy.target_chars {
        out.push(Atom::Piece(range));
        return;
    }
    let Some(sep) = separators.get(level) else {
        out.extend(
            windows(range, policy.target_chars, policy.stride())
                .into_iter()
                .map(Atom::Window),
        );
        return;
    };
    let pieces = split_keep_separator(text, range, sep);
    if pieces.len() <= 1 {
        split_atoms(text, range, separators, level + 1, policy, out);
        return;
    }
    for piece in pieces {
        if piece.len() <= policy.target_chars {
            out.push(Atom::Piece(piece));
        } else {
            split_atoms(text, piece, separators, level + 1, policy, out);
        }
    }
}

fn split_keep_separator(text: &CharText<'_>, range: Span, sep: &str) -> Vec<Span> {
    let base_byte = text.offsets[range.start];
    let slice = text.slice(range);
    let mut pieces = Vec::new();
    let mut start = range.start;
    for (byte, m) in slice.match_indices(sep) {
        let end = text.char_index_of_byte(base_byte + byte + m.len());
        if end > start {
            pieces.push(Span::new(start, end));
            start = end;
        }
    }
    if start < range.end {
        pieces.push(Span::new(start, range.end));
    }
    pieces
}

fn merge_atoms(atoms: &[Atom], target: usize) -> Vec<Span> {
    let mut out = Vec::new();
    let mut current: Option<Span> = None;
    for atom in atoms {
        match *atom {
            Atom::Piece(p) => match current {
                Some(c) if c.len() + p.len() <= target => current = Some(Span::new(c.start, p.end)),
                Some(c) => {
                    out.push(c);
                    current = Some(p);
                }
                None => current = Some(p),
            },
            Atom::Window(w) => {
                if let Some(c) = current.take() {
                    out.push(c);
                }
                out.push(w);
            }
        }
    }
    if let Some(c) = current {
        out.push(c);
    }
    out
}

/// One chunk per markdown section (`#`, `##`, `###`) or per blank-line
/// delimited record. Oversized sections are sub-split recursively and keep
/// their heading trail in `section_path`.
pub fn chunk_structural(doc: &SourceDocument, policy: &ChunkingPolicy) -> Result<Vec<Chunk>, IngestError> {
    expect_strategy(policy, ChunkStrategy::DocumentSpecific)?;
    let text = CharText::new(&doc.body);
    let sections = match doc.format {
        DocumentFormat::Markdown => markdown_sections(&text),
        DocumentFormat::StructuredRecord => record_sections(&text),
        DocumentFormat::Plain => vec![(Span::new(0, text.len()), Vec::new())],
    };

    if text.len() < policy.min_chunk_chars {
        let path = sections.first().map(|(_, p)| p.clone()).unwrap_or_default();
        let pieces = vec![(Span::new(0, text.len()), section_metadata(&path))];
        return assemble(doc, &text, pieces, ChunkStrategy::DocumentSpecific);
    }

    let separators = if policy.separators.is_empty() {
        default_separators()
    } else {
        policy.separators.clone()
    };
    let mut pieces = Vec::new();
    for (span, path) in sections {
        let meta = section_metadata(&path);
        if span.len() > policy.target_chars {
            for sub in recursive_spans(&text, span, policy, &separators) {
                pieces.push((sub, meta.clone()));
            }
        } else {
            pieces.push((span, meta));
        }
    }
    assemble(doc, &text, pieces, ChunkStrategy::DocumentSpecific)
}

fn section_metadata(path: &[String]) -> Metadata {
    let mut meta = Metadata::new();
    if let Some(last) = path.last() {
        meta.insert(
            META_SECTION_PATH.into(),
            Value::Array(path.iter().cloned().map(Value::String).collect()),
        );
        meta.insert(META_SECTION.into(), Value::String(last.clone()));
    }
    meta
}

/// Heading level and title for lines like `## Title`; levels above 3 are body text.
fn heading(line: &str) -> Option<(usize, &str)> {
    let level = line.chars().take_while(|&c| c == '#').count();
    if !(1..=3).contains(&level) {
        return None;
    }
    let rest = &line[level..];
    if !rest.starts_with(' ') {
        return None;
    }
    let title = rest.trim();
    (!title.is_empty()).then_some((level, title))
}

fn markdown_sections(text: &CharText<'_>) -> Vec<(Span, Vec<String>)> {
    let mut sections: Vec<(Span, Vec<String>)> = Vec::new();
    let mut stack: Vec<(usize, String)> = Vec::new();
    let mut current_start = 0usize;
    let mut current_path: Vec<String> = Vec::new();
    let mut line_start = 0usize;

    for line in text.text.split('\n') {
        let line_len = line.chars().count();
        if let Some((level, title)) = heading(line) {
            if line_start > current_start {
                sections.push((Span::new(current_start, line_start), current_path.clone()));
            }
            while stack.last().is_some_and(|(l, _)| *l >= level) {
                stack.pop();
            }
            stack.push((level, title.to_string()));
            current_path = stack.iter().map(|(_, t)| t.clone()).collect();
            current_start = line_start;
        }
        line_start += line_len + 1;
    }
    let end = text.len();
    if end > current_start {
        sections.push((Span::new(current_start, end), current_path));
    }
    sections
}

fn record_sections(text: &CharText<'_>) -> Vec<(Span, Vec<String>)> {
    split_keep_separator(text, Span::new(0, text.len()), "\n\n")
        .into_iter()
        .map(|s| (s, Vec::new()))
        .collect()
}

/// Sentence spans: a sentence ends after a `.`, `?` or `!` that is followed
/// by whitespace, and owns that trailing whitespace.
pub fn split_sentences(text: &str) -> Vec<Span> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        if matches!(chars[i], '.' | '?' | '!') && chars.get(i + 1).is_some_and(|c| c.is_whitespace()) {
            let mut end = i + 1;
            while end < chars.len() && chars[end].is_whitespace() {
                end += 1;
            }
            out.push(Span::new(start, end));
            start = end;
            i = end;
            continue;
        }
        i += 1;
    }
    if start < chars.len() {
        out.push(Span::new(start, chars.len()));
    }
    out
}

/// Indices `i` such that a boundary falls between sentence `i` and `i + 1`:
/// the adjacent similarity is strictly below the `quantile` of all adjacent
/// similarities (linear interpolation between order statistics).
pub fn semantic_boundaries(similarities: &[f64], quantile: f64) -> Vec<usize> {
    if similarities.is_empty() {
        return Vec::new();
    }
    let mut sorted = similarities.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = quantile * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let threshold = sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64);
    similarities
        .iter()
        .enumerate()
        .filter(|(_, &s)| s < threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Group sentences into chunks, cutting where adjacent sentence similarity
/// drops below the policy's quantile threshold. Segments shorter than
/// `min_chunk_chars` are merged into the following one (the last into the
/// preceding one).
pub fn chunk_semantic<F>(doc: &SourceDocument, policy: &ChunkingPolicy, embed: F) -> Result<Vec<Chunk>, IngestError>
where
    F: Fn(&str) -> Vec<f64>,
{
    expect_strategy(policy, ChunkStrategy::Semantic)?;
    let text = CharText::new(&doc.body);
    let sentences = split_sentences(&doc.body);
    if sentences.len() < 2 || text.len() < policy.min_chunk_chars {
        let pieces = vec![(Span::new(0, text.len()), Metadata::new())];
        return assemble(doc, &text, pieces, ChunkStrategy::Semantic);
    }

    let vectors: Vec<Vec<f64>> = sentences.iter().map(|&s| embed(text.slice(s).trim())).collect();
    let sims: Vec<f64> = vectors.windows(2).map(|w| cosine_dense(&w[0], &w[1])).collect();
    let cuts = semantic_boundaries(&sims, policy.boundary_similarity_quantile);

    let mut segments = Vec::new();
    let mut seg_start = 0usize;
    for &i in &cuts {
        segments.push(Span::new(seg_start, sentences[i].end));
        seg_start = sentences[i].end;
    }
    segments.push(Span::new(seg_start, text.len()));

    let mut merged: Vec<Span> = Vec::new();
    let mut carry: Option<usize> = None;
    let last = segments.len() - 1;
    for (i, seg) in segments.into_iter().enumerate() {
        let seg = Span::new(carry.take().unwrap_or(seg.start), seg.end);
        if seg.len() < policy.min_chunk_chars && i < last {
            carry = Some(seg.start);
        } else if seg.len() < policy.min_chunk_chars && !merged.is_empty() {
            let prev = merged.pop().expect("non-empty");
            merged.push(Span::new(prev.start, seg.end));
        } else {
            merged.push(seg);
        }
    }

    let pieces = merged.into_iter().map(|s| (s, Metadata::new())).collect();
    assemble(doc, &text, pieces, ChunkStrategy::Semantic)
}

/// [`chunk_semantic`] with a TF-IDF model fitted on the document's sentences.
pub fn chunk_semantic_tfidf(doc: &SourceDocument, policy: &ChunkingPolicy) -> Result<Vec<Chunk>, IngestError> {
    let sentences: Vec<String> = split_sentences(&doc.body)
        .into_iter()
        .map(|s| CharText::new(&doc.body).slice(s).trim().to_string())
        .collect();
    let model = TfIdfModel::fit_texts(sentences.iter().map(String::as_str)).ok();
    chunk_semantic(doc, policy, |s| match &model {
        Some(m) => m.embed_text(s).values,
        None => Vec::new(),
    })
}

fn assemble(
    doc: &SourceDocument,
    text: &CharText<'_>,
    pieces: Vec<(Span, Metadata)>,
    strategy: ChunkStrategy,
) -> Result<Vec<Chunk>, IngestError> {
    pieces
        .into_iter()
        .enumerate()
        .map(|(ordinal, (span, mut metadata))| {
            metadata.insert(META_STRATEGY.into(), Value::String(strategy.as_str().into()));
            let chunk = Chunk {
                chunk_id: Chunk::chunk_id_for(&doc.doc_id, ordinal),
                doc_id: doc.doc_id.clone(),
                ordinal,
                text: text.slice(span).to_string(),
                span,
                metadata,
            };
            wrap_metadata(chunk, doc, &Metadata::new())
        })
        .collect()
}

/// Attach the document context to a chunk: provenance entries, then the
/// chunk's own metadata, then the title, then `extra` (which wins on
/// conflicts). Title and strategy are always present afterwards.
pub fn wrap_metadata(chunk: Chunk, doc: &SourceDocument, extra: &Metadata) -> Result<Chunk, IngestError> {
    if chunk.doc_id != doc.doc_id {
        return Err(IngestError::WrongDocument {
            chunk_id: chunk.chunk_id,
            chunk_doc: chunk.doc_id,
            doc: doc.doc_id.clone(),
        });
    }
    let mut metadata = doc.provenance.clone();
    metadata.extend(chunk.metadata);
    metadata.insert(META_TITLE.into(), Value::String(doc.title.clone()));
    metadata
        .entry(META_STRATEGY.to_string())
        .or_insert_with(|| Value::String("unspecified".into()));
    metadata.extend(extra.iter().map(|(k, v)| (k.clone(), v.clone())));
    Ok(Chunk { metadata, ..chunk })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::normalize_document;

    fn doc(body: &str, format: DocumentFormat) -> SourceDocument {
        SourceDocument {
            doc_id: "d".into(),
            title: "CBT-I Manual".into(),
            body: body.into(),
            format,
            provenance: Metadata::new(),
        }
    }

    fn spans(chunks: &[Chunk]) -> Vec<(usize, usize)> {
        chunks.iter().map(|c| (c.span.start, c.span.end)).collect()
    }

    fn letters(n: usize) -> String {
        (0..n).map(|i| (b'a' + (i % 26) as u8) as char).collect()
    }

    #[test]
    fn fixed_single_window() {
        let d = doc(&letters(1000), DocumentFormat::Plain);
        let chunks = chunk_fixed(&d, &ChunkingPolicy::default()).unwrap();
        assert_eq!(spans(&chunks), vec![(0, 1000)]);
    }

    #[test]
    fn fixed_default_policy_2600() {
        let d = doc(&letters(2600), DocumentFormat::Plain);
        let chunks = chunk_fixed(&d, &ChunkingPolicy::default()).unwrap();
        assert_eq!(spans(&chunks), vec![(0, 1000), (800, 1800), (1600, 2600)]);
    }

    #[test]
    fn fixed_short_tail_1801() {
        let d = doc(&letters(1801), DocumentFormat::Plain);
        let chunks = chunk_fixed(&d, &ChunkingPolicy::default()).unwrap();
        assert_eq!(spans(&chunks), vec![(0, 1000), (800, 1800), (1600, 1801)]);
        assert_eq!(chunks[2].text.chars().count(), 201);
        assert_eq!(chunks[2].text, d.body[1600..]);
        assert_eq!(chunks[1].chunk_id, "d#1");
    }

    #[test]
    fn fixed_counts_chars_not_bytes() {
        let body: String = "é".repeat(1500);
        let d = doc(&body, DocumentFormat::Plain);
        let chunks = chunk_fixed(&d, &ChunkingPolicy::default()).unwrap();
        assert_eq!(spans(&chunks), vec![(0, 1000), (800, 1500)]);
        assert_eq!(chunks[1].text.chars().count(), 700);
    }

    #[test]
    fn wrong_strategy_is_rejected() {
        let d = doc("abc", DocumentFormat::Plain);
        let err = chunk_fixed(&d, &ChunkingPolicy::new(ChunkStrategy::Recursive)).unwrap_err();
        assert!(matches!(err, IngestError::StrategyMismatch { .. }));
    }

    #[test]
    fn policy_validation() {
        assert!(ChunkingPolicy::default().with_sizes(100, 100).validate().is_err());
        let mut p = ChunkingPolicy::new(ChunkStrategy::Recursive);
        p.separators.clear();
        assert!(p.validate().is_err());
        let p = ChunkingPolicy {
            boundary_similarity_quantile: 1.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn recursive_splits_at_paragraph_boundary() {
        let p1: String = "word ".repeat(120).trim_end().to_string() + ".";
        let p2 = p1.clone();
        assert_eq!(p1.chars().count(), 600);
        let d = doc(&format!("{p1}\n\n{p2}"), DocumentFormat::Plain);
        let chunks = chunk_recursive(&d, &ChunkingPolicy::new(ChunkStrategy::Recursive)).unwrap();
        assert_eq!(spans(&chunks), vec![(0, 602), (602, 1202)]);
        assert_eq!(chunks[1].text, p2);
    }

    #[test]
    fn recursive_short_body_is_one_chunk() {
        let d = doc("Short paragraph.\n\nAnother one.", DocumentFormat::Plain);
        let chunks = chunk_recursive(&d, &ChunkingPolicy::new(ChunkStrategy::Recursive)).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text, d.body);
    }

    #[test]
    fn recursive_falls_back_to_windows() {
        let d = doc(&letters(2500), DocumentFormat::Plain);
        let chunks = chunk_recursive(&d, &ChunkingPolicy::new(ChunkStrategy::Recursive)).unwrap();
        assert_eq!(spans(&chunks), vec![(0, 1000), (800, 1800), (1600, 2500)]);
    }

    #[test]
    fn recursive_merges_small_lines_greedily() {
        let policy = ChunkingPolicy::new(ChunkStrategy::Recursive)
            .with_sizes(20, 5)
            .with_min_chunk_chars(1);
        let d = doc("aaaa\nbbbb\ncccc\ndddd\neeee\nffff", DocumentFormat::Plain);
        let chunks = chunk_recursive(&d, &policy).unwrap();
        // Lines are 5 chars with their newline; four fit in 20.
        assert_eq!(spans(&chunks), vec![(0, 20), (20, 29)]);
    }

    #[test]
    fn structural_one_chunk_per_heading() {
        let d = doc("# A\nalpha text\n# B\nbeta text", DocumentFormat::Markdown);
        let policy = ChunkingPolicy::new(ChunkStrategy::DocumentSpecific).with_min_chunk_chars(1);
        let chunks = chunk_structural(&d, &policy).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].section_path(), vec!["A"]);
        assert_eq!(chunks[1].section_path(), vec!["B"]);
        assert_eq!(chunks[1].text, "# B\nbeta text");
    }

    #[test]
    fn structural_heading_trail() {
        let body =
            "# Session 3\nIntro to the session.\n## Sleep Restriction\nLimit time in bed.\n## Relaxation\nBreathing.";
        let d = doc(body, DocumentFormat::Markdown);
        let policy = ChunkingPolicy::new(ChunkStrategy::DocumentSpecific).with_min_chunk_chars(1);
        let chunks = chunk_structural(&d, &policy).unwrap();
        let paths: Vec<Vec<String>> = chunks.iter().map(Chunk::section_path).collect();
        assert_eq!(
            paths,
            vec![
                vec!["Session 3".to_string()],
                vec!["Session 3".to_string(), "Sleep Restriction".to_string()],
                vec!["Session 3".to_string(), "Relaxation".to_string()],
            ]
        );
        assert_eq!(chunks[1].metadata[META_SECTION], "Sleep Restriction");
    }

    #[test]
    fn structural_plain_body_single_chunk() {
        let d = doc("No headings here at all.", DocumentFormat::Plain);
        let policy = ChunkingPolicy::new(ChunkStrategy::DocumentSpecific).with_min_chunk_chars(1);
        let chunks = chunk_structural(&d, &policy).unwrap();
        assert_eq!(chunks.len(), 1);
        assert!(chunks[0].section_path().is_empty());
    }

    #[test]
    fn structural_keeps_preamble_and_ignores_deep_headings() {
        let d = doc("preface\n#### not a section\n# Real\nbody", DocumentFormat::Markdown);
        let policy = ChunkingPolicy::new(ChunkStrategy::DocumentSpecific).with_min_chunk_chars(1);
        let chunks = chunk_structural(&d, &policy).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].text, "preface\n#### not a section\n");
        assert!(chunks[0].section_path().is_empty());
    }

    #[test]
    fn structural_oversized_section_is_sub_split() {
        let body = format!("# Big\n{}", "word ".repeat(400).trim_end());
        let d = doc(&body, DocumentFormat::Markdown);
        let chunks = chunk_structural(&d, &ChunkingPolicy::new(ChunkStrategy::DocumentSpecific)).unwrap();
        assert!(chunks.len() >= 2);
        assert!(chunks.iter().all(|c| c.section_path() == vec!["Big"]));
        assert!(chunks.iter().all(|c| c.span.len() <= 1000));
    }

    #[test]
    fn structural_records() {
        let d = doc("rec one\n\nrec two\n\nrec three", DocumentFormat::StructuredRecord);
        let policy = ChunkingPolicy::new(ChunkStrategy::DocumentSpecific).with_min_chunk_chars(1);
        let chunks = chunk_structural(&d, &policy).unwrap();
        assert_eq!(spans(&chunks), vec![(0, 9), (9, 18), (18, 27)]);
    }

    #[test]
    fn sentence_splitting() {
        let s = split_sentences("One. Two? Three!  Four");
        assert_eq!(
            s,
            vec![Span::new(0, 5), Span::new(5, 10), Span::new(10, 18), Span::new(18, 22)]
        );
        assert_eq!(split_sentences("e.g.no split"), vec![Span::new(0, 12)]);
    }

    #[test]
    fn semantic_boundary_before_topic_change() {
        // Hand computation: with TF-IDF fitted on the three sentences, the first
        // pair shares "the", "bed", "sleep" (cosine > 0) and the second pair has
        // disjoint vocabulary (cosine 0). The 0.25 quantile of {0, s} is s/4 > 0,
        // so only the second gap is cut.
        let body = "The bed is for sleep. Sleep in the bed. Stock prices fell.";
        let d = doc(body, DocumentFormat::Plain);
        let policy = ChunkingPolicy::new(ChunkStrategy::Semantic).with_min_chunk_chars(1);
        let chunks = chunk_semantic_tfidf(&d, &policy).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[1].text, "Stock prices fell.");
        assert_eq!(chunks[0].text, "The bed is for sleep. Sleep in the bed. ");
    }

    #[test]
    fn semantic_boundary_rule() {
        assert_eq!(semantic_boundaries(&[0.4, 0.0], 0.25), vec![1]);
        assert!(semantic_boundaries(&[0.7, 0.7, 0.7], 0.25).is_empty());
        assert!(semantic_boundaries(&[], 0.25).is_empty());
    }

    #[test]
    fn semantic_single_sentence() {
        let d = doc("Just one sentence here", DocumentFormat::Plain);
        let policy = ChunkingPolicy::new(ChunkStrategy::Semantic).with_min_chunk_chars(1);
        assert_eq!(chunk_semantic_tfidf(&d, &policy).unwrap().len(), 1);
    }

    #[test]
    fn semantic_identical_sentences_no_boundary() {
        let d = doc("Sleep well tonight. ".repeat(6).trim_end(), DocumentFormat::Plain);
        let policy = ChunkingPolicy::new(ChunkStrategy::Semantic).with_min_chunk_chars(1);
        assert_eq!(chunk_semantic_tfidf(&d, &policy).unwrap().len(), 1);
    }

    fn first_letter_embed(s: &str) -> Vec<f64> {
        match s.chars().next() {
            Some('A') => vec![1.0, 0.0],
            Some('B') => vec![0.0, 1.0],
            Some('C') => vec![0.6, 0.8],
            _ => vec![0.0, -1.0],
        }
    }

    #[test]
    fn semantic_cut_and_forward_merge() {
        // Sentences: 11, 6, 16 and 3 chars. Adjacent cosines are 0, 0.8, -0.8
        // and the 0.25 quantile of them is -0.4, so only the last gap is cut;
        // the trailing 3-char segment is too small and merges backwards.
        let d = doc("Aaaa aaaa. Bbbb. Cccc cccc cccc. Dd.", DocumentFormat::Plain);
        let policy = ChunkingPolicy::new(ChunkStrategy::Semantic).with_min_chunk_chars(10);
        let chunks = chunk_semantic(&d, &policy, first_letter_embed).unwrap();
        assert_eq!(spans(&chunks), vec![(0, 36)]);

        // Without the trailing sentence the cosines are 0, 0.8; the threshold is
        // 0.2 and the first gap is cut.
        let d = doc("Aaaa aaaa. Bbbb. Cccc cccc cccc.", DocumentFormat::Plain);
        let chunks = chunk_semantic(&d, &policy, first_letter_embed).unwrap();
        assert_eq!(spans(&chunks), vec![(0, 11), (11, 32)]);

        // An 11-char head below min_chunk_chars merges forward.
        let policy = policy.with_min_chunk_chars(12);
        let chunks = chunk_semantic(&d, &policy, first_letter_embed).unwrap();
        assert_eq!(spans(&chunks), vec![(0, 32)]);
    }

    #[test]
    fn wrap_metadata_rules() {
        let mut prov = Metadata::new();
        prov.insert("title".into(), "CBT-I Manual".into());
        prov.insert("doc_id".into(), "manual".into());
        let source = normalize_document("Body text here.", DocumentFormat::Plain, prov).unwrap();
        let chunk = chunk_fixed(&source, &ChunkingPolicy::default()).unwrap().remove(0);
        assert_eq!(chunk.metadata[META_TITLE], "CBT-I Manual");
        assert_eq!(chunk.metadata[META_STRATEGY], "fixed_size");

        let mut extra = Metadata::new();
        extra.insert("session".into(), "3".into());
        let wrapped = wrap_metadata(chunk.clone(), &source, &extra).unwrap();
        assert_eq!(wrapped.metadata["session"], "3");
        assert_eq!(wrapped.metadata[META_TITLE], "CBT-I Manual");

        let other = doc("x", DocumentFormat::Plain);
        assert!(matches!(
            wrap_metadata(chunk, &other, &Metadata::new()),
            Err(IngestError::WrongDocument { .. })
        ));
    }

    #[test]
    fn tiny_input_single_chunk_all_strategies() {
        let d = doc("# A\nshort\n# B\nalso short. Yes.", DocumentFormat::Markdown);
        for strategy in [
            ChunkStrategy::FixedSize,
            ChunkStrategy::Recursive,
            ChunkStrategy::DocumentSpecific,
            ChunkStrategy::Semantic,
        ] {
            let chunks = chunk_document(&d, &ChunkingPolicy::new(strategy)).unwrap();
            assert_eq!(chunks.len(), 1, "{strategy:?}");
            assert_eq!(chunks[0].text, d.body);
        }
    }
}
