use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{DocumentFormat, IngestError, Metadata, SourceDocument};

const MAX_DERIVED_TITLE_CHARS: usize = 80;

/// Normalize raw text into a [`SourceDocument`].
///
/// `provenance` may carry `doc_id` and `title`; when absent, the id is derived
/// from a content hash and the title from the first heading or first line.
/// Remaining provenance entries are kept verbatim.
pub fn normalize_document(
    raw: &str,
    format: DocumentFormat,
    provenance: Metadata,
) -> Result<SourceDocument, IngestError> {
    let body = normalize_body(raw);
    if body.is_empty() {
        return Err(IngestError::EmptyDocument);
    }

    let mut provenance = provenance;
    let doc_id = match provenance.remove("doc_id") {
        Some(Value::String(s)) if !s.trim().is_empty() => s,
        Some(Value::Number(n)) => n.to_string(),
        _ => derived_doc_id(&body),
    };
    let title = match provenance.remove("title") {
        Some(Value::String(s)) if !s.trim().is_empty() => s.trim().to_string(),
        _ => derived_title(&body, format),
    };

    Ok(SourceDocument {
        doc_id,
        title,
        body,
        format,
        provenance,
    })
}

/// Canonical whitespace form of `raw`.
///
/// Carriage returns become newlines, form feeds are dropped, trailing
/// whitespace is stripped from every line, `x-\ny` (lowercase letters on both
/// sides) is rejoined into `xy`, runs of blank lines collapse to one, and
/// leading/trailing whitespace of the whole body is removed.
pub fn normalize_body(raw: &str) -> String {
    let unified: String = raw
        .replace("\r\n", "\n")
        .chars()
        .filter_map(|c| match c {
            '\r' => Some('\n'),
            '\u{000C}' => None,
            other => Some(other),
        })
        .collect();

    let trimmed_lines: Vec<&str> = unified.split('\n').map(str::trim_end).collect();
    let joined = rejoin_hyphenation(&trimmed_lines.join("\n"));

    let mut out = String::with_capacity(joined.len());
    let mut blank_run = 0usize;
    for line in joined.split('\n') {
        if line.is_empty() {
            blank_run += 1;
            if blank_run > 1 {
                continue;
            }
        } else {
            blank_run = 0;
        }
        out.push_str(line);
        out.push('\n');
    }
    out.trim().to_string()
}

fn rejoin_hyphenation(text: &str) -> String {
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c == '-'
            && i > 0
            && i + 2 < chars.len()
            && chars[i + 1] == '\n'
            && chars[i - 1].is_lowercase()
            && chars[i + 2].is_lowercase()
        {
            i += 2;
            continue;
        }
        out.push(c);
        i += 1;
    }
    out
}

fn derived_doc_id(body: &str) -> String {
    let digest = Sha256::digest(body.as_bytes());
    format!("doc-{}", &hex::encode(digest)[..16])
}

fn derived_title(body: &str, format: DocumentFormat) -> String {
    if format == DocumentFormat::Markdown {
        if let Some(heading) = body
            .lines()
            .find_map(|l| l.strip_prefix('#').map(|h| h.trim_start_matches('#').trim()))
            .filter(|h| !h.is_empty())
        {
            return heading.chars().take(MAX_DERIVED_TITLE_CHARS).collect();
        }
    }
    body.lines()
        .find(|l| !l.trim().is_empty())
        .unwrap_or_default()
        .trim()
        .chars()
        .take(MAX_DERIVED_TITLE_CHARS)
        .collect()
}
