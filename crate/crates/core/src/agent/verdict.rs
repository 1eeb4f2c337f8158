//! Supervisor reply parsing.
//!
//! The structured grammar is tried first:
//!
//! ```text
//! VERDICT: GOOD | REVISE | WRONG
//! FEEDBACK: <text, may span lines>
//! RESPONSE: <replacement, rest of the reply>
//! ```
//!
//! Free-text replies are then matched against the three stock phrasings.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::AgentError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VerdictKind {
    Approved,
    Revised,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParseMode {
    Grammar,
    Phrase,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SupervisorVerdict {
    pub kind: VerdictKind,
    pub feedback: String,
    pub replacement: Option<String>,
    pub parsed_with: ParseMode,
}

impl SupervisorVerdict {
    pub fn approved(feedback: impl Into<String>, parsed_with: ParseMode) -> Self {
        Self {
            kind: VerdictKind::Approved,
            feedback: feedback.into(),
            replacement: None,
            parsed_with,
        }
    }

    /// Approved carries no replacement; the other kinds carry a nonempty one
    /// and nonempty feedback.
    pub fn validate(&self) -> Result<(), AgentError> {
        match self.kind {
            VerdictKind::Approved if self.replacement.is_some() => Err(AgentError::UnparseableVerdict(
                "approved verdict carries a replacement".into(),
            )),
            VerdictKind::Approved => Ok(()),
            _ => {
                if self.replacement.as_deref().is_none_or(|r| r.trim().is_empty()) {
                    return Err(AgentError::MissingReplacement);
                }
                if self.feedback.trim().is_empty() {
                    return Err(AgentError::UnparseableVerdict("non-approval without feedback".into()));
                }
                Ok(())
            }
        }
    }
}

static VERDICT_LINE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?im)^[ \t]*VERDICT:[ \t]*(GOOD|REVISE|WRONG)\b").unwrap());
static FEEDBACK_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?im)^[ \t]*FEEDBACK:").unwrap());
static RESPONSE_LINE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?im)^[ \t]*RESPONSE:").unwrap());
static SUPERVISOR_RESPONSE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)supervisor(?:\s+agent)?\s+response\s*:").unwrap());
static FEEDBACK_LABEL: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*supervisor(?:\s+agent)?\s+feedback\s*:\s*").unwrap());
static PARAGRAPH_BREAK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\n[ \t]*\n").unwrap());

const PHRASE_REJECTED: &str = "seems to be wrong";
const PHRASE_REVISED: &str = "not exactly what i would expect";
const PHRASE_APPROVED: &str = "response is good";

pub fn parse_supervisor_output(raw: &str) -> Result<SupervisorVerdict, AgentError> {
    if raw.trim().is_empty() {
        return Err(AgentError::UnparseableVerdict("empty supervisor reply".into()));
    }
    let verdict = match parse_grammar(raw) {
        Some(v) => v?,
        None => parse_phrases(raw)?,
    };
    verdict.validate()?;
    Ok(verdict)
}

fn parse_grammar(raw: &str) -> Option<Result<SupervisorVerdict, AgentError>> {
    let caps = VERDICT_LINE.captures(raw)?;
    let kind = match caps[1].to_ascii_uppercase().as_str() {
        "GOOD" => VerdictKind::Approved,
        "REVISE" => VerdictKind::Revised,
        _ => VerdictKind::Rejected,
    };
    let after_verdict = caps.get(0).unwrap().end();
    let response = RESPONSE_LINE
        .find_at(raw, after_verdict)
        .map(|m| (m.start(), raw[m.end()..].trim().to_string()));
    let feedback_end = response.as_ref().map_or(raw.len(), |(start, _)| *start);
    let feedback = FEEDBACK_LINE
        .find_at(raw, after_verdict)
        .filter(|m| m.start() < feedback_end)
        .map(|m| raw[m.end()..feedback_end].trim().to_string())
        .unwrap_or_default();

    Some(match kind {
        VerdictKind::Approved => Ok(SupervisorVerdict::approved(feedback, ParseMode::Grammar)),
        _ => match response.map(|(_, r)| strip_quotes(&r)) {
            Some(r) if !r.is_empty() => Ok(SupervisorVerdict {
                kind,
                feedback,
                replacement: Some(r),
                parsed_with: ParseMode::Grammar,
            }),
            _ => Err(AgentError::MissingReplacement),
        },
    })
}

fn parse_phrases(raw: &str) -> Result<SupervisorVerdict, AgentError> {
    let lower = raw.to_lowercase();
    // Checked most severe first so a reply mixing phrasings is never approved.
    let kind = if lower.contains(PHRASE_REJECTED) {
        VerdictKind::Rejected
    } else if lower.contains(PHRASE_REVISED) {
        VerdictKind::Revised
    } else if lower.contains(PHRASE_APPROVED) {
        VerdictKind::Approved
    } else {
        return Err(AgentError::UnparseableVerdict(
            "no verdict line and no recognised phrase".into(),
        ));
    };

    let marker = SUPERVISOR_RESPONSE.find_iter(raw).last();
    let feedback_region = marker.map_or(raw, |m| &raw[..m.start()]);
    let feedback = paragraphs(feedback_region)
        .first()
        .map(|p| FEEDBACK_LABEL.replace(p, "").trim().to_string())
        .unwrap_or_default();

    if kind == VerdictKind::Approved {
        return Ok(SupervisorVerdict::approved(feedback, ParseMode::Phrase));
    }

    let replacement = match marker {
        Some(m) => strip_quotes(raw[m.end()..].trim()),
        None => {
            let paras = paragraphs(raw);
            if paras.len() < 2 {
                return Err(AgentError::MissingReplacement);
            }
            strip_quotes(paras[paras.len() - 1])
        }
    };
    if replacement.is_empty() {
        return Err(AgentError::MissingReplacement);
    }
    Ok(SupervisorVerdict {
        kind,
        feedback,
        replacement: Some(replacement),
        parsed_with: ParseMode::Phrase,
    })
}

fn paragraphs(text: &str) -> Vec<&str> {
    PARAGRAPH_BREAK
        .split(text)
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect()
}

fn strip_quotes(s: &str) -> String {
    let s = s.trim();
    let s = s
        .strip_prefix(['“', '"'])
        .and_then(|inner| inner.strip_suffix(['”', '"']))
        .unwrap_or(s);
    s.trim().to_string()
}
