use std::collections::BTreeMap;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::ingest::{META_SECTION, META_SECTION_PATH, META_SESSION, META_TITLE};
use crate::llm::ChatMessage;
use crate::retrieval::RetrievalHit;

pub const SLOT_CONTEXT: &str = "context_chunks";
pub const SLOT_SESSION: &str = "session_tag";
pub const SLOT_QUERY: &str = "query";
pub const SLOT_DRAFT: &str = "draft";
const ALL_SLOTS: [&str; 4] = [SLOT_CONTEXT, SLOT_SESSION, SLOT_QUERY, SLOT_DRAFT];

/// Rendered in place of `{session_tag}` when no session is selected.
pub const NO_SESSION_TAG: &str = "general";

static SLOT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([a-z_]+)\}").unwrap());

const DEFAULT_THERAPIST_SYSTEM: &str = "\
You are a Therapist trained in cognitive behavioral therapy for insomnia (CBT-I), \
talking with a patient between sessions. Current session focus: {session_tag}.

Answer only from the CBT-I context below. If the context does not cover the \
question, say that you can only help with questions about behavioral therapy for \
insomnia. Keep the answer short, warm and practical. Do not diagnose and do not \
recommend medication.

Context:
{context_chunks}";

const DEFAULT_THERAPIST_USER: &str = "{query}";

const DEFAULT_SUPERVISOR_SYSTEM: &str = "\
You are a Supervisor of CBT-I therapists. A trainee Therapist has drafted a reply \
to a patient. Check the draft against the CBT-I context below and against what the \
patient is really asking. If the draft is correct and answers the patient, approve it. \
If it is partly right, or does not address the patient's actual concern, give feedback \
and write the reply you would send instead. If it is wrong or unsafe, say so and write \
a corrected reply.

Reply in exactly this format:
VERDICT: GOOD | REVISE | WRONG
FEEDBACK: <one short paragraph explaining the verdict>
RESPONSE: <the reply to send to the patient; leave out when VERDICT is GOOD>

Context:
{context_chunks}";

const DEFAULT_SUPERVISOR_USER: &str = "\
Patient query:
{query}

Therapist's RESPONSE:
{draft}";

const DEFAULT_FALLBACK_REPLY: &str = "\
I'm sorry, I can only help with questions about behavioral therapy for insomnia, \
and I couldn't find guidance on that in the therapy materials. Please bring this \
question to your therapist at your next session.";

/// The five prompt texts used by the agents.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub therapist_system: String,
    pub therapist_user: String,
    pub supervisor_system: String,
    pub supervisor_user: String,
    pub fallback_reply: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            therapist_system: DEFAULT_THERAPIST_SYSTEM.into(),
            therapist_user: DEFAULT_THERAPIST_USER.into(),
            supervisor_system: DEFAULT_SUPERVISOR_SYSTEM.into(),
            supervisor_user: DEFAULT_SUPERVISOR_USER.into(),
            fallback_reply: DEFAULT_FALLBACK_REPLY.into(),
        }
    }
}

impl PromptTemplates {
    /// Load from `.toml` or `.json` (by extension; anything else is tried as JSON).
    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let raw =
            std::fs::read_to_string(path).map_err(|e| AgentError::Template(format!("{}: {e}", path.display())))?;
        let templates: Self = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml")) {
            toml::from_str(&raw).map_err(|e| AgentError::Template(e.to_string()))?
        } else {
            serde_json::from_str(&raw).map_err(|e| AgentError::Template(e.to_string()))?
        };
        templates.validate()?;
        Ok(templates)
    }

    /// Every required slot appears exactly once in its template, no template
    /// names a slot it cannot fill, and the supervisor system prompt carries
    /// the verdict grammar.
    pub fn validate(&self) -> Result<(), AgentError> {
        let checks: [(&str, &str, &[&str]); 4] = [
            (
                "therapist_system",
                &self.therapist_system,
                &[SLOT_CONTEXT, SLOT_SESSION],
            ),
            ("therapist_user", &self.therapist_user, &[SLOT_QUERY]),
            ("supervisor_system", &self.supervisor_system, &[SLOT_CONTEXT]),
            ("supervisor_user", &self.supervisor_user, &[SLOT_QUERY, SLOT_DRAFT]),
        ];
        for (name, template, required) in checks {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for caps in SLOT.captures_iter(template) {
                let slot = caps.get(1).unwrap().as_str();
                if let Some(known) = ALL_SLOTS.iter().find(|s| **s == slot) {
                    *counts.entry(known).or_default() += 1;
                }
            }
            for slot in required {
                match counts.get(slot).copied().unwrap_or(0) {
                    1 => {}
                    n => {
                        return Err(AgentError::Template(format!(
                            "{name}: slot {{{slot}}} appears {n} times, expected once"
                        )))
                    }
                }
            }
            if let Some(extra) = counts.keys().find(|s| !required.contains(s)) {
                return Err(AgentError::Template(format!(
                    "{name}: slot {{{extra}}} cannot be filled here"
                )));
            }
        }
        if !self.supervisor_system.contains("VERDICT:") {
            return Err(AgentError::Template(
                "supervisor_system must describe the VERDICT: grammar".into(),
            ));
        }
        if self.fallback_reply.trim().is_empty() {
            return Err(AgentError::Template("fallback_reply is empty".into()));
        }
        Ok(())
    }
}

/// Substitute `{slot}` occurrences in one pass, so slot-like text inside a
/// value is never expanded.
fn render(template: &str, values: &[(&str, &str)]) -> Result<String, AgentError> {
    let mut out = String::with_capacity(template.len());
    let mut last = 0;
    for caps in SLOT.captures_iter(template) {
        let whole = caps.get(0).unwrap();
        let name = &caps[1];
        if let Some((_, value)) = values.iter().find(|(slot, _)| *slot == name) {
            out.push_str(&template[last..whole.start()]);
            out.push_str(value);
            last = whole.end();
        } else if ALL_SLOTS.contains(&name) {
            return Err(AgentError::Template(format!("unfilled slot {{{name}}}")));
        }
    }
    out.push_str(&template[last..]);
    Ok(out)
}

/// Header line placed above a context chunk, naming where it came from.
pub fn hit_header(position: usize, hit: &RetrievalHit) -> String {
    let meta_str = |key: &str| hit.metadata.get(key).and_then(|v| v.as_str()).filter(|s| !s.is_empty());
    let mut parts = vec![format!("[{position}] {}", hit.chunk_id)];
    if let Some(title) = meta_str(META_TITLE) {
        parts.push(format!("source: {title}"));
    }
    let section = meta_str(META_SECTION).map(str::to_string).or_else(|| {
        hit.metadata
            .get(META_SECTION_PATH)
            .and_then(|v| v.as_array())
            .map(|path| path.iter().filter_map(|p| p.as_str()).collect::<Vec<_>>().join(" > "))
            .filter(|s| !s.is_empty())
    });
    if let Some(section) = section {
        parts.push(format!("section: {section}"));
    }
    match hit.metadata.get(META_SESSION) {
        Some(serde_json::Value::String(s)) if !s.is_empty() => parts.push(format!("session: {s}")),
        Some(serde_json::Value::Number(n)) => parts.push(format!("session: {n}")),
        _ => {}
    }
    parts.push(format!("score: {:.3}", hit.score));
    parts.join(" | ")
}

/// Hits in score order (highest first, ties by chunk id), each under its header.
pub fn render_context(hits: &[RetrievalHit]) -> String {
    let mut ordered: Vec<&RetrievalHit> = hits.iter().collect();
    ordered.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.chunk_id.cmp(&b.chunk_id)));
    ordered
        .iter()
        .enumerate()
        .map(|(i, hit)| format!("{}\n{}", hit_header(i + 1, hit), hit.text))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn build_therapist_prompt(
    query: &str,
    hits: &[RetrievalHit],
    templates: &PromptTemplates,
    session_tag: Option<&str>,
) -> Result<Vec<ChatMessage>, AgentError> {
    let context = render_context(hits);
    let session = session_tag.unwrap_or(NO_SESSION_TAG);
    Ok(vec![
        ChatMessage::system(render(
            &templates.therapist_system,
            &[(SLOT_CONTEXT, &context), (SLOT_SESSION, session)],
        )?),
        ChatMessage::user(render(&templates.therapist_user, &[(SLOT_QUERY, query)])?),
    ])
}

pub fn build_supervisor_prompt(
    query: &str,
    draft: &str,
    hits: &[RetrievalHit],
    templates: &PromptTemplates,
) -> Result<Vec<ChatMessage>, AgentError> {
    if draft.trim().is_empty() {
        return Err(AgentError::EmptyDraft);
    }
    let context = render_context(hits);
    Ok(vec![
        ChatMessage::system(render(&templates.supervisor_system, &[(SLOT_CONTEXT, &context)])?),
        ChatMessage::user(render(
            &templates.supervisor_user,
            &[(SLOT_QUERY, query), (SLOT_DRAFT, draft)],
        )?),
    ])
}
