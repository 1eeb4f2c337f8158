//! Turning recorded conversations into a fingerprint-keyed script.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_supervisor_prompt, build_therapist_prompt, AgentConfig, AgentError, PromptTemplates};
use crate::llm::{fingerprint, ScriptedBackendSpec};
use crate::retrieval::Retriever;

/// One recorded exchange: what the patient asked and what each agent said.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_no: Option<u32>,
    pub query: String,
    pub therapist_response: String,
    pub supervisor_reply: String,
}

pub fn load_transcripts(path: &Path) -> Result<Vec<Transcript>, AgentError> {
    let raw = std::fs::read_to_string(path).map_err(|e| AgentError::Script(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&raw).map_err(|e| AgentError::Script(format!("{}: {e}", path.display())))
}

/// Build a map-mode script so that replaying each transcript's query through
/// `answer_query` with the same retriever, templates and config reproduces
/// the recorded agent replies. Queries with no retrievable context need no
/// replies and are skipped.
pub fn replay_script(
    transcripts: &[Transcript],
    retriever: &Retriever,
    templates: &PromptTemplates,
    config: &AgentConfig,
    session_tag: Option<&str>,
) -> Result<ScriptedBackendSpec, AgentError> {
    let mut entries: BTreeMap<String, String> = BTreeMap::new();
    let mut insert = |fp: String, reply: &str| -> Result<(), AgentError> {
        match entries.get(&fp) {
            Some(existing) if existing != reply => Err(AgentError::Script(format!(
                "two different replies share fingerprint {fp}"
            ))),
            _ => {
                entries.insert(fp, reply.to_string());
                Ok(())
            }
        }
    };
    let filter = session_tag.filter(|_| config.segment_by_session);
    for t in transcripts {
        let hits = retriever
            .search_session(&t.query, config.k, config.min_score, filter)
            .map_err(|e| AgentError::Script(e.to_string()))?;
        if hits.is_empty() {
            continue;
        }
        let therapist = build_therapist_prompt(&t.query, &hits, templates, session_tag)?;
        insert(fingerprint(&therapist).0, &t.therapist_response)?;
        let supervisor = build_supervisor_prompt(&t.query, &t.therapist_response, &hits, templates)?;
        insert(fingerprint(&supervisor).0, &t.supervisor_reply)?;
    }
    Ok(ScriptedBackendSpec::Map { entries })
}
