//! Line-oriented chat loop.

use std::io::{BufRead, Write};

use coached_core::agent::{AgentError, AgentTurn, Coach};

use crate::CliError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChatStats {
    pub turns: usize,
    pub degraded: usize,
}

fn io(e: std::io::Error) -> CliError {
    CliError::Io(e.to_string())
}

/// Supervisor view of a turn, printed before the final response.
pub fn write_trace(out: &mut impl Write, turn: &AgentTurn) -> std::io::Result<()> {
    writeln!(out, "--- trace {}", turn.turn_id)?;
    for (i, hit) in turn.hits.iter().enumerate() {
        writeln!(out, "context [{}] {} (score {:.3})", i + 1, hit.chunk_id, hit.score)?;
    }
    if !turn.therapist_draft.is_empty() {
        writeln!(out, "draft: {}", turn.therapist_draft)?;
    }
    match &turn.verdict {
        Some(v) => {
            writeln!(out, "verdict: {:?}", v.kind)?;
            writeln!(out, "feedback: {}", v.feedback)?;
            if let Some(r) = &v.replacement {
                writeln!(out, "replacement: {r}")?;
            }
        }
        None => writeln!(out, "verdict: none")?,
    }
    if let Some(reason) = &turn.degraded_reason {
        writeln!(out, "degraded: {reason}")?;
    }
    writeln!(out, "--- final")
}

/// Answer each non-blank input line in `session_id`. Only the final response
/// is printed unless `trace` is set. A failed turn prints its fallback reply
/// and a warning on `err`; only a turn that could not be logged stops the loop.
pub fn run_chat(
    coach: &Coach,
    session_id: &str,
    session_tag: Option<&str>,
    trace: bool,
    input: impl BufRead,
    mut out: impl Write,
    mut err: impl Write,
) -> Result<ChatStats, CliError> {
    let mut stats = ChatStats::default();
    for line in input.lines() {
        let line = line.map_err(io)?;
        let query = line.trim();
        if query.is_empty() {
            continue;
        }
        let turn = match coach.answer(session_id, query, session_tag) {
            Ok(turn) => turn,
            Err(e @ AgentError::Log(_)) => return Err(e.into()),
            Err(e) => {
                writeln!(err, "warning: {e}").map_err(io)?;
                match e.turn() {
                    Some(turn) => turn.clone(),
                    None => return Err(e.into()),
                }
            }
        };
        stats.turns += 1;
        stats.degraded += usize::from(turn.degraded);
        if trace {
            write_trace(&mut out, &turn).map_err(io)?;
        }
        writeln!(out, "{}", turn.final_response).map_err(io)?;
        out.flush().map_err(io)?;
    }
    Ok(stats)
}
