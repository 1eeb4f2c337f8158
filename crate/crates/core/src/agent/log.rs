//! Append-only turn log.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::{AgentError, AgentTurn};

/// Environment variable naming a crash-injection point. The only recognised
/// value is [`FAILPOINT_ABORT_AFTER_PERSIST`].
pub const FAILPOINT_ENV: &str = "COACHED_FAILPOINT";
pub const FAILPOINT_ABORT_AFTER_PERSIST: &str = "abort_after_persist";

pub trait TurnSink: Send + Sync {
    /// Durably record one turn. Safe to call from many threads.
    fn append(&self, turn: &AgentTurn) -> Result<(), AgentError>;
}

/// One JSON object per line, flushed and synced before `append` returns.
pub struct JsonlTurnLog {
    path: PathBuf,
    file: Mutex<File>,
    abort_after_persist: bool,
}

impl JsonlTurnLog {
    pub fn open(path: &Path) -> Result<Self, AgentError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| AgentError::Log(e.to_string()))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| AgentError::Log(format!("{}: {e}", path.display())))?;
        let abort_after_persist = std::env::var(FAILPOINT_ENV).is_ok_and(|v| v == FAILPOINT_ABORT_AFTER_PERSIST);
        Ok(Self {
            path: path.to_path_buf(),
            file: Mutex::new(file),
            abort_after_persist,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl TurnSink for JsonlTurnLog {
    fn append(&self, turn: &AgentTurn) -> Result<(), AgentError> {
        let mut line = serde_json::to_vec(turn).map_err(|e| AgentError::Log(e.to_string()))?;
        line.push(b'\n');
        let mut file = self
            .file
            .lock()
            .map_err(|_| AgentError::Log("log lock poisoned".into()))?;
        file.write_all(&line)
            .and_then(|_| file.flush())
            .and_then(|_| file.sync_data())
            .map_err(|e| AgentError::Log(e.to_string()))?;
        if self.abort_after_persist {
            std::process::abort();
        }
        Ok(())
    }
}

/// Read every complete turn. A final line without its newline is a torn
/// write and is skipped; any other malformed line is an error.
pub fn read_turn_log(path: &Path) -> Result<Vec<AgentTurn>, AgentError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(AgentError::Log(format!("{}: {e}", path.display()))),
    };
    let mut reader = BufReader::new(file);
    let mut turns = Vec::new();
    let mut line = String::new();
    let mut line_no = 0;
    loop {
        line.clear();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| AgentError::Log(e.to_string()))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        if !line.ends_with('\n') {
            break;
        }
        if line.trim().is_empty() {
            continue;
        }
        let turn = serde_json::from_str(&line)
            .map_err(|e| AgentError::Log(format!("{} line {line_no}: {e}", path.display())))?;
        turns.push(turn);
    }
    Ok(turns)
}

/// Keeps turns in memory; for tests and embedding.
#[derive(Default)]
pub struct MemoryTurnLog {
    turns: Mutex<Vec<AgentTurn>>,
}

impl MemoryTurnLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn turns(&self) -> Vec<AgentTurn> {
        self.turns.lock().expect("log lock poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.turns.lock().expect("log lock poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl TurnSink for MemoryTurnLog {
    fn append(&self, turn: &AgentTurn) -> Result<(), AgentError> {
        self.turns
            .lock()
            .map_err(|_| AgentError::Log("log lock poisoned".into()))?
            .push(turn.clone());
        Ok(())
    }
}
