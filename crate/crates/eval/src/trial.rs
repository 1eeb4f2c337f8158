use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::EvalError;

/// Who wrote a candidate response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Vsc,
    Appropriate,
    Inappropriate,
}

impl Source {
    pub const ALL: [Source; 3] = [Source::Vsc, Source::Appropriate, Source::Inappropriate];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Vsc => "vsc",
            Source::Appropriate => "appropriate",
            Source::Inappropriate => "inappropriate",
        }
    }
}

impl std::fmt::Display for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionTag {
    Intro,
    Diary,
    StimulusControl,
    SleepRestriction,
    Relaxation,
    Cognitive,
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateResponse {
    pub source: Source,
    pub text: String,
    pub length_chars: usize,
}

impl CandidateResponse {
    pub fn new(source: Source, text: impl Into<String>) -> Self {
        let text = text.into();
        Self {
            source,
            length_chars: text.chars().count(),
            text,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: String,
    pub query: String,
    pub session_tag: SessionTag,
    pub responses: Vec<CandidateResponse>,
}

impl Trial {
    pub fn response(&self, source: Source) -> Option<&CandidateResponse> {
        self.responses.iter().find(|r| r.source == source)
    }
}

/// One line of a trial bank file. Lengths are derived, never read.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: String,
    pub query: String,
    pub session_tag: SessionTag,
    pub responses: Vec<ResponseRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub source: Source,
    pub text: String,
}

impl From<&Trial> for TrialRecord {
    fn from(t: &Trial) -> Self {
        Self {
            trial_id: t.trial_id.clone(),
            query: t.query.clone(),
            session_tag: t.session_tag,
            responses: t
                .responses
                .iter()
                .map(|r| ResponseRecord {
                    source: r.source,
                    text: r.text.clone(),
                })
                .collect(),
        }
    }
}

impl TrialRecord {
    fn into_trial(self) -> Result<Trial, String> {
        if self.trial_id.trim().is_empty() {
            return Err("empty trial_id".into());
        }
        if self.responses.len() != 3 {
            return Err(format!("expected 3 responses, found {}", self.responses.len()));
        }
        for source in Source::ALL {
            match self.responses.iter().filter(|r| r.source == source).count() {
                1 => {}
                0 => return Err(format!("missing source {source}")),
                n => return Err(format!("source {source} appears {n} times")),
            }
        }
        if let Some(r) = self.responses.iter().find(|r| r.text.trim().is_empty()) {
            return Err(format!("empty {} response", r.source));
        }
        Ok(Trial {
            trial_id: self.trial_id,
            query: self.query,
            session_tag: self.session_tag,
            responses: self
                .responses
                .into_iter()
                .map(|r| CandidateResponse::new(r.source, r.text))
                .collect(),
        })
    }
}

/// Parse a line-delimited trial bank. Blank lines are skipped.
pub fn parse_trial_bank<R: BufRead>(reader: R) -> Result<Vec<Trial>, EvalError> {
    let mut trials = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrialRecord = serde_json::from_str(&line).map_err(|e| {
            // name the record by id when the line is at least valid JSON
            let id = serde_json::from_str::<serde_json::Value>(&line)
                .ok()
                .and_then(|v| v.get("trial_id").and_then(|t| t.as_str()).map(str::to_string));
            EvalError::Validation {
                record: id.unwrap_or_else(|| format!("line {}", i + 1)),
                reason: e.to_string(),
            }
        })?;
        let id = record.trial_id.clone();
        let trial = record.into_trial().map_err(|reason| EvalError::Validation {
            record: id.clone(),
            reason,
        })?;
        if !seen.insert(id.clone()) {
            return Err(EvalError::Validation {
                record: id,
                reason: "duplicate trial_id".into(),
            });
        }
        trials.push(trial);
    }
    Ok(trials)
}

pub fn load_trial_bank(path: &Path) -> Result<Vec<Trial>, EvalError> {
    let file = std::fs::File::open(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    parse_trial_bank(std::io::BufReader::new(file))
}

/// Number of trials per session tag.
pub fn session_distribution(trials: &[Trial]) -> BTreeMap<SessionTag, usize> {
    let mut out = BTreeMap::new();
    for t in trials {
        *out.entry(t.session_tag).or_default() += 1;
    }
    out
}
