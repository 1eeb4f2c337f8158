//! Application configuration: a TOML file, then `COACHED_<SECTION>_<KEY>`
//! environment overrides, then built-in defaults for anything left unset.
//!
//! Relative paths are resolved against the directory holding the config
//! file (the working directory when no file is given).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use coached_core::agent::AgentConfig;
use coached_core::ingest::ChunkingPolicy;
use coached_core::llm::{DEFAULT_MAX_TOKENS, DEFAULT_RETRY_MAX};
use coached_core::retrieval::DEFAULT_MIN_SCORE;
use coached_eval::TTestVariant;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const ENV_PREFIX: &str = "COACHED_";

const SECTIONS: [&str; 8] = [
    "corpus",
    "chunking",
    "retrieval",
    "backend",
    "templates",
    "logs",
    "eval",
    "server",
];

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub corpus: CorpusConfig,
    pub chunking: ChunkingPolicy,
    pub retrieval: RetrievalConfig,
    pub backend: BackendConfig,
    pub templates: TemplatesConfig,
    pub logs: LogsConfig,
    pub eval: EvalConfig,
    pub server: ServerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Input files read by `ingest` when none are given on the command line.
    pub paths: Vec<PathBuf>,
    /// Normalized documents written by `ingest`.
    pub documents: PathBuf,
    /// Chunks written by `ingest` and read by `index`.
    pub chunks: PathBuf,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            paths: Vec::new(),
            documents: "data/documents.jsonl".into(),
            chunks: "data/chunks.jsonl".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub k: usize,
    pub min_score: f64,
    /// Index file. The fitted TF-IDF model sits next to it as `*.tfidf.json`.
    pub index: PathBuf,
    pub segment_by_session: bool,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: coached_core::agent::DEFAULT_K,
            min_score: DEFAULT_MIN_SCORE,
            index: "data/index.jsonl".into(),
            segment_by_session: false,
        }
    }
}

impl RetrievalConfig {
    pub fn model_path(&self) -> PathBuf {
        self.index.with_extension("tfidf.json")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    /// OpenAI-compatible server root, e.g. `http://localhost:8000`.
    pub base_url: Option<String>,
    /// Scripted backend spec (JSON). Mutually exclusive with `base_url`.
    pub scripted_spec_path: Option<PathBuf>,
    pub api_key: Option<String>,
    pub model_id: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub retry_max: u32,
    pub timeout_secs: u64,
    pub max_in_flight: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            base_url: None,
            scripted_spec_path: None,
            api_key: None,
            model_id: "local".into(),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            retry_max: DEFAULT_RETRY_MAX,
            timeout_secs: 120,
            max_in_flight: coached_core::llm::DEFAULT_MAX_IN_FLIGHT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TemplatesConfig {
    /// TOML or JSON prompt templates. Built-in templates when unset.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogsConfig {
    /// Append-only turn log.
    pub turns: PathBuf,
    /// Sessions created through the HTTP service.
    pub sessions: PathBuf,
}

impl Default for LogsConfig {
    fn default() -> Self {
        Self {
            turns: "data/turns.jsonl".into(),
            sessions: "data/sessions.jsonl".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub seed: u64,
    pub trials: PathBuf,
    pub presentations: PathBuf,
    pub ratings: PathBuf,
    pub report: PathBuf,
    pub raters: Vec<String>,
    /// Trials per rater, assigned in contiguous blocks. Every rater sees every
    /// trial when unset.
    pub per_rater: Option<usize>,
    pub t_test: TTestVariant,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            trials: "data/trials.jsonl".into(),
            presentations: "data/presentations.jsonl".into(),
            ratings: "data/ratings.jsonl".into(),
            report: "data/report.json".into(),
            raters: vec!["r1".into(), "r2".into()],
            per_rater: None,
            t_test: TTestVariant::Welch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    pub port: u16,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
        }
    }
}

impl AppConfig {
    /// Load `path` (if any), apply overrides from `env`, validate, and make
    /// relative paths absolute.
    pub fn load(path: Option<&Path>, env: &BTreeMap<String, String>) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let raw = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&raw).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        if let Err(e) = table.clone().try_into::<AppConfig>() {
            let origin = path.map(|p| p.display().to_string()).unwrap_or_default();
            return Err(CliError::Config(format!("{origin}: {}", e.to_string().trim())));
        }
        for (var, raw) in env {
            let Some((section, key)) = split_env_var(var) else {
                continue;
            };
            apply_override(&mut table, var, section, &key, raw)?;
        }
        let mut config: AppConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        config.validate()?;
        let base = match path.and_then(Path::parent) {
            Some(dir) if !dir.as_os_str().is_empty() => dir.to_path_buf(),
            _ => std::env::current_dir().map_err(|e| CliError::Io(e.to_string()))?,
        };
        config.resolve_paths(&base);
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.backend.base_url.is_some() && self.backend.scripted_spec_path.is_some() {
            return Err(CliError::Config(
                "backend.base_url and backend.scripted_spec_path are mutually exclusive".into(),
            ));
        }
        if self.retrieval.k == 0 {
            return Err(CliError::Config("retrieval.k must be positive".into()));
        }
        if !(-1.0..=1.0).contains(&self.retrieval.min_score) {
            return Err(CliError::Config("retrieval.min_score must lie in [-1, 1]".into()));
        }
        self.chunking
            .validate()
            .map_err(|e| CliError::Config(format!("chunking: {e}")))?;
        if self.eval.raters.is_empty() {
            return Err(CliError::Config("eval.raters is empty".into()));
        }
        Ok(())
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.corpus.paths.iter_mut().for_each(fix);
        fix(&mut self.corpus.documents);
        fix(&mut self.corpus.chunks);
        fix(&mut self.retrieval.index);
        if let Some(p) = self.backend.scripted_spec_path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.templates.path.as_mut() {
            fix(p);
        }
        fix(&mut self.logs.turns);
        fix(&mut self.logs.sessions);
        fix(&mut self.eval.trials);
        fix(&mut self.eval.presentations);
        fix(&mut self.eval.ratings);
        fix(&mut self.eval.report);
    }

    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            k: self.retrieval.k,
            min_score: self.retrieval.min_score,
            model_id: self.backend.model_id.clone(),
            temperature: self.backend.temperature,
            max_tokens: self.backend.max_tokens,
            segment_by_session: self.retrieval.segment_by_session,
        }
    }
}

/// `COACHED_RETRIEVAL_MIN_SCORE` → (`retrieval`, `min_score`). Variables
/// whose first word is not a config section are not overrides.
fn split_env_var(var: &str) -> Option<(&'static str, String)> {
    let rest = var.strip_prefix(ENV_PREFIX)?.to_ascii_lowercase();
    let (section, key) = rest.split_once('_')?;
    let section = SECTIONS.iter().find(|s| **s == section)?;
    (!key.is_empty()).then(|| (*section, key.to_string()))
}

/// Set `table[section][key]`, reading `raw` as a TOML value when the result
/// still deserializes and as a plain string otherwise (so `MODEL_ID=7b`
/// and `API_KEY=123` both work).
fn apply_override(table: &mut toml::Table, var: &str, section: &str, key: &str, raw: &str) -> Result<(), CliError> {
    let mut candidates = Vec::new();
    if let Ok(parsed) = format!("v = {raw}").parse::<toml::Table>() {
        if let Some(v) = parsed.get("v") {
            candidates.push(v.clone());
        }
    }
    candidates.push(toml::Value::String(raw.to_string()));
    let mut last_err = String::new();
    for value in candidates {
        let mut trial = table.clone();
        let entry = trial
            .entry(section.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        let Some(sec) = entry.as_table_mut() else {
            return Err(CliError::Config(format!("{section} is not a table")));
        };
        sec.insert(key.to_string(), value);
        match trial.clone().try_into::<AppConfig>() {
            Ok(_) => {
                *table = trial;
                return Ok(());
            }
            Err(e) => last_err = e.to_string(),
        }
    }
    Err(CliError::Config(format!("{var}: {}", last_err.trim())))
}

/// The process environment, for [`AppConfig::load`].
pub fn process_env() -> BTreeMap<String, String> {
    std::env::vars().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect()
}
