#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use coached_cli::config::AppConfig;
use coached_cli::pipeline::{index_corpus, ingest_files, load_retriever, write_corpus};
use coached_core::agent::{load_transcripts, replay_script, PromptTemplates};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures")
        .join(name)
}

pub fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_coached"));
    c.env_remove("COACHED_FAILPOINT");
    c
}

pub fn run(dir: &Path, args: &[&str], stdin: &str) -> Output {
    use std::io::Write;
    let mut child = bin()
        .current_dir(dir)
        .arg("--config")
        .arg(dir.join("coached.toml"))
        .args(args)
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

pub fn text(bytes: &[u8]) -> String {
    String::from_utf8_lossy(bytes).into_owned()
}

/// A working directory with a config that chunks the manual by headings,
/// optionally pointing at a scripted backend spec.
pub fn workspace(scripted: bool) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = format!(
        "[corpus]\npaths = [{:?}]\n\n[chunking]\nstrategy = \"document_specific\"\n\n[eval]\ntrials = {:?}\n",
        fixture("cbti_manual.md"),
        fixture("rating_trials.jsonl"),
    );
    if scripted {
        cfg.push_str("\n[backend]\nscripted_spec_path = \"replay.json\"\n");
    }
    std::fs::write(dir.path().join("coached.toml"), cfg).unwrap();
    dir
}

pub fn load_config(dir: &Path) -> AppConfig {
    AppConfig::load(Some(&dir.join("coached.toml")), &BTreeMap::new()).unwrap()
}

/// Ingest and index the manual, then write a replay script for the recorded
/// transcripts against that index.
pub fn prepared_workspace() -> tempfile::TempDir {
    let dir = workspace(true);
    let config = load_config(dir.path());
    let outcome = ingest_files(&config, &config.corpus.paths);
    assert!(outcome.errors.is_empty());
    write_corpus(&config, &outcome.documents, &outcome.chunks).unwrap();
    index_corpus(&config).unwrap();
    let retriever = load_retriever(&config).unwrap();
    let transcripts = load_transcripts(&fixture("supervisor_transcripts.json")).unwrap();
    let spec = replay_script(
        &transcripts,
        &retriever,
        &PromptTemplates::default(),
        &config.agent_config(),
        None,
    )
    .unwrap();
    spec.save(&dir.path().join("replay.json")).unwrap();
    dir
}

pub fn transcripts() -> Vec<coached_core::agent::Transcript> {
    load_transcripts(&fixture("supervisor_transcripts.json")).unwrap()
}
