mod common;

use std::collections::BTreeMap;

use common::{fixture, prepared_workspace, run, text, transcripts, workspace};

#[test]
fn ingest_is_deterministic_and_survives_a_bad_input() {
    let dir = workspace(false);
    let missing = dir.path().join("missing.md");
    let manual = fixture("cbti_manual.md");
    let args = ["ingest", manual.to_str().unwrap(), missing.to_str().unwrap()];

    let first = run(dir.path(), &args, "");
    assert!(first.status.success(), "{}", text(&first.stderr));
    let stderr = text(&first.stderr);
    assert_eq!(
        stderr.lines().filter(|l| l.starts_with("error:")).count(),
        1,
        "{stderr}"
    );
    assert!(stderr.contains("missing.md"));
    assert!(text(&first.stdout).contains("documents: 1"));
    let chunks = std::fs::read(dir.path().join("data/chunks.jsonl")).unwrap();

    let second = run(dir.path(), &args, "");
    assert!(second.status.success());
    assert_eq!(std::fs::read(dir.path().join("data/chunks.jsonl")).unwrap(), chunks);

    let none = run(dir.path(), &["ingest", missing.to_str().unwrap()], "");
    assert!(!none.status.success());
}

#[test]
fn index_is_byte_identical_and_reports_missing_chunks() {
    let dir = workspace(false);
    let missing = run(dir.path(), &["index"], "");
    assert!(!missing.status.success());
    assert!(
        text(&missing.stderr).contains("chunks.jsonl"),
        "{}",
        text(&missing.stderr)
    );

    assert!(run(dir.path(), &["ingest"], "").status.success());
    let a = run(dir.path(), &["index"], "");
    assert!(a.status.success(), "{}", text(&a.stderr));
    assert!(text(&a.stdout).contains("entries: "));
    let index = std::fs::read(dir.path().join("data/index.jsonl")).unwrap();
    let model = std::fs::read(dir.path().join("data/index.tfidf.json")).unwrap();
    assert!(run(dir.path(), &["index"], "").status.success());
    assert_eq!(std::fs::read(dir.path().join("data/index.jsonl")).unwrap(), index);
    assert_eq!(std::fs::read(dir.path().join("data/index.tfidf.json")).unwrap(), model);
}

#[test]
fn chat_replays_the_recorded_transcripts() {
    let dir = prepared_workspace();
    let ts = transcripts();
    let input: String = ts.iter().map(|t| format!("{}\n\n", t.query)).collect();
    let out = run(dir.path(), &["chat", "--session", "replay"], &input);
    assert!(out.status.success(), "{}", text(&out.stderr));
    let lines: Vec<String> = text(&out.stdout).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 10, "{lines:?}");

    // the nap answer was approved, so the draft ships unchanged
    let nap = ts.iter().position(|t| t.query_no == Some(6)).unwrap();
    assert_eq!(lines[nap], ts[nap].therapist_response);
    // the worry answer was rejected, so the draft never reaches the patient
    assert_ne!(lines[0], ts[0].therapist_response);
    assert!(lines[0].starts_with("To stop worrying during the day"));
    for line in &lines {
        assert!(!line.contains("Supervisor feedback"), "{line}");
    }

    let turns = coached_core::agent::read_turn_log(&dir.path().join("data/turns.jsonl")).unwrap();
    assert_eq!(turns.len(), 10);
    assert_eq!(turns[9].turn_id, "replay:10");
}

#[test]
fn chat_trace_shows_the_supervisor_view() {
    let dir = prepared_workspace();
    let ts = transcripts();
    let out = run(dir.path(), &["chat", "--trace"], &format!("{}\n", ts[0].query));
    assert!(out.status.success(), "{}", text(&out.stderr));
    let stdout = text(&out.stdout);
    assert!(stdout.contains("--- trace "));
    assert!(stdout.contains("verdict: Rejected"), "{stdout}");
    assert!(stdout.contains(&format!("draft: {}", ts[0].therapist_response)));
    assert!(stdout.contains("feedback: Therapist's RESPONSE seems to be wrong."));
    assert!(stdout.contains("context [1] "));
    let final_line = stdout.lines().last().unwrap();
    assert!(final_line.starts_with("To stop worrying during the day"));
}

#[test]
fn chat_falls_back_when_the_script_has_no_reply() {
    let dir = prepared_workspace();
    let out = run(
        dir.path(),
        &["chat"],
        "How do I keep a sleep diary and what should go in it each morning?\n",
    );
    assert!(out.status.success(), "{}", text(&out.stderr));
    let reply = text(&out.stdout);
    assert_eq!(reply.lines().count(), 1);
    assert!(text(&out.stderr).contains("warning:"), "{}", text(&out.stderr));
    assert!(text(&out.stderr).contains("fallback"));
}

#[test]
fn chat_without_a_backend_is_a_config_error() {
    let dir = workspace(false);
    assert!(run(dir.path(), &["ingest"], "").status.success());
    assert!(run(dir.path(), &["index"], "").status.success());
    let out = run(dir.path(), &["chat"], "hello\n");
    assert!(!out.status.success());
    assert!(text(&out.stderr).contains("no backend configured"));
}

#[test]
fn eval_workflow_from_presentations_to_report() {
    let dir = workspace(false);
    let build = run(dir.path(), &["eval", "build-trials", "--seed", "7"], "");
    assert!(build.status.success(), "{}", text(&build.stderr));
    assert!(text(&build.stdout).contains("r1: 10 presentations"));
    assert!(text(&build.stdout).contains("r2: 10 presentations"));
    let presentations = std::fs::read(dir.path().join("data/presentations.jsonl")).unwrap();
    assert!(run(dir.path(), &["eval", "build-trials", "--seed", "7"], "")
        .status
        .success());
    assert_eq!(
        std::fs::read(dir.path().join("data/presentations.jsonl")).unwrap(),
        presentations
    );

    let next = run(dir.path(), &["eval", "next", "--rater", "r1"], "");
    assert!(next.status.success());
    let next_json = text(&next.stdout);
    for token in ["vsc", "appropriate", "source", "permutation"] {
        assert!(
            !next_json.contains(&format!("\"{token}\"")),
            "{token} leaked: {next_json}"
        );
    }
    let first: serde_json::Value = serde_json::from_str(&next_json).unwrap();
    let trial = first["item"]["trial_id"].as_str().unwrap().to_string();

    let bad = run(
        dir.path(),
        &[
            "eval",
            "submit",
            "--rater",
            "r1",
            "--trial",
            &trial,
            "--position",
            "0",
            "--score",
            "6",
        ],
        "",
    );
    assert!(!bad.status.success());
    assert!(text(&bad.stderr).contains("score 6"));

    // rate every trial with the fixture scores, looking positions up in the
    // presentations file the way an operator with the key would
    let mut scores: BTreeMap<(String, String), u8> = BTreeMap::new();
    for line in std::fs::read_to_string(fixture("rating_scores.jsonl")).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        scores.insert(
            (
                v["trial_id"].as_str().unwrap().into(),
                v["source"].as_str().unwrap().into(),
            ),
            v["score"].as_u64().unwrap() as u8,
        );
    }
    for line in String::from_utf8(presentations).unwrap().lines() {
        let p: serde_json::Value = serde_json::from_str(line).unwrap();
        if p["rater_id"] != "r1" {
            continue;
        }
        let trial = p["trial_id"].as_str().unwrap();
        for (pos, source) in p["position_sources"].as_array().unwrap().iter().enumerate() {
            let score = scores[&(trial.to_string(), source.as_str().unwrap().to_string())].to_string();
            let pos = pos.to_string();
            let out = run(
                dir.path(),
                &[
                    "eval",
                    "submit",
                    "--rater",
                    "r1",
                    "--trial",
                    trial,
                    "--position",
                    &pos,
                    "--score",
                    &score,
                ],
                "",
            );
            assert!(out.status.success(), "{}", text(&out.stderr));
        }
    }
    let dup = run(
        dir.path(),
        &[
            "eval",
            "submit",
            "--rater",
            "r1",
            "--trial",
            &trial,
            "--position",
            "0",
            "--score",
            "3",
        ],
        "",
    );
    assert!(!dup.status.success());

    let done: serde_json::Value =
        serde_json::from_slice(&run(dir.path(), &["eval", "next", "--rater", "r1"], "").stdout).unwrap();
    assert_eq!(done["complete"], true);
    assert_eq!(done["rated_trials"], 10);

    let report = run(dir.path(), &["eval", "report"], "");
    assert!(report.status.success(), "{}", text(&report.stderr));
    let r: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("data/report.json")).unwrap()).unwrap();
    assert!((r["per_source"]["vsc"]["mean"].as_f64().unwrap() - 4.3).abs() < 1e-12);
    assert!((r["per_source"]["appropriate"]["mean"].as_f64().unwrap() - 3.9).abs() < 1e-12);
    assert!((r["per_source"]["inappropriate"]["mean"].as_f64().unwrap() - 1.4).abs() < 1e-12);

    let csv = run(dir.path(), &["eval", "report", "--format", "csv", "--pooled"], "");
    assert!(csv.status.success());
    let body = std::fs::read_to_string(dir.path().join("data/report.csv")).unwrap();
    assert!(body.starts_with("source,statistic,value\n"));
    assert!(body.contains("vsc,mean,4.3\n"), "{body}");
}
