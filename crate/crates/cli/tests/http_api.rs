mod common;

use std::net::SocketAddr;
use std::sync::Arc;

use coached_cli::config::AppConfig;
use coached_cli::server::{serve, Service};
use coached_core::llm::ScriptedBackendSpec;
use common::{fixture, load_config, prepared_workspace, transcripts};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

struct Server {
    base: String,
    client: Client,
    _dir: tempfile::TempDir,
}

impl Server {
    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn post(&self, path: &str, body: &Value) -> (StatusCode, Value) {
        let r = self.client.post(self.url(path)).json(body).send().unwrap();
        let status = r.status();
        (status, r.json().unwrap_or(Value::Null))
    }

    fn get(&self, path: &str) -> (StatusCode, Value) {
        let r = self.client.get(self.url(path)).send().unwrap();
        let status = r.status();
        (status, r.json().unwrap_or(Value::Null))
    }

    fn session(&self, tag: Option<&str>) -> String {
        let (status, body) = self.post("/v1/sessions", &json!({ "session_tag": tag }));
        assert_eq!(status, StatusCode::CREATED);
        body["session_id"].as_str().unwrap().to_string()
    }
}

fn start(config: AppConfig, dir: tempfile::TempDir) -> Server {
    let service = Arc::new(Service::open(config).unwrap());
    let (tx, rx) = std::sync::mpsc::channel::<SocketAddr>();
    std::thread::spawn(move || {
        let addr: SocketAddr = "127.0.0.1:0".parse().unwrap();
        serve(service, addr, move |local| tx.send(local).unwrap()).unwrap();
    });
    let addr = rx.recv().unwrap();
    Server {
        base: format!("http://{addr}"),
        client: Client::new(),
        _dir: dir,
    }
}

fn replay_server() -> Server {
    let dir = prepared_workspace();
    let config = load_config(dir.path());
    start(config, dir)
}

const SUPERVISOR_WORDS: [&str; 4] = ["draft", "verdict", "feedback", "Supervisor"];

#[test]
fn patient_replies_carry_only_the_final_response() {
    let s = replay_server();
    // the replay script was recorded without a session tag
    let id = s.session(None);
    let ts = transcripts();
    for (i, t) in ts.iter().enumerate() {
        let (status, body) = s.post(&format!("/v1/sessions/{id}/messages"), &json!({ "query": t.query }));
        assert_eq!(status, StatusCode::OK, "{body}");
        let keys: Vec<&String> = body.as_object().unwrap().keys().collect();
        assert_eq!(keys, ["degraded", "final_response", "session_id", "turn_id"]);
        assert_eq!(body["turn_id"], format!("{id}:{}", i + 1));
        let raw = body.to_string();
        for w in SUPERVISOR_WORDS {
            assert!(!raw.contains(w), "{w} leaked: {raw}");
        }
        if t.query_no == Some(1) {
            assert_ne!(body["final_response"], t.therapist_response.as_str());
        }
        if t.query_no == Some(6) {
            assert_eq!(body["final_response"], t.therapist_response.as_str());
        }
    }

    let (status, trace) = s.get(&format!("/v1/sessions/{id}/trace"));
    assert_eq!(status, StatusCode::OK);
    assert_eq!(trace["session"]["turn_count"], 10);
    assert_eq!(trace["session"]["session_tag"], Value::Null);
    let turns = trace["turns"].as_array().unwrap();
    assert_eq!(turns.len(), 10);
    let first = &turns[0];
    assert_eq!(first["therapist_draft"], ts[0].therapist_response.as_str());
    assert_eq!(first["verdict"]["kind"], "Rejected");
    assert!(!first["hits"].as_array().unwrap().is_empty());
    assert!(first["timestamps"].is_object());
}

#[test]
fn request_errors_map_to_client_statuses() {
    let s = replay_server();
    let id = s.session(Some("intro"));
    let (status, _) = s.post("/v1/sessions/nope/messages", &json!({ "query": "hi" }));
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = s.get("/v1/sessions/nope/trace");
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = s.post(&format!("/v1/sessions/{id}/messages"), &json!({ "query": "   " }));
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = s.post(&format!("/v1/sessions/{id}/messages"), &json!({ "text": "hi" }));
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = s.get("/v1/search");
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = s.get("/v1/search?q=nap&k=0");
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = s.get("/v1/eval/next?rater=nobody");
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = s.post("/v1/ingest", &json!({ "documents": [] }));
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[test]
fn backend_failure_returns_the_fallback_with_503() {
    let dir = prepared_workspace();
    let empty = ScriptedBackendSpec::Map {
        entries: Default::default(),
    };
    empty.save(&dir.path().join("replay.json")).unwrap();
    let config = load_config(dir.path());
    let turns_path = config.logs.turns.clone();
    let s = start(config, dir);
    let id = s.session(Some("intro"));
    let (status, body) = s.post(
        &format!("/v1/sessions/{id}/messages"),
        &json!({ "query": "Is it OK to take a nap during the day?" }),
    );
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_eq!(body["degraded"], true);
    assert!(!body["final_response"].as_str().unwrap().is_empty());
    let logged = coached_core::agent::read_turn_log(&turns_path).unwrap();
    assert_eq!(logged.len(), 1);
    assert_eq!(logged[0].final_response, body["final_response"].as_str().unwrap());
}

#[test]
fn search_and_ingest() {
    let s = replay_server();
    let (status, body) = s.get("/v1/search?q=nap%20during%20the%20day&k=3");
    assert_eq!(status, StatusCode::OK);
    let hits = body["hits"].as_array().unwrap();
    assert!(!hits.is_empty() && hits.len() <= 3);
    let scores: Vec<f64> = hits.iter().map(|h| h["score"].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));

    let (status, _) = s.get("/v1/search?q=zebrafish%20aquarium");
    assert_eq!(status, StatusCode::OK);

    let doc = json!({ "documents": [{
        "doc_id": "aquarium",
        "title": "Aquarium care",
        "body": "# Aquarium\n\nZebrafish aquarium water should be changed weekly. Zebrafish like warm water.",
        "format": "markdown"
    }]});
    let (status, body) = s.post("/v1/ingest", &doc);
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["documents_added"], 1);
    assert_eq!(body["documents"], 2);
    let (_, found) = s.get("/v1/search?q=zebrafish%20aquarium&k=1");
    assert_eq!(found["hits"][0]["chunk_id"], "aquarium#0", "{found}");

    // re-ingesting the same id replaces rather than duplicates
    let (_, again) = s.post("/v1/ingest", &doc);
    assert_eq!(again["documents"], 2);
}

#[test]
fn rating_api_stays_blind() {
    let dir = prepared_workspace();
    std::fs::copy(fixture("rating_trials.jsonl"), dir.path().join("trials.jsonl")).unwrap();
    let s = replay_server_with(dir);
    let (status, next) = s.get("/v1/eval/next?rater=r2");
    assert_eq!(status, StatusCode::OK);
    let raw = next.to_string().to_lowercase();
    for token in ["vsc", "appropriate", "inappropriate", "source", "permutation", "seed"] {
        assert!(!raw.contains(token), "{token} leaked: {raw}");
    }
    let trial = next["item"]["trial_id"].as_str().unwrap().to_string();
    let items = next["item"]["items"].as_array().unwrap();
    assert_eq!(items.len(), 3);

    let rating =
        |pos: usize, score: i64| json!({ "rater_id": "r2", "trial_id": trial, "position": pos, "score": score });
    let (status, ack) = s.post("/v1/eval/ratings", &rating(0, 4));
    assert_eq!(status, StatusCode::CREATED, "{ack}");
    assert!(!ack.to_string().to_lowercase().contains("vsc"));
    let (status, _) = s.post("/v1/eval/ratings", &rating(0, 4));
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = s.post("/v1/eval/ratings", &rating(1, 0));
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = s.post("/v1/eval/ratings", &rating(7, 3));
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (_, next) = s.get("/v1/eval/next?rater=r2");
    assert_eq!(next["item"]["unrated_positions"], json!([1, 2]));

    let (status, report) = s.get("/v1/eval/report?t_test=pooled");
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report["n_ratings"], 1);
    assert_eq!(report["t_test_variant"], "pooled");
}

fn replay_server_with(dir: tempfile::TempDir) -> Server {
    let mut config = load_config(dir.path());
    config.eval.trials = dir.path().join("trials.jsonl");
    start(config, dir)
}
