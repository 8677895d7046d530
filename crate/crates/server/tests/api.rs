use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use ddx_core::eval::predict_ddx_set;
use ddx_core::model::{ModelConfig, ModelState};
use ddx_core::records::{tokenize, PathologyCatalog, Vocabulary};
use ddx_core::train::{encode_checkpoint, Checkpoint, Task};
use ddx_server::{router, AppState, LoadedModel, ServerConfig, ServerError, MAX_BODY_BYTES};
use serde_json::{json, Value};
use tower::ServiceExt;

fn checkpoint_bytes(task: Task, seed: u64) -> Vec<u8> {
    let vocab = Vocabulary::from_catalog(&PathologyCatalog::builtin());
    let model = ModelState::new(ModelConfig::new(vocab.len()), seed).unwrap();
    encode_checkpoint(&Checkpoint { model, task, history: vec![] }).unwrap()
}

fn loaded(task: Task, seed: u64) -> LoadedModel {
    LoadedModel::from_bytes(&checkpoint_bytes(task, seed), task, &PathBuf::from("mem")).unwrap()
}

fn full_state() -> Arc<AppState> {
    Arc::new(AppState::new(PathologyCatalog::builtin(), Some(loaded(Task::Pathology, 1)), Some(loaded(Task::Ddx, 2))))
}

fn app(state: Arc<AppState>) -> Router {
    router(state, None)
}

fn answers() -> Value {
    json!({
        "q1": "52", "q2": "male", "q3": "north_america",
        "q4": "chest pain, shortness of breath, sweating",
        "q5": "8, 9", "q6": "chest, left arm; 6",
        "q7": "pain started an hour ago while climbing stairs",
        "q8": "smoking, hypertension"
    })
}

async fn send(app: Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = match body {
        Some(b) => req.body(Body::from(b.to_string())).unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

fn schema(name: &str) -> Value {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../schemas");
    let mut s: Value = serde_json::from_str(&std::fs::read_to_string(dir.join(name)).unwrap()).unwrap();
    if name == "diagnosis_result.schema.json" {
        let mut inner = schema("explanation.schema.json");
        let obj = inner.as_object_mut().unwrap();
        obj.remove("$id");
        obj.remove("$schema");
        s["properties"]["explanation"] = inner;
    }
    s
}

fn assert_schema(name: &str, instance: &Value) {
    let validator = jsonschema::validator_for(&schema(name)).unwrap();
    let errors: Vec<String> = validator.iter_errors(instance).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{name}: {errors:?}");
}

#[tokio::test]
async fn diagnose_returns_sorted_probabilities_matching_the_eval_contract() {
    let state = full_state();
    let (status, body) = send(app(state.clone()), "POST", "/api/diagnose", Some(json!({ "answers": answers() }))).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_schema("diagnosis_result.schema.json", &body);

    let probs: Vec<f64> =
        body["differential"].as_array().unwrap().iter().map(|d| d["probability"].as_f64().unwrap()).collect();
    assert_eq!(probs.len(), 49);
    assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
    assert!(probs.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(body["threshold"], 0.5);

    let tok = tokenize(body["input"]["text"].as_str().unwrap(), &state.vocab, 128).unwrap();
    let logits = state.ddx.as_ref().unwrap().model.forward(&tok.ids, false).unwrap().ddx_logits;
    let expected = predict_ddx_set(&logits, 0.5).unwrap().predicted_set;
    let got: Vec<usize> = serde_json::from_value(body["predicted_ids"].clone()).unwrap();
    assert_eq!(got, expected);
    assert_eq!(body["predicted_set"].as_array().unwrap().len(), expected.len());
}

#[tokio::test]
async fn threshold_zero_predicts_every_pathology() {
    let (status, body) =
        send(app(full_state()), "POST", "/api/diagnose", Some(json!({ "answers": answers(), "threshold": 0.0 }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["predicted_set"].as_array().unwrap().len(), 49);
}

#[tokio::test]
async fn repeated_requests_are_identical() {
    let state = full_state();
    let req = json!({ "answers": answers(), "threshold": 0.35, "explain": true });
    let (_, a) = send(app(state.clone()), "POST", "/api/diagnose", Some(req.clone())).await;
    let (_, b) = send(app(state), "POST", "/api/diagnose", Some(req)).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn explain_attaches_a_schema_valid_explanation() {
    let (status, body) =
        send(app(full_state()), "POST", "/api/diagnose", Some(json!({ "answers": answers(), "explain": true }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_schema("diagnosis_result.schema.json", &body);
    let e = &body["explanation"];
    assert_schema("explanation.schema.json", e);
    let n = e["tokens"].as_array().unwrap().len();
    assert_eq!(n, body["input"]["tokens"].as_u64().unwrap() as usize);
    assert_eq!(e["layers"].as_array().unwrap().len(), 3);
    for layer in e["layers"].as_array().unwrap() {
        for head in layer["heads"].as_array().unwrap() {
            assert_eq!(head.as_array().unwrap().len(), n);
        }
    }
}

#[tokio::test]
async fn invalid_age_is_a_field_level_400() {
    let mut a = answers();
    a["q1"] = json!("thirty");
    let (status, body) = send(app(full_state()), "POST", "/api/diagnose", Some(json!({ "answers": a }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_schema("error.schema.json", &body);
    assert_eq!(body["fields"], json!([{ "field": "q1", "reason": "not an integer 0–120" }]));
}

#[tokio::test]
async fn missing_key_and_bad_threshold_are_named() {
    let mut a = answers();
    a.as_object_mut().unwrap().remove("q5");
    let (status, body) =
        send(app(full_state()), "POST", "/api/diagnose", Some(json!({ "answers": a, "threshold": 1.5 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let fields: Vec<&str> = body["fields"].as_array().unwrap().iter().map(|f| f["field"].as_str().unwrap()).collect();
    assert_eq!(fields, vec!["threshold", "q5"]);
}

#[tokio::test]
async fn malformed_and_oversize_bodies() {
    let req = Request::post("/api/diagnose").body(Body::from("{not json")).unwrap();
    let resp = app(full_state()).oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);

    let mut a = answers();
    a["q7"] = json!("x".repeat(MAX_BODY_BYTES + 1));
    let (status, body) = send(app(full_state()), "POST", "/api/diagnose", Some(json!({ "answers": a }))).await;
    assert_eq!(status, StatusCode::PAYLOAD_TOO_LARGE);
    assert_schema("error.schema.json", &body);

    let (status, _) =
        send(app(full_state()), "POST", "/api/diagnose", Some(json!({ "answers": answers(), "extra": 1 }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn missing_model_gives_503_everywhere() {
    let state = Arc::new(AppState::new(PathologyCatalog::builtin(), Some(loaded(Task::Pathology, 1)), None));
    let (status, body) = send(app(state.clone()), "POST", "/api/diagnose", Some(json!({ "answers": answers() }))).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_schema("error.schema.json", &body);
    let (status, body) = send(app(state), "GET", "/health", None).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert_schema("health.schema.json", &body);
    assert_eq!(body["status"], "unavailable");
    assert!(body["missing"][0].as_str().unwrap().contains("ddx checkpoint"));
}

#[tokio::test]
async fn health_reports_ids_and_monotone_uptime() {
    let state = full_state();
    let (status, first) = send(app(state.clone()), "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_schema("health.schema.json", &first);
    assert_eq!(first["status"], "ok");
    assert_eq!(first["checkpoints"]["ddx"].as_str().unwrap().len(), 16);
    let (_, second) = send(app(state), "GET", "/health", None).await;
    assert!(second["uptime_seconds"].as_f64() >= first["uptime_seconds"].as_f64());
}

#[tokio::test]
async fn pathology_list_mirrors_the_catalog() {
    let (status, body) = send(app(full_state()), "GET", "/api/pathologies", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_schema("pathologies.schema.json", &body);
    let raw: Value = serde_json::from_str(PathologyCatalog::builtin_json()).unwrap();
    let list = body.as_array().unwrap();
    assert_eq!(list.len(), 49);
    for (i, entry) in list.iter().enumerate() {
        assert_eq!(entry["id"], i);
        assert_eq!(entry["label"], raw["pathologies"][i]["name"]);
    }
}

#[tokio::test]
async fn concurrent_requests_match_serial_ones() {
    let state = full_state();
    let bodies: Vec<Value> = (0..8)
        .map(|i| {
            let mut a = answers();
            a["q1"] = json!((20 + 7 * i).to_string());
            json!({ "answers": a, "threshold": 0.1 * i as f64 })
        })
        .collect();
    let mut serial = Vec::new();
    for b in &bodies {
        serial.push(send(app(state.clone()), "POST", "/api/diagnose", Some(b.clone())).await.1);
    }
    let handles: Vec<_> = bodies
        .iter()
        .cloned()
        .map(|b| {
            let state = state.clone();
            tokio::spawn(async move { send(app(state), "POST", "/api/diagnose", Some(b)).await.1 })
        })
        .collect();
    for (h, expected) in handles.into_iter().zip(serial) {
        assert_eq!(h.await.unwrap(), expected);
    }
}

#[tokio::test]
async fn static_files_are_served_from_the_configured_directory() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<h1>form</h1>").unwrap();
    let app = router(full_state(), Some(dir.path()));
    let resp = app.oneshot(Request::get("/index.html").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(to_bytes(resp.into_body(), 1024).await.unwrap(), "<h1>form</h1>");
}

#[test]
fn loading_reports_missing_files_and_rejects_mismatched_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let path_ckpt = dir.path().join("pathology.ckpt");
    std::fs::write(&path_ckpt, checkpoint_bytes(Task::Pathology, 1)).unwrap();
    let config = ServerConfig {
        pathology_checkpoint: Some(path_ckpt.clone()),
        ddx_checkpoint: Some(dir.path().join("absent.ckpt")),
        ..Default::default()
    };
    let state = AppState::load(&config).unwrap();
    assert!(state.pathology.is_some() && state.ddx.is_none());
    assert_eq!(state.missing.len(), 1);
    assert!(state.missing[0].contains("absent.ckpt"));

    let swapped = ServerConfig { ddx_checkpoint: Some(path_ckpt), ..config };
    assert!(matches!(AppState::load(&swapped), Err(ServerError::TaskMismatch { .. })));

    let bad = ServerConfig { default_threshold: Some(2.0), pathology_checkpoint: None, ..Default::default() };
    assert!(matches!(AppState::load(&bad), Err(ServerError::Threshold(_))));
}

#[test]
fn rendered_answers_are_schema_valid_submissions() {
    let catalog = PathologyCatalog::builtin();
    let raw: BTreeMap<String, String> = serde_json::from_value(answers()).unwrap();
    let normalized = ddx_server::validate_and_normalize(&raw, &catalog).unwrap();
    let rendered = ddx_server::render_answers(&normalized);
    assert_schema("questionnaire.schema.json", &json!({ "answers": rendered }));
}
