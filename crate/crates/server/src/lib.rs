//! HTTP inference service: questionnaire in, pathology and differential
//! probabilities out.

pub mod questionnaire;
mod routes;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ddx_core::eval::{argmax, predict_ddx_set};
use ddx_core::explain::{trace_attention, Explanation};
use ddx_core::model::ModelState;
use ddx_core::numerics::softmax;
use ddx_core::records::{serialize_answers, tokenize, Answers, PathologyCatalog, Vocabulary};
use ddx_core::train::{decode_checkpoint, Task};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use questionnaire::{render_answers, validate_and_normalize, FieldError, Submission, QUESTION_KEYS};
pub use routes::{router, MAX_BODY_BYTES};

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_THRESHOLD: f32 = 0.5;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("{path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("{path} holds a {found} checkpoint, expected {expected}")]
    TaskMismatch { path: PathBuf, expected: Task, found: Task },
    #[error("catalog: {0}")]
    Catalog(String),
    #[error("default threshold {0} outside [0, 1]")]
    Threshold(f32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A checkpoint ready for inference.
pub struct LoadedModel {
    pub model: ModelState,
    /// First 16 hex digits of the SHA-256 of the checkpoint bytes.
    pub id: String,
}

impl LoadedModel {
    pub fn from_bytes(bytes: &[u8], expected: Task, path: &Path) -> Result<Self, ServerError> {
        let ckpt = decode_checkpoint(bytes)
            .map_err(|e| ServerError::Checkpoint { path: path.to_path_buf(), message: e.to_string() })?;
        if ckpt.task != expected {
            return Err(ServerError::TaskMismatch { path: path.to_path_buf(), expected, found: ckpt.task });
        }
        Ok(Self { model: ckpt.model, id: checkpoint_id(bytes) })
    }
}

pub fn checkpoint_id(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Default)]
pub struct ServerConfig {
    pub port: u16,
    pub pathology_checkpoint: Option<PathBuf>,
    pub ddx_checkpoint: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub default_threshold: Option<f32>,
    pub static_dir: Option<PathBuf>,
}

/// Read-only state shared by every request.
pub struct AppState {
    pub catalog: PathologyCatalog,
    pub vocab: Vocabulary,
    pub pathology: Option<LoadedModel>,
    pub ddx: Option<LoadedModel>,
    /// Human-readable names of artifacts that could not be found.
    pub missing: Vec<String>,
    pub default_threshold: f32,
    started: Instant,
}

impl AppState {
    pub fn new(catalog: PathologyCatalog, pathology: Option<LoadedModel>, ddx: Option<LoadedModel>) -> Self {
        let mut missing = Vec::new();
        if pathology.is_none() {
            missing.push("pathology checkpoint".to_string());
        }
        if ddx.is_none() {
            missing.push("ddx checkpoint".to_string());
        }
        Self {
            vocab: Vocabulary::from_catalog(&catalog),
            catalog,
            pathology,
            ddx,
            missing,
            default_threshold: DEFAULT_THRESHOLD,
            started: Instant::now(),
        }
    }

    /// Missing checkpoint files leave the service up but unavailable;
    /// unreadable or mismatched ones are errors.
    pub fn load(config: &ServerConfig) -> Result<Self, ServerError> {
        let catalog = match &config.catalog {
            Some(p) => PathologyCatalog::load(p).map_err(|e| ServerError::Catalog(e.to_string()))?,
            None => PathologyCatalog::builtin(),
        };
        let mut missing = Vec::new();
        let mut load = |path: &Option<PathBuf>, task: Task| -> Result<Option<LoadedModel>, ServerError> {
            let Some(path) = path else {
                missing.push(format!("{task} checkpoint (no path given)"));
                return Ok(None);
            };
            if !path.exists() {
                missing.push(format!("{task} checkpoint {}", path.display()));
                return Ok(None);
            }
            LoadedModel::from_bytes(&std::fs::read(path)?, task, path).map(Some)
        };
        let pathology = load(&config.pathology_checkpoint, Task::Pathology)?;
        let ddx = load(&config.ddx_checkpoint, Task::Ddx)?;
        let mut state = Self::new(catalog, pathology, ddx);
        state.missing = missing;
        if let Some(t) = config.default_threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(ServerError::Threshold(t));
            }
            state.default_threshold = t;
        }
        for m in [&state.pathology, &state.ddx].into_iter().flatten() {
            if m.model.config().vocab_size != state.vocab.len() {
                return Err(ServerError::Catalog(format!(
                    "checkpoint {} expects a vocabulary of {}, catalog gives {}",
                    m.id,
                    m.model.config().vocab_size,
                    state.vocab.len()
                )));
            }
        }
        Ok(state)
    }

    pub fn uptime_seconds(&self) -> f64 {
        self.started.elapsed().as_secs_f64()
    }

    fn label(&self, id: usize) -> String {
        self.catalog.name(id).unwrap_or("unknown").to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub id: usize,
    pub label: String,
    pub probability: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointIds {
    pub pathology: Option<String>,
    pub ddx: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputSummary {
    /// The normalized answers as fed to the tokenizer.
    pub text: String,
    pub tokens: usize,
    pub unknown_tokens: usize,
    pub truncated_words: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosisResult {
    pub pathology: Scored,
    /// All pathologies by descending differential probability.
    pub differential: Vec<Scored>,
    /// Labels with probability at or above `threshold`, most likely first.
    pub predicted_set: Vec<String>,
    /// Ids of `predicted_set`, ascending.
    pub predicted_ids: Vec<usize>,
    pub threshold: f32,
    pub checkpoints: CheckpointIds,
    pub input: InputSummary,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub explanation: Option<Explanation>,
}

#[derive(Debug, Error)]
pub enum DiagnoseError {
    #[error("model unavailable: missing {}", .0.join(", "))]
    Unavailable(Vec<String>),
    #[error("invalid answers")]
    Validation(Vec<FieldError>),
    #[error("inference failed: {0}")]
    Internal(String),
}

/// Normalizes, tokenizes and runs both heads.
pub fn diagnose(state: &AppState, submission: &Submission) -> Result<DiagnosisResult, DiagnoseError> {
    let (Some(path_model), Some(ddx_model)) = (&state.pathology, &state.ddx) else {
        return Err(DiagnoseError::Unavailable(state.missing.clone()));
    };
    let threshold = submission.threshold.unwrap_or(state.default_threshold);
    let mut errors = Vec::new();
    if !(0.0..=1.0).contains(&threshold) {
        errors.push(FieldError { field: "threshold".into(), reason: format!("{threshold} is outside [0, 1]") });
    }
    let answers = match validate_and_normalize(&submission.answers, &state.catalog) {
        Ok(a) => Some(a),
        Err(e) => {
            errors.extend(e);
            None
        }
    };
    let answers: Answers = match answers {
        Some(a) if errors.is_empty() => a,
        _ => return Err(DiagnoseError::Validation(errors)),
    };

    let text = serialize_answers(&answers);
    let max_len = path_model.model.config().max_seq_len.min(ddx_model.model.config().max_seq_len);
    let tok = tokenize(&text, &state.vocab, max_len).map_err(|e| DiagnoseError::Internal(e.to_string()))?;
    let internal = |e: ddx_core::model::ModelError| DiagnoseError::Internal(e.to_string());
    let path_out = path_model.model.forward(&tok.ids, false).map_err(internal)?;
    let ddx_out = ddx_model.model.forward(&tok.ids, false).map_err(internal)?;

    let probs = softmax(&path_out.pathology_logits);
    let top = argmax(&probs);
    let pred = predict_ddx_set(&ddx_out.ddx_logits, threshold).map_err(|e| DiagnoseError::Internal(e.to_string()))?;
    let mut differential: Vec<Scored> =
        pred.probs.iter().enumerate().map(|(id, &p)| Scored { id, label: state.label(id), probability: p }).collect();
    differential.sort_by(|a, b| b.probability.total_cmp(&a.probability).then(a.id.cmp(&b.id)));
    let predicted_set =
        differential.iter().filter(|s| pred.predicted_set.contains(&s.id)).map(|s| s.label.clone()).collect();

    let explanation = if submission.explain {
        let trace = trace_attention(&path_model.model, &tok.ids, &tok.tokens)
            .map_err(|e| DiagnoseError::Internal(e.to_string()))?;
        Some(Explanation::from_trace(&trace).map_err(|e| DiagnoseError::Internal(e.to_string()))?)
    } else {
        None
    };

    Ok(DiagnosisResult {
        pathology: Scored { id: top, label: state.label(top), probability: probs[top] },
        differential,
        predicted_set,
        predicted_ids: pred.predicted_set,
        threshold,
        checkpoints: CheckpointIds { pathology: Some(path_model.id.clone()), ddx: Some(ddx_model.id.clone()) },
        input: InputSummary {
            text,
            tokens: tok.ids.len(),
            unknown_tokens: tok.unknown,
            truncated_words: tok.truncated,
        },
        explanation,
    })
}

/// Binds and serves until Ctrl-C. `on_bound` receives the bound address.
pub async fn serve(config: ServerConfig, on_bound: impl FnOnce(SocketAddr)) -> Result<(), ServerError> {
    let state = AppState::load(&config)?;
    for m in &state.missing {
        tracing::warn!("missing {m}; /api/diagnose will answer 503");
    }
    let app = router(std::sync::Arc::new(state), config.static_dir.as_deref());
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", config.port)).await?;
    on_bound(listener.local_addr()?);
    axum::serve(listener, app)
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
