//! Attention capture and token saliency for a single record.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LayerAttention, ModelError, ModelState};

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("invalid explanation input: {0}")]
    Validation(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// First, middle and last layer indices.
pub fn capture_layers(n_layers: usize) -> Result<[usize; 3], ExplainError> {
    if n_layers < 3 {
        return Err(ExplainError::Validation(format!(
            "need at least 3 layers to capture first, middle and last, model has {n_layers}"
        )));
    }
    Ok([0, n_layers / 2, n_layers - 1])
}

/// Mean over heads of one query row, scaled so the largest weight is 1.
/// An all-zero row stays zero.
pub fn token_saliency(layer: &LayerAttention, query_row: usize) -> Result<Vec<f32>, ExplainError> {
    let first = layer.heads.first().ok_or_else(|| ExplainError::Validation("layer has no heads".into()))?;
    let seq = first.rows();
    if query_row >= seq {
        return Err(ExplainError::Validation(format!("query row {query_row} outside a sequence of {seq} tokens")));
    }
    let mut mean = vec![0.0f32; seq];
    for head in &layer.heads {
        if head.dims() != first.dims() {
            return Err(ExplainError::Validation("heads differ in shape".into()));
        }
        for (m, &w) in mean.iter_mut().zip(head.row(query_row)) {
            *m += w;
        }
    }
    let n = layer.heads.len() as f32;
    mean.iter_mut().for_each(|m| *m /= n);
    let max = mean.iter().cloned().fold(0.0f32, f32::max);
    if max > 0.0 {
        mean.iter_mut().for_each(|m| *m /= max);
    }
    Ok(mean)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionTrace {
    pub tokens: Vec<String>,
    /// Captured layers, in ascending index order.
    pub layers: Vec<LayerAttention>,
    /// Saliency over tokens from the last captured layer at the pooled position.
    pub saliency: Vec<f32>,
}

/// Runs the model once and keeps the first, middle and last layer attention.
/// `tokens` are the display strings for `ids`, BOS included.
pub fn trace_attention(model: &ModelState, ids: &[u32], tokens: &[String]) -> Result<AttentionTrace, ExplainError> {
    if ids.len() != tokens.len() {
        return Err(ExplainError::Validation(format!("{} token ids but {} token strings", ids.len(), tokens.len())));
    }
    let wanted = capture_layers(model.config().n_layers)?;
    let out = model.forward(ids, true)?;
    let layers: Vec<LayerAttention> =
        out.attention.unwrap_or_default().into_iter().filter(|l| wanted.contains(&l.layer_index)).collect();
    let last = layers.last().ok_or_else(|| ExplainError::Validation("no attention captured".into()))?;
    let saliency = token_saliency(last, model.pooled_position(ids.len()))?;
    Ok(AttentionTrace { tokens: tokens.to_vec(), layers, saliency })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportedLayer {
    pub index: usize,
    /// `heads × seq × seq`.
    pub heads: Vec<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub tokens: Vec<String>,
    pub layers: Vec<ExportedLayer>,
    pub saliency: Vec<f64>,
}

/// Rounds to 6 significant digits.
pub fn round_sig6(x: f32) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return 0.0;
    }
    format!("{x:.5e}").parse().unwrap_or(0.0)
}

impl Explanation {
    pub fn from_trace(trace: &AttentionTrace) -> Result<Self, ExplainError> {
        if trace.layers.is_empty() {
            return Err(ExplainError::Validation("trace has no layers".into()));
        }
        let seq = trace.tokens.len();
        let layers = trace
            .layers
            .iter()
            .map(|l| {
                let heads = l
                    .heads
                    .iter()
                    .map(|h| {
                        if h.dims() != [seq, seq] {
                            return Err(ExplainError::Validation(format!(
                                "layer {} head is {:?}, expected {seq}×{seq}",
                                l.layer_index,
                                h.dims()
                            )));
                        }
                        Ok((0..seq).map(|r| h.row(r).iter().map(|&w| round_sig6(w)).collect()).collect())
                    })
                    .collect::<Result<_, ExplainError>>()?;
                Ok(ExportedLayer { index: l.layer_index, heads })
            })
            .collect::<Result<_, ExplainError>>()?;
        Ok(Self {
            tokens: trace.tokens.clone(),
            layers,
            saliency: trace.saliency.iter().map(|&s| round_sig6(s)).collect(),
        })
    }
}

/// JSON `{tokens, layers: [{index, heads}], saliency}`.
pub fn export_explanation(trace: &AttentionTrace) -> Result<String, ExplainError> {
    let e = Explanation::from_trace(trace)?;
    Ok(serde_json::to_string(&e).expect("explanation serializes"))
}
