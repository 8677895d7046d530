//! Task-specific fine-tuning of the adapters and heads.

mod checkpoint;
mod optimizer;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointError, MAGIC, VERSION,
};
pub use optimizer::{adamw_step, AdamMoments, AdamWConfig};

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ModelError, ModelState, ParamId, N_PATHOLOGIES};
use crate::numerics::{Graph, NumericsError, Tensor};
use crate::records::{serialize_record, tokenize, PatientRecord, RecordsError, Vocabulary};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Single most likely pathology (cross-entropy on the pathology head).
    Pathology,
    /// Differential set (mean BCE on the ddx head against the multi-hot differential).
    Ddx,
}

impl Task {
    pub fn default_epochs(self) -> usize {
        match self {
            Task::Pathology => 1,
            Task::Ddx => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Pathology => "pathology",
            Task::Ddx => "ddx",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pathology" => Ok(Task::Pathology),
            "ddx" => Ok(Task::Ddx),
            other => Err(format!("unknown task {other:?}, expected pathology or ddx")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub task: Task,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub weight_decay: f32,
    pub seed: u64,
    /// Steps between progress callbacks; 0 disables them.
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn new(task: Task) -> Self {
        Self {
            task,
            epochs: task.default_epochs(),
            batch_size: 2,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            seed: 0,
            eval_every: 0,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let err = |m: &str| Err(TrainError::Validation(m.into()));
        if self.epochs == 0 {
            return err("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return err("batch_size must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return err("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return err("weight_decay must be non-negative");
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig { learning_rate: self.learning_rate, weight_decay: self.weight_decay, ..AdamWConfig::default() }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training input: {0}")]
    Validation(String),
    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },
    #[error("parameter shape {param:?} does not match gradient shape {grad:?}")]
    ShapeMismatch { param: Vec<usize>, grad: Vec<usize> },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Records(#[from] RecordsError),
}

/// A tokenized record with both labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<u32>,
    pub true_pathology: usize,
    pub differential: Vec<usize>,
}

impl Example {
    pub fn ddx_targets(&self) -> [f32; N_PATHOLOGIES] {
        let mut t = [0.0; N_PATHOLOGIES];
        for &id in &self.differential {
            t[id] = 1.0;
        }
        t
    }
}

/// Serializes and tokenizes records; a record that would be truncated is an error.
pub fn encode_records(
    records: &[PatientRecord],
    vocab: &Vocabulary,
    max_len: usize,
) -> Result<Vec<Example>, TrainError> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let t = tokenize(&serialize_record(r), vocab, max_len)?;
            if t.truncated > 0 {
                return Err(TrainError::Validation(format!(
                    "record {i} needs {} tokens, the model takes {max_len}",
                    t.ids.len() + t.truncated
                )));
            }
            Ok(Example { tokens: t.ids, true_pathology: r.true_pathology, differential: r.differential.clone() })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainProgress {
    /// Optimizer steps taken so far.
    pub step: usize,
    /// Zero-based epoch.
    pub epoch: usize,
    pub loss: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub epoch_losses: Vec<f32>,
}

pub fn train(model: ModelState, examples: &[Example], config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_with(model, examples, config, |_, _| {})
}

/// Trains the adapters and the task's head on shuffled mini-batches.
///
/// Per-example gradients are averaged over the batch. Only tensors marked
/// trainable that received a gradient are updated; every frozen tensor is
/// left untouched. `on_progress` runs every `eval_every` steps.
pub fn train_with<F>(
    mut model: ModelState,
    examples: &[Example],
    config: &TrainConfig,
    mut on_progress: F,
) -> Result<TrainOutcome, TrainError>
where
    F: FnMut(&TrainProgress, &ModelState),
{
    config.validate()?;
    if examples.is_empty() {
        return Err(TrainError::Validation("training set is empty".into()));
    }
    for ex in examples {
        model.validate_tokens(&ex.tokens)?;
        if ex.true_pathology >= N_PATHOLOGIES || ex.differential.iter().any(|&d| d >= N_PATHOLOGIES) {
            return Err(TrainError::Validation("label out of range".into()));
        }
    }
    let optimizer = config.optimizer();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let n_params = model.params().len();
    let mut moments: Vec<Option<AdamMoments>> = vec![None; n_params];
    let mut history = Vec::new();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..examples.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_sum = 0.0f64;
        let mut epoch_steps = 0usize;
        for batch in order.chunks(config.batch_size) {
            let step = history.len() + 1;
            let mut grads: Vec<Option<Tensor>> = vec![None; n_params];
            let mut batch_loss = 0.0f32;
            for &i in batch {
                let loss = accumulate_example(&model, &examples[i], config.task, &mut rng, &mut grads)?;
                if !loss.is_finite() {
                    return Err(TrainError::NonFinite { step });
                }
                batch_loss += loss;
            }
            let inv = 1.0 / batch.len() as f32;
            let params = model.params_mut();
            for (index, grad) in grads.into_iter().enumerate() {
                let Some(grad) = grad else { continue };
                let state = moments[index].get_or_insert_with(|| AdamMoments::new(grad.numel()));
                adamw_step(params.tensor_mut(ParamId(index)), &grad.scale(inv), state, &optimizer)?;
            }
            let mean = batch_loss * inv;
            history.push(mean);
            epoch_sum += f64::from(mean);
            epoch_steps += 1;
            if config.eval_every > 0 && step % config.eval_every == 0 {
                on_progress(&TrainProgress { step, epoch, loss: mean }, &model);
            }
        }
        epoch_losses.push((epoch_sum / epoch_steps as f64) as f32);
    }
    Ok(TrainOutcome { checkpoint: Checkpoint { model, task: config.task, history }, epoch_losses })
}

/// Runs one example forward and backward, adding its gradients into `grads`.
fn accumulate_example(
    model: &ModelState,
    example: &Example,
    task: Task,
    rng: &mut ChaCha8Rng,
    grads: &mut [Option<Tensor>],
) -> Result<f32, TrainError> {
    let mut g = Graph::new();
    let rec = model.record_forward(&mut g, &example.tokens, Some(rng))?;
    let loss = match task {
        Task::Pathology => g.cross_entropy(rec.pathology_logits, example.true_pathology)?,
        Task::Ddx => g.bce_with_logits(rec.ddx_logits, &example.ddx_targets())?,
    };
    let value = g.value(loss).data()[0];
    if !value.is_finite() {
        return Ok(value);
    }
    g.backward(loss)?;
    for (id, var) in rec.trainable {
        let Some(grad) = g.take_grad(var) else { continue };
        match &mut grads[id.index()] {
            Some(acc) => acc.data_mut().iter_mut().zip(grad.data()).for_each(|(a, b)| *a += b),
            slot => *slot = Some(grad),
        }
    }
    Ok(value)
}

/// `step,loss` rows with 1-based steps.
pub fn write_history_csv<W: Write>(mut out: W, history: &[f32]) -> std::io::Result<()> {
    writeln!(out, "step,loss")?;
    for (i, loss) in history.iter().enumerate() {
        writeln!(out, "{},{loss}", i + 1)?;
    }
    Ok(())
}

pub fn save_history_csv(path: &Path, history: &[f32]) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_history_csv(&mut out, history)?;
    out.flush()
}
