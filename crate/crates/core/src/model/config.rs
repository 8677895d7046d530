use serde::{Deserialize, Serialize};

use super::ModelError;

/// Number of pathology classes; both heads emit one logit per class.
pub const N_PATHOLOGIES: usize = 49;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    Query,
    Key,
    Value,
    Output,
}

impl Projection {
    pub const ALL: [Projection; 4] = [Projection::Query, Projection::Key, Projection::Value, Projection::Output];

    pub fn short_name(self) -> &'static str {
        match self {
            Projection::Query => "q_proj",
            Projection::Key => "k_proj",
            Projection::Value => "v_proj",
            Projection::Output => "o_proj",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f32,
    pub dropout: f32,
    pub targets: Vec<Projection>,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self { rank: 4, alpha: 16.0, dropout: 0.1, targets: Projection::ALL.to_vec() }
    }
}

impl LoraConfig {
    pub fn scaling(&self) -> f32 {
        self.alpha / self.rank as f32
    }

    pub fn adapts(&self, p: Projection) -> bool {
        self.targets.contains(&p)
    }

    pub fn validate(&self, d_model: usize) -> Result<(), ModelError> {
        if self.rank == 0 {
            return Err(ModelError::Config("LoRA rank must be at least 1".into()));
        }
        if self.rank >= d_model {
            return Err(ModelError::Config(format!("LoRA rank {} must be below the model width {d_model}", self.rank)));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(ModelError::Config("LoRA alpha must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config("LoRA dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Which final hidden state feeds the classification heads.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Last position; under the causal mask it is the only one that sees the whole input.
    #[default]
    Last,
    /// Position 0, the begin-of-sequence token.
    Bos,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_seq_len: usize,
    /// Width of the gated SiLU MLP.
    pub mlp_hidden: usize,
    pub n_pathologies: usize,
    pub norm_eps: f32,
    pub pooling: Pooling,
    pub lora: LoraConfig,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 64,
            n_layers: 4,
            n_heads: 4,
            max_seq_len: 128,
            mlp_hidden: 256,
            n_pathologies: N_PATHOLOGIES,
            norm_eps: 1e-5,
            pooling: Pooling::Last,
            lora: LoraConfig::default(),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("max_seq_len", self.max_seq_len),
            ("mlp_hidden", self.mlp_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.n_pathologies != N_PATHOLOGIES {
            return Err(ModelError::Config(format!(
                "n_pathologies must be {N_PATHOLOGIES}, got {}",
                self.n_pathologies
            )));
        }
        if !(self.norm_eps > 0.0) {
            return Err(ModelError::Config("norm_eps must be positive".into()));
        }
        self.lora.validate(self.d_model)
    }
}

/// Analytic `(trainable, total)` parameter counts for a configuration.
///
/// Trainable parameters are the LoRA factors, `r·(d+k)` per adapted
/// projection, plus both classification heads.
pub fn trainable_param_count(config: &ModelConfig) -> Result<(usize, usize), ModelError> {
    config.validate()?;
    let d = config.d_model;
    let adapters_per_layer = config.lora.targets.iter().collect::<std::collections::HashSet<_>>().len();
    let adapter = config.n_layers * adapters_per_layer * config.lora.rank * (d + d);
    let heads = 2 * (config.n_pathologies * d + config.n_pathologies);
    let per_layer_frozen = 4 * d * d + 3 * d * config.mlp_hidden + 2 * d;
    let frozen = config.vocab_size * d + config.max_seq_len * d + config.n_layers * per_layer_frozen + d;
    let trainable = adapter + heads;
    Ok((trainable, trainable + frozen))
}
