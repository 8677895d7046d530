//! Pre-norm causal transformer with two linear classification heads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::lora::{gaussian, lora_linear, LORA_A_INIT_STD};
use super::params::{ParamId, ParamStore};
use super::{ModelConfig, ModelError, Pooling, Projection};
use crate::numerics::{Graph, Tensor, Var};

/// Token id every input sequence must start with.
pub const BOS_ID: u32 = 0;

const HEAD_INIT_STD: f32 = 0.02;
const POSITION_INIT_STD: f32 = 0.1;

#[derive(Clone, Debug, PartialEq)]
struct ProjectionIds {
    weight: ParamId,
    lora: Option<(ParamId, ParamId)>,
}

#[derive(Clone, Debug, PartialEq)]
struct LayerIds {
    attn_norm: ParamId,
    projections: [ProjectionIds; 4],
    mlp_norm: ParamId,
    gate: ParamId,
    up: ParamId,
    down: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
struct HeadIds {
    weight: ParamId,
    bias: ParamId,
}

/// Post-softmax attention of one layer: one `seq×seq` matrix per head.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerAttention {
    pub layer_index: usize,
    pub heads: Vec<Tensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub pathology_logits: Vec<f32>,
    pub ddx_logits: Vec<f32>,
    /// Final-norm hidden state at the pooled position.
    pub pooled: Vec<f32>,
    pub attention: Option<Vec<LayerAttention>>,
}

/// Tape handles produced by [`ModelState::record_forward`].
pub struct RecordedForward {
    pub pathology_logits: Var,
    pub ddx_logits: Var,
    pub pooled: Var,
    /// Per layer, per head attention probabilities.
    pub attention: Vec<Vec<Var>>,
    /// Graph leaves of the trainable parameters used in this pass.
    pub trainable: Vec<(ParamId, Var)>,
}

/// Lazily binds parameters to graph leaves, once per forward pass.
struct Binder {
    vars: Vec<Option<Var>>,
}

impl Binder {
    fn bind<'m>(&mut self, g: &mut Graph<'m, f32>, store: &'m ParamStore, id: ParamId) -> Var {
        *self.vars[id.index()].get_or_insert_with(|| {
            let p = store.get(id);
            if p.trainable {
                g.param_ref(&p.tensor)
            } else {
                g.constant_ref(&p.tensor)
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    config: ModelConfig,
    params: ParamStore,
    token_embedding: ParamId,
    position_embedding: ParamId,
    layers: Vec<LayerIds>,
    final_norm: ParamId,
    pathology_head: HeadIds,
    ddx_head: HeadIds,
}

impl ModelState {
    /// Builds a model with a seeded frozen backbone, fresh adapters and heads.
    ///
    /// Backbone, adapters and heads draw from separate RNG streams, so two
    /// models built from the same seed share the backbone and heads whatever
    /// their adapter targets.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let stream = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        let (mut base_rng, mut lora_rng, mut head_rng) = (stream(0), stream(1), stream(2));
        let d = config.d_model;
        let h = config.mlp_hidden;
        let proj_std = (1.0 / d as f32).sqrt();
        let mut params = ParamStore::default();

        let token_embedding = params.add("embed.tokens", gaussian(&[config.vocab_size, d], 1.0, &mut base_rng), false);
        let position_embedding =
            params.add("embed.positions", gaussian(&[config.max_seq_len, d], POSITION_INIT_STD, &mut base_rng), false);
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let attn_norm = params.add(format!("layers.{l}.attn_norm.gain"), Tensor::full(&[d], 1.0), false);
            let projections = Projection::ALL.map(|p| {
                let prefix = format!("layers.{l}.attn.{}", p.short_name());
                let weight = params.add(format!("{prefix}.weight"), gaussian(&[d, d], proj_std, &mut base_rng), false);
                let lora = config.lora.adapts(p).then(|| {
                    let r = config.lora.rank;
                    let a =
                        params.add(format!("{prefix}.lora_a"), gaussian(&[r, d], LORA_A_INIT_STD, &mut lora_rng), true);
                    let b = params.add(format!("{prefix}.lora_b"), Tensor::zeros(&[d, r]), true);
                    (a, b)
                });
                ProjectionIds { weight, lora }
            });
            let mlp_norm = params.add(format!("layers.{l}.mlp_norm.gain"), Tensor::full(&[d], 1.0), false);
            let gate = params.add(
                format!("layers.{l}.mlp.gate_proj.weight"),
                gaussian(&[h, d], proj_std, &mut base_rng),
                false,
            );
            let up =
                params.add(format!("layers.{l}.mlp.up_proj.weight"), gaussian(&[h, d], proj_std, &mut base_rng), false);
            let down = params.add(
                format!("layers.{l}.mlp.down_proj.weight"),
                gaussian(&[d, h], (1.0 / h as f32).sqrt(), &mut base_rng),
                false,
            );
            layers.push(LayerIds { attn_norm, projections, mlp_norm, gate, up, down });
        }
        let final_norm = params.add("final_norm.gain", Tensor::full(&[d], 1.0), false);
        let mut head = |name: &str, rng: &mut ChaCha8Rng| HeadIds {
            weight: params.add(
                format!("{name}.weight"),
                gaussian(&[config.n_pathologies, d], HEAD_INIT_STD, rng),
                true,
            ),
            bias: params.add(format!("{name}.bias"), Tensor::zeros(&[config.n_pathologies]), true),
        };
        let pathology_head = head("pathology_head", &mut head_rng);
        let ddx_head = head("ddx_head", &mut head_rng);

        Ok(Self { config, params, token_embedding, position_embedding, layers, final_norm, pathology_head, ddx_head })
    }

    /// Same backbone and heads as [`ModelState::new`] with no adapters at all.
    pub fn base(mut config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.lora.targets.clear();
        Self::new(config, seed)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// `(trainable, total)` element counts from the registry.
    pub fn param_counts(&self) -> (usize, usize) {
        self.params.counts()
    }

    pub fn pooled_position(&self, seq_len: usize) -> usize {
        match self.config.pooling {
            Pooling::Last => seq_len - 1,
            Pooling::Bos => 0,
        }
    }

    pub fn validate_tokens(&self, tokens: &[u32]) -> Result<(), ModelError> {
        if tokens.is_empty() {
            return Err(ModelError::EmptyInput);
        }
        if tokens[0] != BOS_ID {
            return Err(ModelError::MissingBos { found: tokens[0] });
        }
        if tokens.len() > self.config.max_seq_len {
            return Err(ModelError::SequenceTooLong { len: tokens.len(), max: self.config.max_seq_len });
        }
        if let Some((position, &id)) = tokens.iter().enumerate().find(|(_, &t)| t as usize >= self.config.vocab_size) {
            return Err(ModelError::UnknownToken { position, id });
        }
        Ok(())
    }

    fn embed(&self, tokens: &[u32]) -> Tensor {
        let d = self.config.d_model;
        let tok = self.params.tensor(self.token_embedding);
        let pos = self.params.tensor(self.position_embedding);
        let mut x = Vec::with_capacity(tokens.len() * d);
        for (i, &t) in tokens.iter().enumerate() {
            x.extend(tok.row(t as usize).iter().zip(pos.row(i)).map(|(a, b)| a + b));
        }
        Tensor::matrix(tokens.len(), d, x).expect("embedding rows have width d")
    }

    /// Records a full forward pass on `g`.
    ///
    /// With `dropout_rng` set, LoRA dropout is sampled (training mode);
    /// without it the pass is deterministic.
    pub fn record_forward<'m>(
        &'m self,
        g: &mut Graph<'m, f32>,
        tokens: &[u32],
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<RecordedForward, ModelError> {
        self.validate_tokens(tokens)?;
        let mut binder = Binder { vars: vec![None; self.params.len()] };
        let mut rng = dropout_rng;
        let mut x = g.constant(self.embed(tokens));
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in 0..self.layers.len() {
            let (out, probs) = self.record_layer(g, &mut binder, x, layer, rng.as_deref_mut())?;
            x = out;
            attention.push(probs);
        }
        let gain = binder.bind(g, &self.params, self.final_norm);
        let normed = g.rms_norm(x, gain, self.config.norm_eps)?;
        let pooled = g.select_row(normed, self.pooled_position(tokens.len()))?;
        let pathology_logits = self.record_head(g, &mut binder, pooled, &self.pathology_head)?;
        let ddx_logits = self.record_head(g, &mut binder, pooled, &self.ddx_head)?;
        let trainable = binder
            .vars
            .iter()
            .enumerate()
            .filter_map(|(i, v)| {
                let id = ParamId(i);
                v.filter(|_| self.params.get(id).trainable).map(|v| (id, v))
            })
            .collect();
        Ok(RecordedForward { pathology_logits, ddx_logits, pooled, attention, trainable })
    }

    fn record_head<'m>(
        &'m self,
        g: &mut Graph<'m, f32>,
        binder: &mut Binder,
        pooled: Var,
        head: &HeadIds,
    ) -> Result<Var, ModelError> {
        let w = binder.bind(g, &self.params, head.weight);
        let b = binder.bind(g, &self.params, head.bias);
        let pre = g.matmul_t(pooled, w)?;
        Ok(g.add_bias(pre, b)?)
    }

    fn record_projection<'m>(
        &'m self,
        g: &mut Graph<'m, f32>,
        binder: &mut Binder,
        x: Var,
        ids: &ProjectionIds,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, ModelError> {
        let weight = binder.bind(g, &self.params, ids.weight);
        let factors = ids.lora.map(|(a, b)| (binder.bind(g, &self.params, a), binder.bind(g, &self.params, b)));
        let dropout = self.config.lora.dropout;
        let drop = rng.filter(|_| dropout > 0.0).map(|r| (dropout, r));
        let out = lora_linear(g, x, weight, factors, self.config.lora.scaling(), drop)?;
        Ok(out)
    }

    /// Pre-norm causal multi-head attention with a residual connection.
    fn record_attention<'m>(
        &'m self,
        g: &mut Graph<'m, f32>,
        binder: &mut Binder,
        x: Var,
        layer: usize,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Vec<Var>), ModelError> {
        let ids = &self.layers[layer];
        let gain = binder.bind(g, &self.params, ids.attn_norm);
        let normed = g.rms_norm(x, gain, self.config.norm_eps)?;
        let [q_ids, k_ids, v_ids, o_ids] = &ids.projections;
        let q = self.record_projection(g, binder, normed, q_ids, rng.as_deref_mut())?;
        let k = self.record_projection(g, binder, normed, k_ids, rng.as_deref_mut())?;
        let v = self.record_projection(g, binder, normed, v_ids, rng.as_deref_mut())?;

        let dh = self.config.head_dim();
        let inv_sqrt = 1.0 / (dh as f32).sqrt();
        let mut heads = Vec::with_capacity(self.config.n_heads);
        let mut probs = Vec::with_capacity(self.config.n_heads);
        for h in 0..self.config.n_heads {
            let qh = g.slice_cols(q, h * dh, dh)?;
            let kh = g.slice_cols(k, h * dh, dh)?;
            let vh = g.slice_cols(v, h * dh, dh)?;
            let scores = g.matmul_t(qh, kh)?;
            let scores = g.scale(scores, inv_sqrt);
            let p = g.causal_softmax(scores)?;
            heads.push(g.matmul(p, vh)?);
            probs.push(p);
        }
        let merged = g.concat_cols(&heads)?;
        let attn_out = self.record_projection(g, binder, merged, o_ids, rng)?;
        Ok((g.add(x, attn_out)?, probs))
    }

    /// Attention sub-block then gated SiLU MLP sub-block.
    fn record_layer<'m>(
        &'m self,
        g: &mut Graph<'m, f32>,
        binder: &mut Binder,
        x: Var,
        layer: usize,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Vec<Var>), ModelError> {
        let (x, probs) = self.record_attention(g, binder, x, layer, rng)?;
        let ids = &self.layers[layer];
        let gain = binder.bind(g, &self.params, ids.mlp_norm);
        let normed = g.rms_norm(x, gain, self.config.norm_eps)?;
        let gate_w = binder.bind(g, &self.params, ids.gate);
        let up_w = binder.bind(g, &self.params, ids.up);
        let down_w = binder.bind(g, &self.params, ids.down);
        let gate = g.matmul_t(normed, gate_w)?;
        let gate = g.silu(gate);
        let up = g.matmul_t(normed, up_w)?;
        let hidden = g.mul(gate, up)?;
        let mlp_out = g.matmul_t(hidden, down_w)?;
        Ok((g.add(x, mlp_out)?, probs))
    }

    /// Eval-mode forward pass; deterministic and side-effect free.
    pub fn forward(&self, tokens: &[u32], capture_attention: bool) -> Result<ForwardOutput, ModelError> {
        self.forward_with(tokens, capture_attention, None)
    }

    /// Forward pass; `dropout_rng` switches LoRA dropout on (training mode).
    pub fn forward_with(
        &self,
        tokens: &[u32],
        capture_attention: bool,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardOutput, ModelError> {
        let mut g = Graph::new();
        let rec = self.record_forward(&mut g, tokens, dropout_rng)?;
        let attention = capture_attention.then(|| {
            rec.attention
                .iter()
                .enumerate()
                .map(|(layer_index, heads)| LayerAttention {
                    layer_index,
                    heads: heads.iter().map(|&p| g.value(p).clone()).collect(),
                })
                .collect()
        });
        Ok(ForwardOutput {
            pathology_logits: g.value(rec.pathology_logits).data().to_vec(),
            ddx_logits: g.value(rec.ddx_logits).data().to_vec(),
            pooled: g.value(rec.pooled).data().to_vec(),
            attention,
        })
    }

    /// One attention sub-block (pre-norm, residual) applied to `x` (`seq×d_model`).
    pub fn attention_block(
        &self,
        x: &Tensor,
        layer_index: usize,
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Tensor, LayerAttention), ModelError> {
        if layer_index >= self.layers.len() {
            return Err(ModelError::Config(format!("no layer {layer_index}")));
        }
        if x.ndim() != 2 || x.dims()[1] != self.config.d_model {
            return Err(ModelError::Config(format!(
                "attention input must be seq×{}, got {:?}",
                self.config.d_model,
                x.dims()
            )));
        }
        if x.dims()[0] > self.config.max_seq_len {
            return Err(ModelError::SequenceTooLong { len: x.dims()[0], max: self.config.max_seq_len });
        }
        let mut g = Graph::new();
        let mut binder = Binder { vars: vec![None; self.params.len()] };
        let xv = g.constant_ref(x);
        let (out, probs) = self.record_attention(&mut g, &mut binder, xv, layer_index, dropout_rng)?;
        Ok((
            g.value(out).clone(),
            LayerAttention { layer_index, heads: probs.iter().map(|&p| g.value(p).clone()).collect() },
        ))
    }

    /// Applies both heads to a pooled vector, optionally without the biases.
    pub fn head_logits(&self, pooled: &[f32], include_bias: bool) -> Result<(Vec<f32>, Vec<f32>), ModelError> {
        let x = Tensor::matrix(1, pooled.len(), pooled.to_vec())?;
        let apply = |head: &HeadIds| -> Result<Vec<f32>, ModelError> {
            let mut out = x.matmul_t(self.params.tensor(head.weight))?.into_data();
            if include_bias {
                for (o, b) in out.iter_mut().zip(self.params.tensor(head.bias).data()) {
                    *o += b;
                }
            }
            Ok(out)
        };
        Ok((apply(&self.pathology_head)?, apply(&self.ddx_head)?))
    }

    /// Merged `W₀ + s·B·A` for one projection, or the plain weight when not adapted.
    pub fn merged_projection(&self, layer: usize, projection: Projection) -> Option<Tensor> {
        let ids = &self.layers.get(layer)?.projections[projection as usize];
        let base = self.params.tensor(ids.weight);
        Some(match ids.lora {
            Some((a, b)) => {
                let delta = self.params.tensor(b).matmul(self.params.tensor(a)).ok()?;
                base.add(&delta.scale(self.config.lora.scaling())).ok()?
            }
            None => base.clone(),
        })
    }
}
