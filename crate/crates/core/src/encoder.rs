//! Small pre-norm transformer encoder.
//!
//! Parameters are kept in a fixed canonical order, which is also the order
//! they appear in checkpoint files:
//!
//! ```text
//! embeddings.token            [vocab_size, h]
//! embeddings.position         [max_len, h]
//! layers.{i}.attn_norm.gain   [h]
//! layers.{i}.attn_norm.bias   [h]
//! layers.{i}.attn.query.weight, .bias     [h, h], [h]
//! layers.{i}.attn.key.weight, .bias       [h, h], [h]
//! layers.{i}.attn.value.weight, .bias     [h, h], [h]
//! layers.{i}.attn.output.weight, .bias    [h, h], [h]
//! layers.{i}.ffn_norm.gain    [h]
//! layers.{i}.ffn_norm.bias    [h]
//! layers.{i}.ffn.up.weight, .bias         [h, ff], [ff]
//! layers.{i}.ffn.down.weight, .bias       [ff, h], [h]
//! final_norm.gain             [h]
//! final_norm.bias             [h]
//! ```
//!
//! Layers are listed for `i = 0..num_layers` in order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Tape, Tensor, TensorError, Var};
use crate::tokenizer::TokenBatch;

pub mod checkpoint;

pub const LAYER_NORM_EPS: f64 = 1e-12;
pub const MASK_PENALTY: f64 = -1e9;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("invalid encoder config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 2000,
            hidden_dim: 32,
            num_layers: 2,
            num_heads: 4,
            ff_dim: 64,
            max_len: 32,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let mut problems = Vec::new();
        for (name, v) in [
            ("vocab_size", self.vocab_size),
            ("hidden_dim", self.hidden_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("ff_dim", self.ff_dim),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be at least 1"));
            }
        }
        if self.num_heads > 0 && !self.hidden_dim.is_multiple_of(self.num_heads) {
            problems.push(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            ));
        }
        if self.max_len < 3 {
            problems.push(format!("max_len must be at least 3, got {}", self.max_len));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(EncoderError::InvalidConfig(problems))
        }
    }

    /// Same architecture, ignoring the init seed.
    pub fn same_architecture(&self, other: &EncoderConfig) -> bool {
        EncoderConfig { seed: 0, ..self.clone() } == EncoderConfig { seed: 0, ..other.clone() }
    }

    pub fn parameter_count(&self) -> usize {
        let (h, ff) = (self.hidden_dim, self.ff_dim);
        let per_layer = 4 * (h * h + h) + 4 * h + (h * ff + ff) + (ff * h + h);
        self.vocab_size * h + self.max_len * h + self.num_layers * per_layer + 2 * h
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormParams<T> {
    pub gain: T,
    pub bias: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams<T> {
    pub weight: T,
    pub bias: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub attn_norm: NormParams<T>,
    pub query: LinearParams<T>,
    pub key: LinearParams<T>,
    pub value: LinearParams<T>,
    pub output: LinearParams<T>,
    pub ffn_norm: NormParams<T>,
    pub up: LinearParams<T>,
    pub down: LinearParams<T>,
}

/// Encoder parameter set, generic so the same layout can hold tensors,
/// tape handles, or optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T> {
    pub token_embedding: T,
    pub position_embedding: T,
    pub layers: Vec<LayerParams<T>>,
    pub final_norm: NormParams<T>,
}

impl<T> EncoderParams<T> {
    /// Parameters in canonical order.
    pub fn iter(&self) -> impl Iterator<Item = &T> {
        let layers = self.layers.iter().flat_map(|l| {
            [
                &l.attn_norm.gain,
                &l.attn_norm.bias,
                &l.query.weight,
                &l.query.bias,
                &l.key.weight,
                &l.key.bias,
                &l.value.weight,
                &l.value.bias,
                &l.output.weight,
                &l.output.bias,
                &l.ffn_norm.gain,
                &l.ffn_norm.bias,
                &l.up.weight,
                &l.up.bias,
                &l.down.weight,
                &l.down.bias,
            ]
        });
        [&self.token_embedding, &self.position_embedding]
            .into_iter()
            .chain(layers)
            .chain([&self.final_norm.gain, &self.final_norm.bias])
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        let layers = self.layers.iter_mut().flat_map(|l| {
            [
                &mut l.attn_norm.gain,
                &mut l.attn_norm.bias,
                &mut l.query.weight,
                &mut l.query.bias,
                &mut l.key.weight,
                &mut l.key.bias,
                &mut l.value.weight,
                &mut l.value.bias,
                &mut l.output.weight,
                &mut l.output.bias,
                &mut l.ffn_norm.gain,
                &mut l.ffn_norm.bias,
                &mut l.up.weight,
                &mut l.up.bias,
                &mut l.down.weight,
                &mut l.down.bias,
            ]
        });
        [&mut self.token_embedding, &mut self.position_embedding]
            .into_iter()
            .chain(layers)
            .chain([&mut self.final_norm.gain, &mut self.final_norm.bias])
    }

    /// Builds a parameter set of the given layer count from values in
    /// canonical order.
    pub fn from_ordered(num_layers: usize, values: impl IntoIterator<Item = T>) -> Option<Self> {
        let mut it = values.into_iter();
        let mut next = || it.next();
        let token_embedding = next()?;
        let position_embedding = next()?;
        let mut layers = Vec::with_capacity(num_layers);
        for _ in 0..num_layers {
            layers.push(LayerParams {
                attn_norm: NormParams { gain: next()?, bias: next()? },
                query: LinearParams { weight: next()?, bias: next()? },
                key: LinearParams { weight: next()?, bias: next()? },
                value: LinearParams { weight: next()?, bias: next()? },
                output: LinearParams { weight: next()?, bias: next()? },
                ffn_norm: NormParams { gain: next()?, bias: next()? },
                up: LinearParams { weight: next()?, bias: next()? },
                down: LinearParams { weight: next()?, bias: next()? },
            });
        }
        let final_norm = NormParams { gain: next()?, bias: next()? };
        if next().is_some() {
            return None;
        }
        Some(Self {
            token_embedding,
            position_embedding,
            layers,
            final_norm,
        })
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> EncoderParams<U> {
        EncoderParams::from_ordered(self.layers.len(), self.iter().map(&mut f)).expect("same layout")
    }
}

/// Canonical parameter names for a configuration.
pub fn parameter_names(config: &EncoderConfig) -> Vec<String> {
    let mut names = vec!["embeddings.token".to_string(), "embeddings.position".to_string()];
    for i in 0..config.num_layers {
        for part in [
            "attn_norm.gain",
            "attn_norm.bias",
            "attn.query.weight",
            "attn.query.bias",
            "attn.key.weight",
            "attn.key.bias",
            "attn.value.weight",
            "attn.value.bias",
            "attn.output.weight",
            "attn.output.bias",
            "ffn_norm.gain",
            "ffn_norm.bias",
            "ffn.up.weight",
            "ffn.up.bias",
            "ffn.down.weight",
            "ffn.down.bias",
        ] {
            names.push(format!("layers.{i}.{part}"));
        }
    }
    names.push("final_norm.gain".to_string());
    names.push("final_norm.bias".to_string());
    names
}

/// Canonical parameter shapes for a configuration.
pub fn parameter_shapes(config: &EncoderConfig) -> Vec<Vec<usize>> {
    let (h, ff) = (config.hidden_dim, config.ff_dim);
    let mut shapes = vec![vec![config.vocab_size, h], vec![config.max_len, h]];
    for _ in 0..config.num_layers {
        shapes.extend([
            vec![h],
            vec![h],
            vec![h, h],
            vec![h],
            vec![h, h],
            vec![h],
            vec![h, h],
            vec![h],
            vec![h, h],
            vec![h],
            vec![h],
            vec![h],
            vec![h, ff],
            vec![ff],
            vec![ff, h],
            vec![h],
        ]);
    }
    shapes.extend([vec![h], vec![h]]);
    shapes
}

/// True for parameters that take weight decay: matrices and embedding
/// tables, not biases or norm gains.
pub fn decays(name: &str) -> bool {
    name.ends_with(".weight") || name.starts_with("embeddings.")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderModel {
    config: EncoderConfig,
    params: EncoderParams<Tensor>,
}

impl EncoderModel {
    /// Seeded N(0, 0.02) weights, zero biases, unit norm gains.
    pub fn init(config: EncoderConfig) -> Result<Self, EncoderError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let names = parameter_names(&config);
        let tensors = names
            .iter()
            .zip(parameter_shapes(&config))
            .map(|(name, shape)| {
                let n: usize = shape.iter().product();
                let data = if name.ends_with(".gain") {
                    vec![1.0; n]
                } else if name.ends_with(".bias") {
                    vec![0.0; n]
                } else {
                    (0..n).map(|_| normal.sample(&mut rng)).collect()
                };
                Tensor::new(shape, data).expect("shape matches data")
            });
        let params = EncoderParams::from_ordered(config.num_layers, tensors).expect("canonical layout");
        Ok(Self { config, params })
    }

    /// Wraps existing tensors after checking them against `config`.
    pub fn from_params(config: EncoderConfig, params: EncoderParams<Tensor>) -> Result<Self, EncoderError> {
        config.validate()?;
        let shapes = parameter_shapes(&config);
        let names = parameter_names(&config);
        if params.layers.len() != config.num_layers {
            return Err(EncoderError::Input(format!(
                "expected {} layers, got {}",
                config.num_layers,
                params.layers.len()
            )));
        }
        for ((t, shape), name) in params.iter().zip(&shapes).zip(&names) {
            if t.shape() != shape.as_slice() {
                return Err(EncoderError::Input(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(EncoderError::Input(format!("parameter {name} is not finite")));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &EncoderParams<Tensor> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut EncoderParams<Tensor> {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(Tensor::is_finite)
    }

    /// Registers every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape) -> EncoderParams<Var> {
        self.params.map(|t| tape.leaf(t.clone()))
    }

    /// Registers every parameter as an untracked constant.
    pub fn bind_frozen(&self, tape: &mut Tape) -> EncoderParams<Var> {
        self.params.map(|t| tape.constant(t.clone()))
    }

    /// Hidden states `[B, T, h]` for a token batch.
    pub fn forward(&self, tape: &mut Tape, params: &EncoderParams<Var>, batch: &TokenBatch) -> Result<Var, EncoderError> {
        let cfg = &self.config;
        let (b, t, h) = (batch.batch_size(), batch.seq_len(), cfg.hidden_dim);
        let (heads, dh) = (cfg.num_heads, cfg.head_dim());
        if b == 0 || t == 0 {
            return Err(EncoderError::Input("empty token batch".into()));
        }
        if t > cfg.max_len {
            return Err(EncoderError::Input(format!(
                "sequence length {t} exceeds max_len {}",
                cfg.max_len
            )));
        }
        let ids = batch.flat_ids();
        if let Some(&bad) = ids.iter().find(|&&id| id >= cfg.vocab_size) {
            return Err(EncoderError::Input(format!(
                "token id {bad} out of range for vocab_size {}",
                cfg.vocab_size
            )));
        }

        let tok = tape.gather_rows(params.token_embedding, &ids)?;
        let positions: Vec<usize> = (0..b).flat_map(|_| 0..t).collect();
        let pos = tape.gather_rows(params.position_embedding, &positions)?;
        let mut x = tape.add(tok, pos)?;

        // additive key mask, broadcast over heads and query positions
        let mut mask_data = Vec::with_capacity(b * heads * t * t);
        for row in &batch.mask {
            for _ in 0..heads * t {
                mask_data.extend(row.iter().map(|&m| if m == 0 { MASK_PENALTY } else { 0.0 }));
            }
        }
        let key_mask = tape.constant(Tensor::new(vec![b * heads, t, t], mask_data)?);
        let score_scale = 1.0 / (dh as f64).sqrt();

        for layer in &params.layers {
            let n = tape.layer_norm(x, layer.attn_norm.gain, layer.attn_norm.bias, LAYER_NORM_EPS)?;
            let project = |tape: &mut Tape, lin: &LinearParams<Var>| -> Result<Var, TensorError> {
                let y = tape.matmul(n, lin.weight)?;
                tape.add_row(y, lin.bias)
            };
            let q = project(tape, &layer.query)?;
            let k = project(tape, &layer.key)?;
            let v = project(tape, &layer.value)?;

            let split_heads = |tape: &mut Tape, y: Var, perm: &[usize], last: [usize; 2]| -> Result<Var, TensorError> {
                let y = tape.reshape(y, &[b, t, heads, dh])?;
                let y = tape.permute(y, perm)?;
                tape.reshape(y, &[b * heads, last[0], last[1]])
            };
            let q = split_heads(tape, q, &[0, 2, 1, 3], [t, dh])?;
            let k_t = split_heads(tape, k, &[0, 2, 3, 1], [dh, t])?;
            let v = split_heads(tape, v, &[0, 2, 1, 3], [t, dh])?;

            let scores = tape.batch_matmul(q, k_t)?;
            let scores = tape.scale(scores, score_scale)?;
            let scores = tape.add(scores, key_mask)?;
            let attn = tape.softmax(scores, 2)?;
            let ctx = tape.batch_matmul(attn, v)?;
            let ctx = tape.reshape(ctx, &[b, heads, t, dh])?;
            let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
            let ctx = tape.reshape(ctx, &[b * t, h])?;
            let out = tape.matmul(ctx, layer.output.weight)?;
            let out = tape.add_row(out, layer.output.bias)?;
            x = tape.add(x, out)?;

            let n = tape.layer_norm(x, layer.ffn_norm.gain, layer.ffn_norm.bias, LAYER_NORM_EPS)?;
            let up = tape.matmul(n, layer.up.weight)?;
            let up = tape.add_row(up, layer.up.bias)?;
            let act = tape.gelu(up)?;
            let down = tape.matmul(act, layer.down.weight)?;
            let down = tape.add_row(down, layer.down.bias)?;
            x = tape.add(x, down)?;
        }
        let x = tape.layer_norm(x, params.final_norm.gain, params.final_norm.bias, LAYER_NORM_EPS)?;
        Ok(tape.reshape(x, &[b, t, h])?)
    }

    /// Forward pass on a private tape, returning the hidden states only.
    pub fn hidden_states(&self, batch: &TokenBatch) -> Result<Tensor, EncoderError> {
        let mut tape = Tape::new();
        let params = self.bind_frozen(&mut tape);
        let out = self.forward(&mut tape, &params, batch)?;
        Ok(tape.value(out).clone())
    }
}
