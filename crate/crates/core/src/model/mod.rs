//! Flow transformer over sequences of patchified latents.
//!
//! Each latent becomes one attention chunk of `M` tokens. Every block
//! applies adaptive layer norm whose shift, scale and residual gate come
//! from the chunk's own time embedding plus the class embedding, followed by
//! hybrid attention and an MLP. The velocity head starts at exactly zero.

mod forward;
mod patch;

pub use forward::{
    forward, forward_with, stack_tokens, unstack_tokens, AttentionForm, ForwardOptions, ModelVars, TokenOutput,
};
pub use patch::{patchify, positional_table, time_features, unpatchify};

use serde::{Deserialize, Serialize};

use crate::attention::{xavier, HybridAttnConfig};
use crate::error::{Error, Result};
use crate::interpolant::FlowTime;
use crate::numcore::{RngState, Tape, Tensor};
use crate::sequence::LatentShape;

/// Class label meaning "no class"; maps to the last row of the class table.
pub const NULL_CLASS: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub latent_shape: LatentShape,
    pub patch_size: usize,
    pub hidden_size: usize,
    pub depth: usize,
    pub num_heads: usize,
    pub num_classes: usize,
    pub mlp_ratio: usize,
    pub seq_len_train: usize,
    /// Width of the sinusoidal time features.
    pub time_freq_dim: usize,
    pub gate_temperature: f64,
    pub use_gate: bool,
    /// Intra-chunk score scale; `None` means `1/√head_dim`.
    pub intra_scale: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_shape: LatentShape::new(4, 8, 8),
            patch_size: 2,
            hidden_size: 128,
            depth: 4,
            num_heads: 4,
            num_classes: 4,
            mlp_ratio: 4,
            seq_len_train: 5,
            time_freq_dim: 256,
            gate_temperature: 16.0,
            use_gate: true,
            intra_scale: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let s = self.latent_shape;
        let p = self.patch_size;
        if s.numel() == 0 {
            return Err(Error::Config("latent extents must be positive".into()));
        }
        if p == 0 || !s.height.is_multiple_of(p) || !s.width.is_multiple_of(p) {
            return Err(Error::Config(format!(
                "latent {}×{} is not divisible by patch size {p}",
                s.height, s.width
            )));
        }
        if self.num_heads == 0 || !self.hidden_size.is_multiple_of(self.num_heads) {
            return Err(Error::Config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden_size, self.num_heads
            )));
        }
        if !self.hidden_size.is_multiple_of(4) {
            return Err(Error::Config("hidden size must be a multiple of 4".into()));
        }
        if self.num_classes == 0 || self.mlp_ratio == 0 || self.seq_len_train == 0 {
            return Err(Error::Config("num_classes, mlp_ratio and seq_len_train must be positive".into()));
        }
        if self.time_freq_dim == 0 || !self.time_freq_dim.is_multiple_of(2) {
            return Err(Error::Config("time_freq_dim must be positive and even".into()));
        }
        self.attention(true).validate()
    }

    pub fn grid(&self) -> (usize, usize) {
        let s = self.latent_shape;
        (s.height / self.patch_size, s.width / self.patch_size)
    }

    /// Tokens per image `M`, which is also the attention chunk size.
    pub fn tokens_per_image(&self) -> usize {
        let (gh, gw) = self.grid();
        gh * gw
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.latent_shape.channels
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_size / self.num_heads
    }

    pub fn attention(&self, use_cache: bool) -> HybridAttnConfig {
        let mut a = HybridAttnConfig::new(self.num_heads, self.head_dim(), self.tokens_per_image());
        a.gate_temperature = self.gate_temperature;
        a.use_gate = self.use_gate;
        a.use_cache = use_cache;
        if let Some(s) = self.intra_scale {
            a.intra_scale = s;
        }
        a
    }
}

/// Closed-form number of trainable scalars. The positional table is fixed
/// and not counted.
pub fn count_params(cfg: &ModelConfig) -> usize {
    let h = cfg.hidden_size;
    let pd = cfg.patch_dim();
    let f = cfg.time_freq_dim;
    let r = cfg.mlp_ratio * h;
    let embed = pd * h + h;
    let time = f * h + h + h * h + h;
    let class = (cfg.num_classes + 1) * h;
    let ada = h * 6 * h + 6 * h;
    let attn = 4 * (h * h + h) + h * cfg.num_heads + cfg.num_heads;
    let mlp = h * r + r + r * h + h;
    let head = h * 2 * h + 2 * h + h * pd + pd;
    embed + time + class + cfg.depth * (ada + attn + mlp) + head
}

// ── parameter layout ───────────────────────────────────────────────────────

pub(crate) const PATCH_W: usize = 0;
pub(crate) const PATCH_B: usize = 1;
pub(crate) const TIME_W1: usize = 2;
pub(crate) const TIME_B1: usize = 3;
pub(crate) const TIME_W2: usize = 4;
pub(crate) const TIME_B2: usize = 5;
pub(crate) const CLASS_TABLE: usize = 6;
const STEM: usize = 7;
pub(crate) const PER_BLOCK: usize = 16;

/// Offsets inside a block: modulation, the ten attention tensors, the MLP.
pub(crate) mod block {
    pub const ADA_W: usize = 0;
    pub const ADA_B: usize = 1;
    pub const ATTN: usize = 2;
    pub const MLP_W1: usize = 12;
    pub const MLP_B1: usize = 13;
    pub const MLP_W2: usize = 14;
    pub const MLP_B2: usize = 15;
}

pub(crate) fn block_base(i: usize) -> usize {
    STEM + i * PER_BLOCK
}

/// Index of the final modulation weight; bias, head weight and head bias
/// follow.
pub(crate) fn final_base(depth: usize) -> usize {
    STEM + depth * PER_BLOCK
}

const ATTN_NAMES: [&str; 10] = ["wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "wg", "bg"];

/// Names and shapes of every parameter tensor in storage order.
pub fn param_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let h = cfg.hidden_size;
    let pd = cfg.patch_dim();
    let r = cfg.mlp_ratio * h;
    let heads = cfg.num_heads;
    let mut v: Vec<(String, Vec<usize>)> = vec![
        ("patch.w".into(), vec![pd, h]),
        ("patch.b".into(), vec![1, h]),
        ("time.w1".into(), vec![cfg.time_freq_dim, h]),
        ("time.b1".into(), vec![1, h]),
        ("time.w2".into(), vec![h, h]),
        ("time.b2".into(), vec![1, h]),
        ("class.table".into(), vec![cfg.num_classes + 1, h]),
    ];
    for i in 0..cfg.depth {
        let b = |s: &str| format!("blocks.{i}.{s}");
        v.push((b("ada.w"), vec![h, 6 * h]));
        v.push((b("ada.b"), vec![1, 6 * h]));
        for (j, n) in ATTN_NAMES.iter().enumerate() {
            let shape = match j {
                8 => vec![h, heads],
                9 => vec![1, heads],
                _ if j % 2 == 0 => vec![h, h],
                _ => vec![1, h],
            };
            v.push((b(&format!("attn.{n}")), shape));
        }
        v.push((b("mlp.w1"), vec![h, r]));
        v.push((b("mlp.b1"), vec![1, r]));
        v.push((b("mlp.w2"), vec![r, h]));
        v.push((b("mlp.b2"), vec![1, h]));
    }
    v.push(("final.ada.w".into(), vec![h, 2 * h]));
    v.push(("final.ada.b".into(), vec![1, 2 * h]));
    v.push(("final.head.w".into(), vec![h, pd]));
    v.push(("final.head.b".into(), vec![1, pd]));
    v
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Xavier weights and zero biases for linear maps, `N(0, 0.02²)` time
    /// MLP and class table, zero modulation and zero velocity head.
    pub fn init(config: ModelConfig, rng: &mut RngState) -> Result<Self> {
        config.validate()?;
        let layout = param_layout(&config);
        let mut tensors = Vec::with_capacity(layout.len());
        for (name, shape) in &layout {
            // every bias is a single row; the class table has at least two
            let t = if shape[0] == 1 || name.contains("ada.") || name.starts_with("final.head") {
                Tensor::zeros(shape)
            } else if name.starts_with("time.") || name == "class.table" {
                Tensor::gaussian(shape, rng).scale(0.02)
            } else {
                xavier(shape[0], shape[1], rng)
            };
            tensors.push(t);
        }
        Ok(Self { config, tensors })
    }

    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let layout = param_layout(&config);
        if layout.len() != tensors.len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Format(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn into_tensors(self) -> Vec<Tensor> {
        self.tensors
    }

    pub fn names(&self) -> Vec<String> {
        param_layout(&self.config).into_iter().map(|(n, _)| n).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names().iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Adds `N(0, std²)` noise to every tensor. Used to leave the
    /// degenerate zero-initialised point in tests.
    pub fn perturbed(&self, std: f64, rng: &mut RngState) -> Self {
        let tensors = self
            .tensors
            .iter()
            .map(|t| {
                let n = Tensor::gaussian(t.shape(), rng);
                t.zip_with(&n, "perturb", |a, b| a + std * b).expect("same shape")
            })
            .collect();
        Self {
            config: self.config,
            tensors,
        }
    }

    pub fn attach<'t>(&self, tape: &'t Tape, trainable: bool) -> Result<ModelVars<'t>> {
        ModelVars::new(tape, self, trainable)
    }
}

/// Conditioning of one sequence: one time per chunk and a class label.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningInput {
    pub times: Vec<FlowTime>,
    /// A class index or [`NULL_CLASS`].
    pub class_id: usize,
}

impl ConditioningInput {
    pub fn new(times: Vec<FlowTime>, class_id: usize) -> Self {
        Self { times, class_id }
    }

    pub(crate) fn class_row(&self, num_classes: usize) -> Result<usize> {
        match self.class_id {
            NULL_CLASS => Ok(num_classes),
            k if k < num_classes => Ok(k),
            k => Err(Error::contract(format!("class {k} out of range ({num_classes} classes)"))),
        }
    }
}
