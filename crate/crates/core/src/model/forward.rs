use super::{
    block, block_base, final_base, patchify, positional_table, time_features, unpatchify, ConditioningInput,
    ModelConfig, ModelParams, CLASS_TABLE, PATCH_B, PATCH_W, TIME_B1, TIME_B2, TIME_W1, TIME_W2,
};
use crate::attention::{hybrid_forward_chunkwise, hybrid_forward_recurrent, AttentionVars, ChunkState};
use crate::error::{Error, Result};
use crate::numcore::{Tape, Tensor, Var};

const LN_EPS: f64 = 1e-6;

/// Which of the two equivalent attention evaluations to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionForm {
    #[default]
    Chunkwise,
    Recurrent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForwardOptions {
    pub use_cache: bool,
    pub form: AttentionForm,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            use_cache: true,
            form: AttentionForm::Chunkwise,
        }
    }
}

/// Model parameters recorded on a tape.
pub struct ModelVars<'t> {
    tape: &'t Tape,
    config: ModelConfig,
    vars: Vec<Var<'t>>,
    pos: Tensor,
}

pub struct TokenOutput<'t> {
    /// `(B·N·M) × patch_dim` velocity in token layout.
    pub velocity: Var<'t>,
    /// `[layer][sequence]`.
    pub states: Vec<Vec<ChunkState>>,
}

impl<'t> ModelVars<'t> {
    pub(super) fn new(tape: &'t Tape, params: &ModelParams, trainable: bool) -> Result<Self> {
        let cfg = *params.config();
        let (gh, gw) = cfg.grid();
        let vars = params
            .tensors()
            .iter()
            .map(|t| {
                if trainable {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                }
            })
            .collect();
        Ok(Self {
            tape,
            config: cfg,
            vars,
            pos: positional_table(gh, gw, cfg.hidden_size)?,
        })
    }

    /// Wraps vars already on `tape`, in [`param_layout`](super::param_layout)
    /// order and shapes.
    pub fn from_vars(tape: &'t Tape, config: ModelConfig, vars: Vec<Var<'t>>) -> Result<Self> {
        config.validate()?;
        let layout = super::param_layout(&config);
        if vars.len() != layout.len() {
            return Err(Error::contract(format!("{} vars for {} parameters", vars.len(), layout.len())));
        }
        for (v, (name, shape)) in vars.iter().zip(&layout) {
            if v.shape() != *shape {
                return Err(Error::contract(format!("{name} has shape {:?}, expected {shape:?}", v.shape())));
            }
        }
        let (gh, gw) = config.grid();
        Ok(Self {
            tape,
            config,
            vars,
            pos: positional_table(gh, gw, config.hidden_size)?,
        })
    }

    /// Leaves in parameter storage order.
    pub fn vars(&self) -> &[Var<'t>] {
        &self.vars
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn attention(&self, layer: usize) -> AttentionVars<'t> {
        let base = block_base(layer) + block::ATTN;
        let mut a = [self.vars[base]; 10];
        a.copy_from_slice(&self.vars[base..base + 10]);
        AttentionVars::from_array(a)
    }

    /// Shift/scale modulated layer norm.
    fn modulate(x: Var<'t>, shift: Var<'t>, scale: Var<'t>) -> Result<Var<'t>> {
        x.layer_norm(LN_EPS)?.mul(scale.add_const(1.0)?)?.add(shift)
    }

    /// Runs `B = conds.len()` sequences of `N` chunks each. `tokens` holds
    /// the patchified chunks sequence-major, chunk-major.
    pub fn forward_tokens(
        &self,
        tokens: Var<'t>,
        conds: &[ConditioningInput],
        opts: &ForwardOptions,
        init: Option<&[Vec<ChunkState>]>,
    ) -> Result<TokenOutput<'t>> {
        let cfg = &self.config;
        let b = conds.len();
        let n = conds.first().map_or(0, |c| c.times.len());
        if b == 0 || n == 0 {
            return Err(Error::contract("forward needs at least one sequence of one chunk"));
        }
        if let Some(c) = conds.iter().find(|c| c.times.len() != n) {
            return Err(Error::contract(format!(
                "mixed sequence lengths in one batch ({} and {n})",
                c.times.len()
            )));
        }
        let (m, h, pd) = (cfg.tokens_per_image(), cfg.hidden_size, cfg.patch_dim());
        if tokens.shape() != [b * n * m, pd] {
            return Err(Error::shape("model tokens", &tokens.shape(), &[b * n * m, pd]));
        }
        if let Some(init) = init {
            if init.len() != cfg.depth || init.iter().any(|l| l.len() != b) {
                return Err(Error::contract("initial states must be given per layer and per sequence"));
            }
        }

        // per-chunk conditioning vector
        let mut times = Vec::with_capacity(b * n);
        let mut rows = Vec::with_capacity(b * n);
        for c in conds {
            let row = c.class_row(cfg.num_classes)?;
            for t in &c.times {
                times.push(t.get());
                rows.push(row);
            }
        }
        let v = &self.vars;
        let tf = self.tape.constant(time_features(&times, cfg.time_freq_dim)?);
        let temb = tf.linear(v[TIME_W1], v[TIME_B1])?.silu()?.linear(v[TIME_W2], v[TIME_B2])?;
        let cond = temb.add(v[CLASS_TABLE].gather_rows(&rows)?)?.silu()?;

        let pos = self.tape.constant(Tensor::new(
            &[b * n * m, h],
            self.pos.data().repeat(b * n),
        )?);
        let mut x = tokens.linear(v[PATCH_W], v[PATCH_B])?.add(pos)?;

        let acfg = cfg.attention(opts.use_cache);
        let mut states = Vec::with_capacity(cfg.depth);
        for layer in 0..cfg.depth {
            let base = block_base(layer);
            let mods = cond.linear(v[base + block::ADA_W], v[base + block::ADA_B])?.repeat_rows(m)?;
            let part = |i: usize| mods.slice_cols(i * h, h);
            let (shift1, scale1, gate1) = (part(0)?, part(1)?, part(2)?);
            let (shift2, scale2, gate2) = (part(3)?, part(4)?, part(5)?);

            let a = Self::modulate(x, shift1, scale1)?;
            let init_l = init.map(|s| s[layer].as_slice());
            let av = self.attention(layer);
            let out = match opts.form {
                AttentionForm::Chunkwise => hybrid_forward_chunkwise(a, b, &acfg, &av, init_l)?,
                AttentionForm::Recurrent => hybrid_forward_recurrent(a, b, &acfg, &av, init_l)?,
            };
            x = x.add(gate1.mul(out.out)?)?;
            states.push(out.states);

            let mlp = Self::modulate(x, shift2, scale2)?
                .linear(v[base + block::MLP_W1], v[base + block::MLP_B1])?
                .gelu()?
                .linear(v[base + block::MLP_W2], v[base + block::MLP_B2])?;
            x = x.add(gate2.mul(mlp)?)?;
        }

        let fb = final_base(cfg.depth);
        let fm = cond.linear(v[fb], v[fb + 1])?.repeat_rows(m)?;
        let velocity = Self::modulate(x, fm.slice_cols(0, h)?, fm.slice_cols(h, h)?)?.linear(v[fb + 2], v[fb + 3])?;
        Ok(TokenOutput { velocity, states })
    }
}

/// Patchifies `chunks` of every sequence into one stacked token matrix.
pub fn stack_tokens(cfg: &ModelConfig, chunks: &[&Tensor]) -> Result<Tensor> {
    let dims = cfg.latent_shape.dims();
    let (m, pd) = (cfg.tokens_per_image(), cfg.patch_dim());
    let mut data = Vec::with_capacity(chunks.len() * m * pd);
    for z in chunks {
        if z.shape() != dims {
            return Err(Error::shape("model input", z.shape(), &dims));
        }
        data.extend_from_slice(patchify(z, cfg.patch_size)?.data());
    }
    Tensor::new(&[chunks.len() * m, pd], data)
}

/// Splits a stacked token matrix back into latents.
pub fn unstack_tokens(cfg: &ModelConfig, tokens: &Tensor) -> Result<Vec<Tensor>> {
    let (m, pd) = (cfg.tokens_per_image(), cfg.patch_dim());
    tokens
        .data()
        .chunks_exact(m * pd)
        .map(|c| unpatchify(&Tensor::new(&[m, pd], c.to_vec())?, cfg.patch_size, cfg.latent_shape.dims()))
        .collect()
}

/// Velocity for every chunk of one sequence plus the per-layer states after
/// its last chunk.
pub fn forward(
    params: &ModelParams,
    chunks: &[Tensor],
    cond: &ConditioningInput,
    init: Option<&[ChunkState]>,
) -> Result<(Vec<Tensor>, Vec<ChunkState>)> {
    forward_with(params, chunks, cond, &ForwardOptions::default(), init)
}

pub fn forward_with(
    params: &ModelParams,
    chunks: &[Tensor],
    cond: &ConditioningInput,
    opts: &ForwardOptions,
    init: Option<&[ChunkState]>,
) -> Result<(Vec<Tensor>, Vec<ChunkState>)> {
    if chunks.len() != cond.times.len() {
        return Err(Error::contract(format!(
            "{} chunks but {} times",
            chunks.len(),
            cond.times.len()
        )));
    }
    let cfg = params.config();
    let tape = Tape::new();
    let mv = params.attach(&tape, false)?;
    let refs: Vec<&Tensor> = chunks.iter().collect();
    let tokens = tape.constant(stack_tokens(cfg, &refs)?);
    let init: Option<Vec<Vec<ChunkState>>> = init.map(|s| s.iter().map(|l| vec![l.clone()]).collect());
    let out = mv.forward_tokens(tokens, std::slice::from_ref(cond), opts, init.as_deref())?;
    let v = unstack_tokens(cfg, &out.velocity.value())?;
    let states = out.states.into_iter().map(|mut l| l.remove(0)).collect();
    Ok((v, states))
}
