//! Hybrid chunkwise linear attention and the reference mechanisms it is
//! checked against.
//!
//! Tokens are grouped into chunks of `C` rows. Inside a chunk attention is
//! bidirectional softmax; across chunks information flows only through a
//! per-head `d × d` state that is decayed by a learned scalar gate and then
//! extended with the chunk's `KᵀV`:
//!
//! ```text
//! O_[i+1] = Q_[i+1] S_[i] + softmax(s · Q_[i+1] K_[i+1]ᵀ) V_[i+1]
//! S_[i+1] = γ_[i+1] S_[i] + K_[i+1]ᵀ V_[i+1]
//! γ_[i+1] = exp(mean_t log g_t),   g_t = sigmoid(W_γ x_t)^(1/τ)
//! ```
//!
//! Inputs of every tape-level function are `batch` sequences of equal
//! length stacked along the rows.

mod hybrid;
pub mod kernels;
mod linear;
mod softmax;

pub use hybrid::{hybrid_forward_chunkwise, hybrid_forward_recurrent, HybridOutput};
pub use linear::{linear_attention_causal, linear_attention_recurrent};
pub use softmax::softmax_attention_full;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{RngState, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridAttnConfig {
    pub num_heads: usize,
    pub head_dim: usize,
    /// Tokens per chunk; one image's worth of patches.
    pub chunk_size: usize,
    pub gate_temperature: f64,
    pub use_gate: bool,
    /// `false` drops the inter-chunk term entirely.
    pub use_cache: bool,
    pub intra_scale: f64,
}

impl HybridAttnConfig {
    pub fn new(num_heads: usize, head_dim: usize, chunk_size: usize) -> Self {
        Self {
            num_heads,
            head_dim,
            chunk_size,
            gate_temperature: 16.0,
            use_gate: true,
            use_cache: true,
            intra_scale: 1.0 / (head_dim as f64).sqrt(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.num_heads * self.head_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_heads == 0 || self.head_dim == 0 || self.chunk_size == 0 {
            return Err(Error::Config("attention heads, head_dim and chunk_size must be positive".into()));
        }
        if !(self.gate_temperature > 0.0 && self.gate_temperature.is_finite()) {
            return Err(Error::Config(format!(
                "gate temperature must be positive, got {}",
                self.gate_temperature
            )));
        }
        if !self.intra_scale.is_finite() {
            return Err(Error::Config("intra_scale must be finite".into()));
        }
        Ok(())
    }

    /// Rows per sequence and chunks per sequence for a stacked input.
    pub(crate) fn layout(&self, rows: usize, cols: usize, batch: usize) -> Result<(usize, usize)> {
        self.validate()?;
        if cols != self.hidden() {
            return Err(Error::shape("attention input", &[rows, cols], &[rows, self.hidden()]));
        }
        if batch == 0 || !rows.is_multiple_of(batch) {
            return Err(Error::contract(format!("{rows} rows cannot hold {batch} equal sequences")));
        }
        let t = rows / batch;
        if !t.is_multiple_of(self.chunk_size) {
            return Err(Error::contract(format!(
                "sequence of {t} tokens leaves a partial chunk (chunk size {})",
                self.chunk_size
            )));
        }
        Ok((t, t / self.chunk_size))
    }
}

/// Weights of one attention layer. Matrices act on row vectors (`x · W`).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    /// `hidden × num_heads`.
    pub wg: Tensor,
    pub bg: Tensor,
}

pub(crate) fn xavier(fan_in: usize, fan_out: usize, rng: &mut RngState) -> Tensor {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(&[fan_in, fan_out], rng).map(|u| (2.0 * u - 1.0) * a)
}

impl AttentionParams {
    /// Xavier-uniform weights, zero biases.
    pub fn init(cfg: &HybridAttnConfig, rng: &mut RngState) -> Self {
        let h = cfg.hidden();
        let heads = cfg.num_heads;
        Self {
            wq: xavier(h, h, rng),
            bq: Tensor::zeros(&[1, h]),
            wk: xavier(h, h, rng),
            bk: Tensor::zeros(&[1, h]),
            wv: xavier(h, h, rng),
            bv: Tensor::zeros(&[1, h]),
            wo: xavier(h, h, rng),
            bo: Tensor::zeros(&[1, h]),
            wg: xavier(h, heads, rng),
            bg: Tensor::zeros(&[1, heads]),
        }
    }

    /// All weights drawn from `N(0, std²)`, biases included.
    pub fn random(cfg: &HybridAttnConfig, std: f64, rng: &mut RngState) -> Self {
        let h = cfg.hidden();
        let heads = cfg.num_heads;
        let mut g = |r: usize, c: usize| Tensor::gaussian(&[r, c], rng).scale(std);
        Self {
            wq: g(h, h),
            bq: g(1, h),
            wk: g(h, h),
            bk: g(1, h),
            wv: g(h, h),
            bv: g(1, h),
            wo: g(h, h),
            bo: g(1, h),
            wg: g(h, heads),
            bg: g(1, heads),
        }
    }

    pub fn tensors(&self) -> [&Tensor; 10] {
        [
            &self.wq, &self.bq, &self.wk, &self.bk, &self.wv, &self.bv, &self.wo, &self.bo, &self.wg, &self.bg,
        ]
    }

    pub fn from_tensors(t: [Tensor; 10]) -> Self {
        let [wq, bq, wk, bk, wv, bv, wo, bo, wg, bg] = t;
        Self {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
            wg,
            bg,
        }
    }

    /// Records the weights on `tape`, as trainable leaves or constants.
    pub fn attach<'t>(&self, tape: &'t Tape, trainable: bool) -> AttentionVars<'t> {
        let put = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let v = self.tensors().map(put);
        AttentionVars::from_array(v)
    }
}

/// [`AttentionParams`] living on a tape.
#[derive(Clone, Copy)]
pub struct AttentionVars<'t> {
    pub wq: Var<'t>,
    pub bq: Var<'t>,
    pub wk: Var<'t>,
    pub bk: Var<'t>,
    pub wv: Var<'t>,
    pub bv: Var<'t>,
    pub wo: Var<'t>,
    pub bo: Var<'t>,
    pub wg: Var<'t>,
    pub bg: Var<'t>,
}

impl<'t> AttentionVars<'t> {
    /// Order matches [`AttentionParams::tensors`].
    pub fn from_array(v: [Var<'t>; 10]) -> Self {
        let [wq, bq, wk, bk, wv, bv, wo, bo, wg, bg] = v;
        Self {
            wq,
            bq,
            wk,
            bk,
            wv,
            bv,
            wo,
            bo,
            wg,
            bg,
        }
    }

    pub fn to_array(&self) -> [Var<'t>; 10] {
        [
            self.wq, self.bq, self.wk, self.bk, self.wv, self.bv, self.wo, self.bo, self.wg, self.bg,
        ]
    }
}

/// Inter-chunk memory of one layer for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkState {
    /// One `d × d` matrix per head.
    pub heads: Vec<Tensor>,
    /// Number of chunks folded in so far.
    pub chunk_index: usize,
}

impl ChunkState {
    pub fn zeros(num_heads: usize, head_dim: usize) -> Self {
        Self {
            heads: (0..num_heads).map(|_| Tensor::zeros(&[head_dim, head_dim])).collect(),
            chunk_index: 0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.heads.iter().all(|s| s.data().iter().all(|&x| x == 0.0))
    }

    pub(crate) fn check(&self, cfg: &HybridAttnConfig) -> Result<()> {
        let d = cfg.head_dim;
        if self.heads.len() != cfg.num_heads {
            return Err(Error::contract(format!(
                "state has {} heads, layer has {}",
                self.heads.len(),
                cfg.num_heads
            )));
        }
        if let Some(s) = self.heads.iter().find(|s| s.shape() != [d, d]) {
            return Err(Error::shape("chunk state", s.shape(), &[d, d]));
        }
        Ok(())
    }

    /// Folds one chunk into every head: `S_h ← γ_h S_h + K_hᵀ V_h`.
    pub fn fold(&self, gammas: &[f64], keys: &[Tensor], values: &[Tensor]) -> Result<ChunkState> {
        if gammas.len() != self.heads.len() || keys.len() != self.heads.len() || values.len() != self.heads.len() {
            return Err(Error::contract("fold needs one decay, key block and value block per head"));
        }
        let heads = self
            .heads
            .iter()
            .zip(gammas)
            .zip(keys.iter().zip(values))
            .map(|((s, &g), (k, v))| state_update(s, g, k, v))
            .collect::<Result<Vec<_>>>()?;
        Ok(ChunkState {
            heads,
            chunk_index: self.chunk_index + 1,
        })
    }
}

/// Gate values and per-chunk decays recorded during one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GateTrace {
    /// `T × heads`.
    pub gates: Tensor,
    /// `chunks × heads`.
    pub decays: Tensor,
}

fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

/// `sigmoid(x · W_γ + b_γ)^(1/τ)` for every row of `x`, one column per head.
pub fn gate(x: &Tensor, wg: &Tensor, bg: &Tensor, temperature: f64) -> Result<Tensor> {
    if !(temperature > 0.0) {
        return Err(Error::contract(format!("gate temperature must be positive, got {temperature}")));
    }
    let logits = x.matmul(wg)?;
    if bg.numel() != logits.cols() {
        return Err(Error::shape("gate bias", bg.shape(), &[1, logits.cols()]));
    }
    let heads = logits.cols();
    let mut out = logits.into_data();
    for (i, l) in out.iter_mut().enumerate() {
        *l = (log_sigmoid(*l + bg.data()[i % heads]) / temperature).exp();
    }
    Tensor::new(&[x.rows(), heads], out)
}

/// Geometric mean of one head's gates over a chunk.
pub fn chunk_decay(gates: &[f64]) -> Result<f64> {
    if gates.is_empty() {
        return Err(Error::contract("chunk decay of an empty chunk"));
    }
    if let Some(g) = gates.iter().find(|&&g| !(g > 0.0)) {
        return Err(Error::contract(format!("gate value {g} is not positive")));
    }
    let mean_log = gates.iter().map(|g| g.ln()).sum::<f64>() / gates.len() as f64;
    Ok(mean_log.exp())
}

/// `γ·S + KᵀV` for one head.
pub fn state_update(s: &Tensor, gamma: f64, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    let kv = k.matmul_tn(v)?;
    if s.shape() != kv.shape() {
        return Err(Error::shape("state_update", s.shape(), kv.shape()));
    }
    s.zip_with(&kv, "state_update", |a, b| gamma * a + b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{with_precision, Precision};

    #[test]
    fn gate_at_zero_logit() {
        with_precision(Precision::F64, || {
            let x = Tensor::zeros(&[1, 3]);
            let g = gate(&x, &Tensor::zeros(&[3, 2]), &Tensor::zeros(&[1, 2]), 16.0).unwrap();
            for &v in g.data() {
                assert!((v - 0.957_603_280_698_573_6).abs() < 1e-12);
            }
            let g1 = gate(&x, &Tensor::zeros(&[3, 2]), &Tensor::zeros(&[1, 2]), 1.0).unwrap();
            assert!(g.data()[0] > g1.data()[0]);
        });
    }

    #[test]
    fn gate_saturates() {
        let x = Tensor::ones(&[1, 1]);
        let g = gate(&x, &Tensor::full(&[1, 1], 20.0), &Tensor::zeros(&[1, 1]), 16.0).unwrap();
        assert!((g.item() - 1.0).abs() < 1e-6);
        let g = gate(&x, &Tensor::full(&[1, 1], -200.0), &Tensor::zeros(&[1, 1]), 16.0).unwrap();
        assert!(g.item() > 0.0 && g.item() < 1.0);
    }

    #[test]
    fn decay_of_equal_and_limit_gates() {
        assert!((chunk_decay(&[0.7; 5]).unwrap() - 0.7).abs() < 1e-12);
        assert!((chunk_decay(&[0.25, 0.999_999]).unwrap() - 0.5).abs() < 1e-6);
        assert!(chunk_decay(&[0.5, 0.0]).is_err());
        assert!(chunk_decay(&[]).is_err());
    }

    #[test]
    fn state_update_cases() {
        with_precision(Precision::F64, || {
            let mut rng = RngState::new(2);
            let k = Tensor::gaussian(&[3, 2], &mut rng);
            let v = Tensor::gaussian(&[3, 2], &mut rng);
            let s = Tensor::gaussian(&[2, 2], &mut rng);
            let kv = k.matmul_tn(&v).unwrap();
            assert_eq!(state_update(&Tensor::zeros(&[2, 2]), 0.3, &k, &v).unwrap(), kv);
            assert_eq!(state_update(&s, 0.0, &k, &v).unwrap(), kv);
            let got = state_update(&s, 0.6, &k, &v).unwrap();
            for a in 0..2 {
                for b in 0..2 {
                    let mut want = 0.6 * s.data()[a * 2 + b];
                    for t in 0..3 {
                        want += k.data()[t * 2 + a] * v.data()[t * 2 + b];
                    }
                    assert!((got.data()[a * 2 + b] - want).abs() < 1e-12);
                }
            }
        });
    }

    #[test]
    fn fold_counts_chunks() {
        let s = ChunkState::zeros(2, 3);
        let k = vec![Tensor::ones(&[4, 3]); 2];
        let next = s.fold(&[0.5, 0.5], &k, &k).unwrap();
        assert_eq!(next.chunk_index, 1);
        assert!(!next.is_zero());
        assert!(s.fold(&[0.5], &k, &k).is_err());
    }

    #[test]
    fn config_layout_rejects_partial_chunk() {
        let cfg = HybridAttnConfig::new(2, 4, 4);
        assert_eq!(cfg.layout(24, 8, 2).unwrap(), (12, 3));
        assert!(cfg.layout(10, 8, 1).is_err());
        assert!(cfg.layout(8, 7, 1).is_err());
        let mut bad = cfg;
        bad.gate_temperature = 0.0;
        assert!(bad.validate().is_err());
    }
}
