//! Plain causal linear attention, chunked and token by token. No gate, no
//! softmax, no scaling; `cfg.chunk_size` sets the chunk grid.

use super::{AttentionVars, HybridAttnConfig};
use crate::error::Result;
use crate::numcore::{concat_cols, concat_rows, Tensor, Var};

type Qkv<'t> = (Var<'t>, Var<'t>, Var<'t>);

fn project<'t>(x: Var<'t>, p: &AttentionVars<'t>) -> Result<Qkv<'t>> {
    Ok((x.linear(p.wq, p.bq)?, x.linear(p.wk, p.bk)?, x.linear(p.wv, p.bv)?))
}

/// `O_[i+1] = Q S_[i] + (Q Kᵀ ⊙ M) V`, `S_[i+1] = S_[i] + Kᵀ V` with the
/// inclusive lower-triangular mask `M`.
pub fn linear_attention_causal<'t>(
    x: Var<'t>,
    batch: usize,
    cfg: &HybridAttnConfig,
    p: &AttentionVars<'t>,
) -> Result<Var<'t>> {
    let (t, n) = cfg.layout(x.rows(), x.cols(), batch)?;
    let (c, d) = (cfg.chunk_size, cfg.head_dim);
    let (q, k, v) = project(x, p)?;
    let mask = x.tape().constant(Tensor::new(
        &[c, c],
        (0..c * c).map(|i| if i % c <= i / c { 1.0 } else { 0.0 }).collect(),
    )?);

    let mut blocks = Vec::with_capacity(batch * n);
    for b in 0..batch {
        let mut per_chunk: Vec<Vec<Var<'t>>> = vec![Vec::new(); n];
        for h in 0..cfg.num_heads {
            let mut s: Option<Var<'t>> = None;
            for (ci, slot) in per_chunk.iter_mut().enumerate() {
                let r0 = b * t + ci * c;
                let qc = q.slice(r0, c, h * d, d)?;
                let kc = k.slice(r0, c, h * d, d)?;
                let vc = v.slice(r0, c, h * d, d)?;
                let intra = qc.matmul_nt(kc)?.mul(mask)?.matmul(vc)?;
                slot.push(match s {
                    Some(s) => qc.matmul(s)?.add(intra)?,
                    None => intra,
                });
                let kv = kc.matmul_tn(vc)?;
                s = Some(match s {
                    Some(s) => s.add(kv)?,
                    None => kv,
                });
            }
        }
        for heads in per_chunk {
            blocks.push(concat_cols(&heads)?);
        }
    }
    concat_rows(&blocks)?.linear(p.wo, p.bo)
}

/// `S_t = S_{t-1} + k_tᵀ v_t`, `o_t = q_t S_t`, one token at a time.
pub fn linear_attention_recurrent<'t>(
    x: Var<'t>,
    batch: usize,
    cfg: &HybridAttnConfig,
    p: &AttentionVars<'t>,
) -> Result<Var<'t>> {
    let (t, _) = cfg.layout(x.rows(), x.cols(), batch)?;
    let d = cfg.head_dim;
    let (q, k, v) = project(x, p)?;
    let mut rows = Vec::with_capacity(batch * t);
    for b in 0..batch {
        let mut per_token: Vec<Vec<Var<'t>>> = vec![Vec::new(); t];
        for h in 0..cfg.num_heads {
            let mut s: Option<Var<'t>> = None;
            for (i, slot) in per_token.iter_mut().enumerate() {
                let r = b * t + i;
                let kv = k.slice(r, 1, h * d, d)?.matmul_tn(v.slice(r, 1, h * d, d)?)?;
                let next = match s {
                    Some(s) => s.add(kv)?,
                    None => kv,
                };
                slot.push(q.slice(r, 1, h * d, d)?.matmul(next)?);
                s = Some(next);
            }
        }
        for heads in per_token {
            rows.push(concat_cols(&heads)?);
        }
    }
    concat_rows(&rows)?.linear(p.wo, p.bo)
}

#[cfg(test)]
mod tests {
    use super::super::AttentionParams;
    use super::*;
    use crate::numcore::{with_precision, Precision, RngState, Tape};

    #[test]
    fn one_token_closed_form() {
        with_precision(Precision::F64, || {
            let cfg = HybridAttnConfig::new(1, 3, 1);
            let mut rng = RngState::new(0);
            let mut p = AttentionParams::random(&cfg, 1.0, &mut rng);
            p.wo = Tensor::eye(3);
            p.bo = Tensor::zeros(&[1, 3]);
            let x = Tensor::gaussian(&[1, 3], &mut rng);
            let tape = Tape::new();
            let out = linear_attention_causal(tape.constant(x.clone()), 1, &cfg, &p.attach(&tape, false)).unwrap();
            let q = x.matmul(&p.wq).unwrap().add(&p.bq).unwrap();
            let k = x.matmul(&p.wk).unwrap().add(&p.bk).unwrap();
            let v = x.matmul(&p.wv).unwrap().add(&p.bv).unwrap();
            let kq: f64 = k.data().iter().zip(q.data()).map(|(a, b)| a * b).sum();
            assert!(out.value().max_abs_diff(&v.scale(kq)) < 1e-12);
        });
    }

    #[test]
    fn chunked_matches_token_loop() {
        with_precision(Precision::F64, || {
            let cfg = HybridAttnConfig::new(2, 3, 4);
            let mut rng = RngState::new(1);
            let p = AttentionParams::random(&cfg, 0.5, &mut rng);
            let tape = Tape::new();
            let pv = p.attach(&tape, false);
            let x = tape.constant(Tensor::gaussian(&[16, 6], &mut rng));
            let a = linear_attention_causal(x, 2, &cfg, &pv).unwrap();
            let b = linear_attention_recurrent(x, 2, &cfg, &pv).unwrap();
            assert!(a.value().max_abs_diff(&b.value()) < 1e-12);
        });
    }

    #[test]
    fn zeroing_a_token_leaves_the_past() {
        let cfg = HybridAttnConfig::new(1, 2, 4);
        let mut rng = RngState::new(2);
        let p = AttentionParams::random(&cfg, 0.5, &mut rng);
        let x = Tensor::gaussian(&[8, 2], &mut rng);
        let mut y = x.clone();
        for v in &mut y.data_mut()[5 * 2..6 * 2] {
            *v = 0.0;
        }
        let tape = Tape::new();
        let pv = p.attach(&tape, false);
        let a = linear_attention_causal(tape.constant(x), 1, &cfg, &pv).unwrap().value();
        let b = linear_attention_causal(tape.constant(y), 1, &cfg, &pv).unwrap().value();
        assert_eq!(a.data()[..10], b.data()[..10]);
        assert_ne!(a.data()[10..12], b.data()[10..12]);
    }
}
