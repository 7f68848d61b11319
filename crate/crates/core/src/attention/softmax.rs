use super::{AttentionVars, HybridAttnConfig};
use crate::error::{Error, Result};
use crate::numcore::{concat_cols, concat_rows, Tensor, Var};

/// Large enough that `exp` underflows to exactly zero after the max shift.
const MASKED: f64 = -1e30;

/// Quadratic multi-head softmax attention over each whole sequence. Uses
/// `cfg.num_heads`, `cfg.head_dim` and `cfg.intra_scale`; the chunk grid is
/// ignored.
pub fn softmax_attention_full<'t>(
    x: Var<'t>,
    batch: usize,
    causal: bool,
    cfg: &HybridAttnConfig,
    p: &AttentionVars<'t>,
) -> Result<Var<'t>> {
    let flat = HybridAttnConfig { chunk_size: 1, ..*cfg };
    let (t, _) = flat.layout(x.rows(), x.cols(), batch)?;
    if t == 0 {
        return Err(Error::contract("empty sequence"));
    }
    let d = cfg.head_dim;
    let q = x.linear(p.wq, p.bq)?;
    let k = x.linear(p.wk, p.bk)?;
    let v = x.linear(p.wv, p.bv)?;
    let mask = if causal {
        let m = (0..t * t).map(|i| if i % t <= i / t { 0.0 } else { MASKED }).collect();
        Some(x.tape().constant(Tensor::new(&[t, t], m)?))
    } else {
        None
    };
    let mut seqs = Vec::with_capacity(batch);
    for b in 0..batch {
        let mut heads = Vec::with_capacity(cfg.num_heads);
        for h in 0..cfg.num_heads {
            let sl = |m: &Var<'t>| m.slice(b * t, t, h * d, d);
            let mut scores = sl(&q)?.matmul_nt(sl(&k)?)?;
            if let Some(m) = mask {
                scores = scores.add(m)?;
            }
            heads.push(scores.softmax_rows(cfg.intra_scale)?.matmul(sl(&v)?)?);
        }
        seqs.push(concat_cols(&heads)?);
    }
    concat_rows(&seqs)?.linear(p.wo, p.bo)
}

#[cfg(test)]
mod tests {
    use super::super::AttentionParams;
    use super::*;
    use crate::numcore::{with_precision, Precision, RngState, Tape};

    #[test]
    fn zero_scores_average_values() {
        with_precision(Precision::F64, || {
            let cfg = HybridAttnConfig::new(1, 2, 1);
            let mut rng = RngState::new(0);
            let mut p = AttentionParams::random(&cfg, 1.0, &mut rng);
            p.wq = Tensor::zeros(&[2, 2]);
            p.bq = Tensor::zeros(&[1, 2]);
            p.wo = Tensor::eye(2);
            p.bo = Tensor::zeros(&[1, 2]);
            let x = Tensor::gaussian(&[5, 2], &mut rng);
            let tape = Tape::new();
            let out = softmax_attention_full(tape.constant(x.clone()), 1, false, &cfg, &p.attach(&tape, false)).unwrap();
            let v = x.matmul(&p.wv).unwrap();
            for j in 0..2 {
                let mean = (0..5).map(|r| v.row(r)[j]).sum::<f64>() / 5.0 + p.bv.data()[j];
                for r in 0..5 {
                    assert!((out.value().row(r)[j] - mean).abs() < 1e-12);
                }
            }
        });
    }

    #[test]
    fn noncausal_is_permutation_equivariant() {
        with_precision(Precision::F64, || {
            let cfg = HybridAttnConfig::new(2, 2, 1);
            let mut rng = RngState::new(1);
            let p = AttentionParams::random(&cfg, 0.7, &mut rng);
            let x = Tensor::gaussian(&[6, 4], &mut rng);
            let perm = [3, 0, 5, 1, 4, 2];
            let xp_data: Vec<f64> = perm.iter().flat_map(|&r| x.row(r).to_vec()).collect();
            let xp = Tensor::new(&[6, 4], xp_data).unwrap();
            let tape = Tape::new();
            let pv = p.attach(&tape, false);
            let a = softmax_attention_full(tape.constant(x), 1, false, &cfg, &pv).unwrap().value();
            let b = softmax_attention_full(tape.constant(xp), 1, false, &cfg, &pv).unwrap().value();
            for (i, &r) in perm.iter().enumerate() {
                for j in 0..4 {
                    assert!((b.row(i)[j] - a.row(r)[j]).abs() < 1e-12);
                }
            }
        });
    }

    #[test]
    fn causal_first_token_sees_itself() {
        let cfg = HybridAttnConfig::new(1, 2, 1);
        let mut rng = RngState::new(2);
        let p = AttentionParams::random(&cfg, 0.7, &mut rng);
        let x = Tensor::gaussian(&[4, 2], &mut rng);
        let mut y = x.clone();
        y.data_mut()[6] += 1.0;
        let tape = Tape::new();
        let pv = p.attach(&tape, false);
        let a = softmax_attention_full(tape.constant(x), 1, true, &cfg, &pv).unwrap().value();
        let b = softmax_attention_full(tape.constant(y), 1, true, &cfg, &pv).unwrap().value();
        assert_eq!(a.data()[..6], b.data()[..6]);
    }
}
