use super::{AttentionVars, ChunkState, GateTrace, HybridAttnConfig};
use crate::error::{Error, Result};
use crate::numcore::{concat_cols, concat_rows, Tensor, Var};

pub struct HybridOutput<'t> {
    /// Same shape as the input tokens.
    pub out: Var<'t>,
    /// Final state of each sequence.
    pub states: Vec<ChunkState>,
    /// Gate values of each sequence; empty when the gate is disabled.
    pub traces: Vec<GateTrace>,
}

fn initial_states<'t>(
    x: &Var<'t>,
    cfg: &HybridAttnConfig,
    batch: usize,
    init: Option<&[ChunkState]>,
) -> Result<Vec<(Vec<Option<Var<'t>>>, usize)>> {
    let Some(init) = init else {
        return Ok(vec![(vec![None; cfg.num_heads], 0); batch]);
    };
    if init.len() != batch {
        return Err(Error::contract(format!("{} initial states for {batch} sequences", init.len())));
    }
    init.iter()
        .map(|s| {
            s.check(cfg)?;
            let heads = s
                .heads
                .iter()
                .map(|m| (!m.data().iter().all(|&v| v == 0.0)).then(|| x.tape().constant(m.clone())))
                .collect();
            Ok((heads, s.chunk_index))
        })
        .collect()
}

fn collect_state(heads: &[Option<Var<'_>>], chunk_index: usize, d: usize) -> ChunkState {
    ChunkState {
        heads: heads
            .iter()
            .map(|s| s.map_or_else(|| Tensor::zeros(&[d, d]), |v| (*v.value()).clone()))
            .collect(),
        chunk_index,
    }
}

/// One head of one chunk given its projections; advances `state` in place.
#[allow(clippy::too_many_arguments)]
fn chunk_head<'t>(
    cfg: &HybridAttnConfig,
    q: Var<'t>,
    k: Var<'t>,
    v: Var<'t>,
    gamma: Option<Var<'t>>,
    state: &mut Option<Var<'t>>,
) -> Result<Var<'t>> {
    let intra = q.matmul_nt(k)?.softmax_rows(cfg.intra_scale)?.matmul(v)?;
    if !cfg.use_cache {
        return Ok(intra);
    }
    let out = match state {
        Some(s) => q.matmul(*s)?.add(intra)?,
        None => intra,
    };
    let kv = k.matmul_tn(v)?;
    *state = Some(match (*state, gamma) {
        (None, _) => kv,
        (Some(s), Some(g)) => s.scale_by(g)?.add(kv)?,
        (Some(s), None) => s.add(kv)?,
    });
    Ok(out)
}

fn trace_of(log_g: &Var<'_>, decay_log: &Var<'_>, r0: usize, rows: usize, c0: usize, chunks: usize) -> Result<GateTrace> {
    let lg = log_g.value();
    let heads = lg.cols();
    let gates = lg.data()[r0 * heads..(r0 + rows) * heads].iter().map(|l| l.exp()).collect();
    let dl = decay_log.value();
    let decays = dl.data()[c0 * heads..(c0 + chunks) * heads].iter().map(|l| l.exp()).collect();
    Ok(GateTrace {
        gates: Tensor::new(&[rows, heads], gates)?,
        decays: Tensor::new(&[chunks, heads], decays)?,
    })
}

/// Training form: projections and gates for the whole stack at once, then
/// a scan over chunks per sequence and head.
pub fn hybrid_forward_chunkwise<'t>(
    x: Var<'t>,
    batch: usize,
    cfg: &HybridAttnConfig,
    p: &AttentionVars<'t>,
    init: Option<&[ChunkState]>,
) -> Result<HybridOutput<'t>> {
    let (t, n) = cfg.layout(x.rows(), x.cols(), batch)?;
    let (c, d, heads) = (cfg.chunk_size, cfg.head_dim, cfg.num_heads);
    let mut states = initial_states(&x, cfg, batch, init)?;

    let q = x.linear(p.wq, p.bq)?;
    let k = x.linear(p.wk, p.bk)?;
    let v = x.linear(p.wv, p.bv)?;

    // log γ per (chunk, head): mean over the chunk's rows of log g
    let gate_logs = if cfg.use_gate {
        let log_g = x.linear(p.wg, p.bg)?.log_sigmoid()?.scale(1.0 / cfg.gate_temperature)?;
        let mut avg = vec![0.0; c * heads * heads];
        for j in 0..c {
            for h in 0..heads {
                avg[(j * heads + h) * heads + h] = 1.0 / c as f64;
            }
        }
        let avg = x.tape().constant(Tensor::new(&[c * heads, heads], avg)?);
        let decay_log = log_g.reshape(&[batch * n, c * heads])?.matmul(avg)?;
        let gamma = decay_log.exp()?;
        Some((log_g, decay_log, gamma))
    } else {
        None
    };

    let mut blocks = Vec::with_capacity(batch * n);
    for (b, (state, _)) in states.iter_mut().enumerate() {
        let mut per_chunk: Vec<Vec<Var<'t>>> = vec![Vec::with_capacity(heads); n];
        for (h, s) in state.iter_mut().enumerate() {
            for (ci, slot) in per_chunk.iter_mut().enumerate() {
                let r0 = b * t + ci * c;
                let qc = q.slice(r0, c, h * d, d)?;
                let kc = k.slice(r0, c, h * d, d)?;
                let vc = v.slice(r0, c, h * d, d)?;
                let g = match &gate_logs {
                    Some((_, _, gamma)) => Some(gamma.slice(b * n + ci, 1, h, 1)?),
                    None => None,
                };
                slot.push(chunk_head(cfg, qc, kc, vc, g, s)?);
            }
        }
        for heads_out in per_chunk {
            blocks.push(concat_cols(&heads_out)?);
        }
    }
    let out = concat_rows(&blocks)?.linear(p.wo, p.bo)?;

    let mut traces = Vec::new();
    if let Some((log_g, decay_log, _)) = &gate_logs {
        for b in 0..batch {
            traces.push(trace_of(log_g, decay_log, b * t, t, b * n, n)?);
        }
    }
    let advanced = if cfg.use_cache { n } else { 0 };
    let states = states
        .iter()
        .map(|(s, idx)| collect_state(s, idx + advanced, d))
        .collect();
    Ok(HybridOutput { out, states, traces })
}

/// Inference form: a plain loop that projects one chunk at a time and
/// carries the state explicitly.
pub fn hybrid_forward_recurrent<'t>(
    x: Var<'t>,
    batch: usize,
    cfg: &HybridAttnConfig,
    p: &AttentionVars<'t>,
    init: Option<&[ChunkState]>,
) -> Result<HybridOutput<'t>> {
    let (t, n) = cfg.layout(x.rows(), x.cols(), batch)?;
    let (c, d, heads) = (cfg.chunk_size, cfg.head_dim, cfg.num_heads);
    let mut states = initial_states(&x, cfg, batch, init)?;

    let mut outs = Vec::with_capacity(batch * n);
    let mut traces = Vec::new();
    for (b, (state, _)) in states.iter_mut().enumerate() {
        let mut gates = Vec::new();
        let mut decays = Vec::new();
        for ci in 0..n {
            let xc = x.slice_rows(b * t + ci * c, c)?;
            let q = xc.linear(p.wq, p.bq)?;
            let k = xc.linear(p.wk, p.bk)?;
            let v = xc.linear(p.wv, p.bv)?;
            let log_g = if cfg.use_gate {
                let lg = xc.linear(p.wg, p.bg)?.log_sigmoid()?.scale(1.0 / cfg.gate_temperature)?;
                gates.extend(lg.value().data().iter().map(|l| l.exp()));
                Some(lg)
            } else {
                None
            };
            let mut head_outs = Vec::with_capacity(heads);
            for (h, s) in state.iter_mut().enumerate() {
                let gamma = match &log_g {
                    Some(lg) => {
                        let g = lg.slice_cols(h, 1)?.mean_rows()?.exp()?;
                        decays.push(g.value().item());
                        Some(g)
                    }
                    None => None,
                };
                let sl = |m: &Var<'t>| m.slice_cols(h * d, d);
                head_outs.push(chunk_head(cfg, sl(&q)?, sl(&k)?, sl(&v)?, gamma, s)?);
            }
            outs.push(concat_cols(&head_outs)?.linear(p.wo, p.bo)?);
        }
        if cfg.use_gate {
            traces.push(GateTrace {
                gates: Tensor::new(&[t, heads], gates)?,
                decays: Tensor::new(&[n, heads], decays)?,
            });
        }
    }
    let out = concat_rows(&outs)?;
    let advanced = if cfg.use_cache { n } else { 0 };
    let states = states
        .iter()
        .map(|(s, idx)| collect_state(s, idx + advanced, d))
        .collect();
    Ok(HybridOutput { out, states, traces })
}
