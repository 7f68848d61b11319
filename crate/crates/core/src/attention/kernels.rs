//! Single-head `f32` forward kernels on raw slices for timing and memory
//! accounting. They compute the same maps as the tape functions (without
//! biases or output projection) but allocate only what the algorithm needs,
//! and report the peak number of live buffer elements through a
//! [`BufferMeter`].

use crate::numcore::RngState;

/// Tracks live and peak element counts of the buffers a kernel allocates.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct BufferMeter {
    live: usize,
    peak: usize,
}

impl BufferMeter {
    pub fn new() -> Self {
        Self::default()
    }

    fn alloc(&mut self, n: usize) -> Vec<f32> {
        self.live += n;
        self.peak = self.peak.max(self.live);
        vec![0.0; n]
    }

    fn release(&mut self, buf: Vec<f32>) {
        self.live -= buf.len();
    }

    pub fn live(&self) -> usize {
        self.live
    }

    pub fn peak(&self) -> usize {
        self.peak
    }
}

/// Token inputs and projection weights of one head.
#[derive(Debug, Clone)]
pub struct HeadInputs {
    pub t: usize,
    pub d: usize,
    /// `t × d`.
    pub x: Vec<f32>,
    /// `d × d` each.
    pub wq: Vec<f32>,
    pub wk: Vec<f32>,
    pub wv: Vec<f32>,
    /// `d` gate weights.
    pub wg: Vec<f32>,
}

impl HeadInputs {
    pub fn random(t: usize, d: usize, rng: &mut RngState) -> Self {
        let w = 1.0 / (d as f64).sqrt();
        let mut g = |n: usize, s: f64| rng.gaussian_vec(n).into_iter().map(|v| (v * s) as f32).collect();
        Self {
            t,
            d,
            x: g(t * d, 1.0),
            wq: g(d * d, w),
            wk: g(d * d, w),
            wv: g(d * d, w),
            wg: g(d, w),
        }
    }
}

// ── dense helpers ───────────────────────────────────────────────────────────

/// `out[m×n] += a[m×k] · b[k×n]`
fn gemm(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        for l in 0..8 {
            acc[l] += a[c * 8 + l] * b[c * 8 + l];
        }
    }
    let mut s: f32 = acc.iter().sum();
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `out[m×n] = a[m×k] · b[n×k]ᵀ`
fn gemm_nt(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = dot(ar, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `out[k×n] += a[m×k]ᵀ · b[m×n]`
fn gemm_tn(a: &[f32], b: &[f32], out: &mut [f32], m: usize, k: usize, n: usize) {
    for r in 0..m {
        let br = &b[r * n..(r + 1) * n];
        for p in 0..k {
            let av = a[r * k + p];
            for (o, &bv) in out[p * n..(p + 1) * n].iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
}

fn softmax_row(row: &mut [f32], scale: f32) {
    let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = ((*v - max) * scale).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

fn project(inp: &HeadInputs, meter: &mut BufferMeter) -> [Vec<f32>; 3] {
    let (t, d) = (inp.t, inp.d);
    [&inp.wq, &inp.wk, &inp.wv].map(|w| {
        let mut out = meter.alloc(t * d);
        gemm(&inp.x, w, &mut out, t, d, d);
        out
    })
}

fn log_sigmoid(x: f32) -> f32 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

// ── kernels ─────────────────────────────────────────────────────────────────

/// Full `T × T` softmax attention with scores scaled by `scale`.
pub fn softmax_full(inp: &HeadInputs, causal: bool, scale: f32, meter: &mut BufferMeter) -> Vec<f32> {
    let (t, d) = (inp.t, inp.d);
    let [q, k, v] = project(inp, meter);
    let mut scores = meter.alloc(t * t);
    gemm_nt(&q, &k, &mut scores, t, d, t);
    for i in 0..t {
        let row = &mut scores[i * t..(i + 1) * t];
        let live = if causal { i + 1 } else { t };
        softmax_row(&mut row[..live], scale);
        row[live..].fill(0.0);
    }
    let mut out = meter.alloc(t * d);
    gemm(&scores, &v, &mut out, t, t, d);
    for buf in [scores, q, k, v] {
        meter.release(buf);
    }
    out
}

/// Shared chunk loop; `gated = None` gives causal linear attention.
fn chunked(inp: &HeadInputs, c: usize, gated: Option<(f32, f32)>, meter: &mut BufferMeter) -> Vec<f32> {
    let (t, d) = (inp.t, inp.d);
    assert!(c > 0 && t % c == 0, "T must be a multiple of C");
    let [q, k, v] = project(inp, meter);
    let mut log_g = meter.alloc(t);
    if let Some((tau, _)) = gated {
        for (i, lg) in log_g.iter_mut().enumerate() {
            *lg = log_sigmoid(dot(&inp.x[i * d..(i + 1) * d], &inp.wg)) / tau;
        }
    }
    let mut s = meter.alloc(d * d);
    let mut scores = meter.alloc(c * c);
    let mut out = meter.alloc(t * d);
    for r0 in (0..t).step_by(c) {
        let qc = &q[r0 * d..(r0 + c) * d];
        let kc = &k[r0 * d..(r0 + c) * d];
        let vc = &v[r0 * d..(r0 + c) * d];
        let oc = &mut out[r0 * d..(r0 + c) * d];
        gemm(qc, &s, oc, c, d, d);
        gemm_nt(qc, kc, &mut scores, c, d, c);
        match gated {
            Some((_, scale)) => scores.chunks_exact_mut(c).for_each(|row| softmax_row(row, scale)),
            None => {
                for i in 0..c {
                    scores[i * c + i + 1..(i + 1) * c].fill(0.0);
                }
            }
        }
        gemm(&scores, vc, oc, c, c, d);
        if gated.is_some() {
            let gamma = (log_g[r0..r0 + c].iter().sum::<f32>() / c as f32).exp();
            s.iter_mut().for_each(|x| *x *= gamma);
        }
        gemm_tn(kc, vc, &mut s, c, d, d);
    }
    for buf in [scores, s, log_g, q, k, v] {
        meter.release(buf);
    }
    out
}

/// Hybrid attention: softmax inside chunks, decayed `d × d` state across.
pub fn hybrid(inp: &HeadInputs, c: usize, temperature: f32, scale: f32, meter: &mut BufferMeter) -> Vec<f32> {
    chunked(inp, c, Some((temperature, scale)), meter)
}

/// Chunkwise causal linear attention without decay.
pub fn linear_causal(inp: &HeadInputs, c: usize, meter: &mut BufferMeter) -> Vec<f32> {
    chunked(inp, c, None, meter)
}
