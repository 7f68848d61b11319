//! Sequence-length scaling of the attention kernels: closed-form FLOP
//! counts next to measured forward wall times.

use std::fmt::Write as _;
use std::hint::black_box;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::attention::kernels::{self, BufferMeter, HeadInputs};
use crate::error::{Error, Result};
use crate::numcore::RngState;

pub const BENCH_HEADER: &str = "mechanism,T,C,d,heads,median_ns,flops";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    Hybrid,
    SoftmaxFull,
    LinearCausal,
}

impl Mechanism {
    pub const ALL: [Mechanism; 3] = [Mechanism::Hybrid, Mechanism::SoftmaxFull, Mechanism::LinearCausal];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::Hybrid => "hybrid",
            Mechanism::SoftmaxFull => "softmax_full",
            Mechanism::LinearCausal => "linear_causal",
        }
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown mechanism {s:?}")))
    }
}

/// Multiply-accumulate counts of one head, split by term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MacBreakdown {
    /// `Q`, `K`, `V` projections, `3·T·d²`.
    pub projections: u64,
    /// Cross-chunk output `Q_c S`, `N·C·d²`.
    pub inter_output: u64,
    /// State update `K_cᵀ V_c`, `N·C·d²`.
    pub state_update: u64,
    /// Score matrix, `N·C²·d` chunked or `T²·d` full.
    pub scores: u64,
    /// Scores times values, same size as `scores`.
    pub score_values: u64,
    /// Gate logits, `T·d` (hybrid only).
    pub gate: u64,
}

impl MacBreakdown {
    pub fn total(&self) -> u64 {
        self.projections + self.inter_output + self.state_update + self.scores + self.score_values + self.gate
    }
}

pub fn mac_breakdown(m: Mechanism, t: u64, c: u64, d: u64) -> MacBreakdown {
    let projections = 3 * t * d * d;
    match m {
        Mechanism::SoftmaxFull => MacBreakdown {
            projections,
            scores: t * t * d,
            score_values: t * t * d,
            ..MacBreakdown::default()
        },
        Mechanism::Hybrid | Mechanism::LinearCausal => {
            let n = t / c;
            MacBreakdown {
                projections,
                inter_output: n * c * d * d,
                state_update: n * c * d * d,
                scores: n * c * c * d,
                score_values: n * c * c * d,
                gate: if m == Mechanism::Hybrid { t * d } else { 0 },
            }
        }
    }
}

/// Floating-point operations of a forward pass over all heads, two per
/// multiply-accumulate.
pub fn flop_count(m: Mechanism, t: usize, c: usize, d: usize, heads: usize) -> u64 {
    2 * heads as u64 * mac_breakdown(m, t as u64, c as u64, d as u64).total()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchPoint {
    pub mechanism: Mechanism,
    pub t: usize,
    pub c: usize,
    pub d: usize,
    pub heads: usize,
    pub wall_ns: u64,
    pub flops: u64,
    /// Peak live buffer elements of one head.
    pub peak_elems: usize,
}

impl BenchPoint {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.mechanism.name(),
            self.t,
            self.c,
            self.d,
            self.heads,
            self.wall_ns,
            self.flops
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub mechanism: Mechanism,
    pub t_list: Vec<usize>,
    pub chunk: usize,
    pub head_dim: usize,
    pub heads: usize,
    pub repeats: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl SweepConfig {
    pub fn new(mechanism: Mechanism, t_list: Vec<usize>) -> Self {
        Self {
            mechanism,
            t_list,
            chunk: 64,
            head_dim: 64,
            heads: 1,
            repeats: 5,
            warmup: 1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats < 5 {
            return Err(Error::Config(format!("need at least 5 repeats, got {}", self.repeats)));
        }
        if self.chunk == 0 || self.head_dim == 0 || self.heads == 0 || self.t_list.is_empty() {
            return Err(Error::Config("chunk, head_dim, heads and T list must be non-empty".into()));
        }
        if self.t_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("T list must be strictly ascending".into()));
        }
        if let Some(t) = self.t_list.iter().find(|&&t| t == 0 || t % self.chunk != 0) {
            return Err(Error::Config(format!("T = {t} is not a positive multiple of C = {}", self.chunk)));
        }
        Ok(())
    }
}

fn run_once(m: Mechanism, inputs: &[HeadInputs], c: usize) -> usize {
    let d = inputs[0].d;
    let scale = 1.0 / (d as f32).sqrt();
    let mut peak = 0;
    for inp in inputs {
        let mut meter = BufferMeter::new();
        let out = match m {
            Mechanism::SoftmaxFull => kernels::softmax_full(inp, false, scale, &mut meter),
            Mechanism::Hybrid => kernels::hybrid(inp, c, 16.0, scale, &mut meter),
            Mechanism::LinearCausal => kernels::linear_causal(inp, c, &mut meter),
        };
        black_box(out);
        peak = peak.max(meter.peak());
    }
    peak
}

pub fn median(xs: &mut [u64]) -> u64 {
    xs.sort_unstable();
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2
    }
}

/// Times every `T` of the sweep, single-threaded, on fresh random inputs.
pub fn sweep(cfg: &SweepConfig) -> Result<Vec<BenchPoint>> {
    cfg.validate()?;
    let mut rng = RngState::new(cfg.seed);
    let mut points = Vec::with_capacity(cfg.t_list.len());
    for &t in &cfg.t_list {
        let inputs: Vec<HeadInputs> = (0..cfg.heads).map(|_| HeadInputs::random(t, cfg.head_dim, &mut rng)).collect();
        for _ in 0..cfg.warmup {
            run_once(cfg.mechanism, &inputs, cfg.chunk);
        }
        let mut times = Vec::with_capacity(cfg.repeats);
        let mut peak = 0;
        for _ in 0..cfg.repeats {
            let start = Instant::now();
            peak = run_once(cfg.mechanism, &inputs, cfg.chunk);
            times.push((start.elapsed().as_nanos() as u64).max(1));
        }
        points.push(BenchPoint {
            mechanism: cfg.mechanism,
            t,
            c: cfg.chunk,
            d: cfg.head_dim,
            heads: cfg.heads,
            wall_ns: median(&mut times),
            flops: flop_count(cfg.mechanism, t, cfg.chunk, cfg.head_dim, cfg.heads),
            peak_elems: peak,
        });
    }
    Ok(points)
}

pub fn to_csv(points: &[BenchPoint]) -> String {
    let mut s = String::from(BENCH_HEADER);
    s.push('\n');
    for p in points {
        let _ = writeln!(s, "{}", p.csv_row());
    }
    s
}

/// Least-squares line through `(ln T, ln wall_ns)`; returns slope and r².
pub fn fit_scaling_exponent(points: &[BenchPoint]) -> Result<(f64, f64)> {
    let xy: Vec<(f64, f64)> = points.iter().map(|p| (p.t as f64, p.wall_ns as f64)).collect();
    fit_power_law(&xy)
}

pub fn fit_power_law(xy: &[(f64, f64)]) -> Result<(f64, f64)> {
    if xy.len() < 2 || xy.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::Numeric("power-law fit needs two or more positive points".into()));
    }
    let n = xy.len() as f64;
    let lx: Vec<f64> = xy.iter().map(|p| p.0.ln()).collect();
    let ly: Vec<f64> = xy.iter().map(|p| p.1.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ly.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Numeric("all T values are equal".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((slope, r2))
}

/// `true` when median times never decrease as `T` grows.
pub fn is_monotone(points: &[BenchPoint]) -> bool {
    points.windows(2).all(|w| w[1].wall_ns >= w[0].wall_ns)
}
