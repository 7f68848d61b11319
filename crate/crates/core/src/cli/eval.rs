//! Sample-quality metrics: kernel two-sample discrepancy and moment errors.

use crate::error::{Error, Result};
use crate::numcore::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmdEstimate {
    /// Unbiased MMD² (may be slightly negative).
    pub value: f64,
    /// Jackknife standard error over all points of both sets.
    pub std_err: f64,
    pub bandwidth: f64,
}

fn flat(xs: &[Tensor]) -> Result<(Vec<&[f64]>, usize)> {
    let dim = xs.first().map(|t| t.numel()).unwrap_or(0);
    if xs.iter().any(|t| t.numel() != dim) {
        return Err(Error::contract("samples differ in size"));
    }
    Ok((xs.iter().map(|t| t.data()).collect(), dim))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Median of all pairwise distances in the pooled set.
pub fn median_bandwidth(x: &[Tensor], y: &[Tensor]) -> Result<f64> {
    let (mut pts, _) = flat(x)?;
    pts.extend(flat(y)?.0);
    let mut d = Vec::with_capacity(pts.len() * pts.len().saturating_sub(1) / 2);
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            d.push(sq_dist(pts[i], pts[j]).sqrt());
        }
    }
    if d.is_empty() {
        return Err(Error::Numeric("bandwidth needs at least two points".into()));
    }
    d.sort_by(f64::total_cmp);
    let n = d.len();
    let med = if n % 2 == 1 { d[n / 2] } else { 0.5 * (d[n / 2 - 1] + d[n / 2]) };
    Ok(if med > 0.0 { med } else { 1.0 })
}

/// Unbiased MMD² with `k(a, b) = exp(−‖a − b‖² / 2σ²)`.
pub fn mmd2_unbiased(x: &[Tensor], y: &[Tensor], bandwidth: f64) -> Result<MmdEstimate> {
    let (xs, dx) = flat(x)?;
    let (ys, dy) = flat(y)?;
    let (m, n) = (xs.len(), ys.len());
    if m < 3 || n < 3 {
        return Err(Error::Numeric("MMD needs at least three samples per set".into()));
    }
    if dx != dy {
        return Err(Error::contract(format!("sample sizes {dx} and {dy} differ")));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::Numeric(format!("bandwidth {bandwidth} must be positive")));
    }
    let g = -0.5 / (bandwidth * bandwidth);
    let k = |a: &[f64], b: &[f64]| (g * sq_dist(a, b)).exp();

    // off-diagonal row sums within each set and cross sums
    let mut rxx = vec![0.0; m];
    let mut ryy = vec![0.0; n];
    let mut rxy = vec![0.0; m];
    let mut ryx = vec![0.0; n];
    for i in 0..m {
        for j in i + 1..m {
            let v = k(xs[i], xs[j]);
            rxx[i] += v;
            rxx[j] += v;
        }
        for j in 0..n {
            let v = k(xs[i], ys[j]);
            rxy[i] += v;
            ryx[j] += v;
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let v = k(ys[i], ys[j]);
            ryy[i] += v;
            ryy[j] += v;
        }
    }
    let sxx: f64 = rxx.iter().sum();
    let syy: f64 = ryy.iter().sum();
    let sxy: f64 = rxy.iter().sum();
    let est = |sxx: f64, syy: f64, sxy: f64, m: f64, n: f64| {
        sxx / (m * (m - 1.0)) + syy / (n * (n - 1.0)) - 2.0 * sxy / (m * n)
    };
    let (mf, nf) = (m as f64, n as f64);
    let value = est(sxx, syy, sxy, mf, nf);

    let mut loo = Vec::with_capacity(m + n);
    for i in 0..m {
        loo.push(est(sxx - 2.0 * rxx[i], syy, sxy - rxy[i], mf - 1.0, nf));
    }
    for j in 0..n {
        loo.push(est(sxx, syy - 2.0 * ryy[j], sxy - ryx[j], mf, nf - 1.0));
    }
    let count = loo.len() as f64;
    let mean = loo.iter().sum::<f64>() / count;
    let var = (count - 1.0) / count * loo.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    Ok(MmdEstimate {
        value,
        std_err: var.sqrt(),
        bandwidth,
    })
}

/// [`mmd2_unbiased`] at the median-distance bandwidth.
pub fn mmd2(x: &[Tensor], y: &[Tensor]) -> Result<MmdEstimate> {
    mmd2_unbiased(x, y, median_bandwidth(x, y)?)
}

pub fn sample_mean(xs: &[Tensor]) -> Result<Vec<f64>> {
    let (pts, dim) = flat(xs)?;
    if pts.is_empty() {
        return Err(Error::Numeric("mean of an empty set".into()));
    }
    let mut mu = vec![0.0; dim];
    for p in &pts {
        for (m, v) in mu.iter_mut().zip(*p) {
            *m += v;
        }
    }
    let n = pts.len() as f64;
    mu.iter_mut().for_each(|m| *m /= n);
    Ok(mu)
}

/// Unbiased `dim × dim` covariance, row-major.
pub fn sample_cov(xs: &[Tensor]) -> Result<Vec<f64>> {
    let mu = sample_mean(xs)?;
    let (pts, dim) = flat(xs)?;
    if pts.len() < 2 {
        return Err(Error::Numeric("covariance needs two samples".into()));
    }
    let mut cov = vec![0.0; dim * dim];
    let mut c = vec![0.0; dim];
    for p in &pts {
        for (ci, (v, m)) in c.iter_mut().zip(p.iter().zip(&mu)) {
            *ci = v - m;
        }
        for i in 0..dim {
            let row = &mut cov[i * dim..(i + 1) * dim];
            for (r, cj) in row.iter_mut().zip(&c) {
                *r += c[i] * cj;
            }
        }
    }
    let denom = (pts.len() - 1) as f64;
    cov.iter_mut().for_each(|v| *v /= denom);
    Ok(cov)
}

fn frobenius_diff(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

pub fn mean_error(x: &[Tensor], y: &[Tensor]) -> Result<f64> {
    Ok(frobenius_diff(&sample_mean(x)?, &sample_mean(y)?))
}

pub fn cov_error(x: &[Tensor], y: &[Tensor]) -> Result<f64> {
    Ok(frobenius_diff(&sample_cov(x)?, &sample_cov(y)?))
}

pub const EVAL_HEADER: &str = "class,num_samples,num_reference,mmd2,mmd2_se,bandwidth,mean_error,cov_error,seed";

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// `None` for the average over classes.
    pub class: Option<usize>,
    pub num_samples: usize,
    pub num_reference: usize,
    pub mmd: MmdEstimate,
    pub mean_error: f64,
    pub cov_error: f64,
    pub seed: u64,
}

impl EvalReport {
    pub fn compute(class: Option<usize>, samples: &[Tensor], reference: &[Tensor], seed: u64) -> Result<Self> {
        let mmd = mmd2(samples, reference)?;
        let r = Self {
            class,
            num_samples: samples.len(),
            num_reference: reference.len(),
            mmd,
            mean_error: mean_error(samples, reference)?,
            cov_error: cov_error(samples, reference)?,
            seed,
        };
        if !(r.mmd.value.is_finite() && r.mean_error.is_finite() && r.cov_error.is_finite()) {
            return Err(Error::NonFinite("evaluation metrics"));
        }
        Ok(r)
    }

    /// Plain average of per-class reports; the standard error combines as
    /// for a mean of independent estimates.
    pub fn average(reports: &[EvalReport]) -> Option<Self> {
        let first = reports.first()?;
        let k = reports.len() as f64;
        let avg = |f: &dyn Fn(&EvalReport) -> f64| reports.iter().map(f).sum::<f64>() / k;
        Some(Self {
            class: None,
            num_samples: reports.iter().map(|r| r.num_samples).sum(),
            num_reference: reports.iter().map(|r| r.num_reference).sum(),
            mmd: MmdEstimate {
                value: avg(&|r| r.mmd.value),
                std_err: reports.iter().map(|r| r.mmd.std_err.powi(2)).sum::<f64>().sqrt() / k,
                bandwidth: avg(&|r| r.mmd.bandwidth),
            },
            mean_error: avg(&|r| r.mean_error),
            cov_error: avg(&|r| r.cov_error),
            seed: first.seed,
        })
    }

    pub fn csv_row(&self) -> String {
        let class = self.class.map_or_else(|| "all".to_string(), |c| c.to_string());
        format!(
            "{class},{},{},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{}",
            self.num_samples,
            self.num_reference,
            self.mmd.value,
            self.mmd.std_err,
            self.mmd.bandwidth,
            self.mean_error,
            self.cov_error,
            self.seed
        )
    }
}

pub fn reports_csv(reports: &[EvalReport]) -> String {
    let mut s = String::from(EVAL_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}
