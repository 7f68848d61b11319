use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{precision, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First and second moments mirroring the parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn zeros_like(params: &[Tensor]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

/// Decoupled weight decay followed by the bias-corrected Adam update.
pub fn adamw_step(params: &mut [Tensor], grads: &[Tensor], opt: &mut OptimizerState, cfg: &AdamW) -> Result<()> {
    if params.len() != grads.len() || params.len() != opt.m.len() || params.len() != opt.v.len() {
        return Err(Error::contract("parameter, gradient and moment lists differ in length"));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape("adamw_step", p.shape(), g.shape()));
        }
    }
    opt.step += 1;
    let t = opt.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(opt.m.iter_mut().zip(opt.v.iter_mut())) {
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for i in 0..pd.len() {
            let gi = g.data()[i];
            md[i] = precision::round(cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gi);
            vd[i] = precision::round(cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gi * gi);
            let update = (md[i] / bc1) / ((vd[i] / bc2).sqrt() + cfg.eps);
            pd[i] = precision::round(pd[i] * decay - cfg.lr * update);
        }
    }
    Ok(())
}

/// `ema ← decay·ema + (1 − decay)·params`.
pub fn ema_update(ema: &mut [Tensor], params: &[Tensor], decay: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&decay) {
        return Err(Error::contract(format!("ema decay {decay} outside [0, 1]")));
    }
    if ema.len() != params.len() {
        return Err(Error::contract("ema and parameter lists differ in length"));
    }
    for (e, p) in ema.iter_mut().zip(params) {
        if e.shape() != p.shape() {
            return Err(Error::shape("ema_update", e.shape(), p.shape()));
        }
        for (a, &b) in e.data_mut().iter_mut().zip(p.data()) {
            *a = precision::round(decay * *a + (1.0 - decay) * b);
        }
    }
    Ok(())
}

/// Rescales `grads` so their joint norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for x in g.data_mut() {
                *x = precision::round(*x * s);
            }
        }
    }
    norm
}

pub fn global_norm(ts: &[Tensor]) -> f64 {
    ts.iter()
        .flat_map(|t| t.data().iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt()
}
