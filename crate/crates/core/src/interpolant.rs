//! Linear stochastic interpolant `z_t = (1 - t) z* + t ε`.
//!
//! `t = 0` is data and `t = 1` is noise. With the linear schedule the
//! velocity target `ε - z*` does not depend on `t`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// A time on the flow path, always inside `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct FlowTime(f64);

impl FlowTime {
    pub fn new(t: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&t) {
            Ok(Self(t))
        } else {
            Err(Error::contract(format!("flow time {t} outside [0, 1]")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// Data coefficient `α_t = 1 - t`.
    pub fn alpha(self) -> f64 {
        1.0 - self.0
    }

    /// Noise coefficient `σ_t = t`.
    pub fn sigma(self) -> f64 {
        self.0
    }

    pub fn alpha_dot(self) -> f64 {
        -1.0
    }

    pub fn sigma_dot(self) -> f64 {
        1.0
    }
}

/// One corrupted latent together with everything used to build it.
#[derive(Debug, Clone, PartialEq)]
pub struct InterpolantSample {
    pub z_star: Tensor,
    pub eps: Tensor,
    pub t: FlowTime,
    pub z_t: Tensor,
    pub v_target: Tensor,
}

pub fn corrupt(z_star: &Tensor, eps: &Tensor, t: FlowTime) -> Result<InterpolantSample> {
    let (a, s) = (t.alpha(), t.sigma());
    let z_t = z_star.zip_with(eps, "corrupt", |z, e| a * z + s * e)?;
    let (ad, sd) = (t.alpha_dot(), t.sigma_dot());
    let v_target = z_star.zip_with(eps, "corrupt", |z, e| ad * z + sd * e)?;
    Ok(InterpolantSample {
        z_star: z_star.clone(),
        eps: eps.clone(),
        t,
        z_t,
        v_target,
    })
}

/// Mean squared error between a predicted velocity and the sample's target.
pub fn velocity_loss_term(v_pred: &Tensor, sample: &InterpolantSample) -> Result<f64> {
    let sq = v_pred.zip_with(&sample.v_target, "velocity_loss_term", |p, q| (p - q) * (p - q))?;
    Ok(sq.mean())
}

/// Data estimate `ẑ* = z_t - t·v`.
pub fn denoiser_from_velocity(z_t: &Tensor, v: &Tensor, t: FlowTime) -> Result<Tensor> {
    let s = t.get();
    z_t.zip_with(v, "denoiser_from_velocity", |z, v| z - s * v)
}

/// Noise estimate `ε̂ = z_t + (1 - t)·v`.
pub fn noise_from_velocity(z_t: &Tensor, v: &Tensor, t: FlowTime) -> Result<Tensor> {
    let a = t.alpha();
    z_t.zip_with(v, "noise_from_velocity", |z, v| z + a * v)
}

/// Score `∇ log p_t(z) = -ε̂ / t`. Undefined at `t = 0`.
pub fn score_from_velocity(z_t: &Tensor, v: &Tensor, t: FlowTime) -> Result<Tensor> {
    if t.get() <= 0.0 {
        return Err(Error::Singularity(t.get()));
    }
    let inv = -1.0 / t.get();
    Ok(noise_from_velocity(z_t, v, t)?.scale(inv))
}
