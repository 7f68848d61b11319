//! Autoregressive generation. Every integration step evaluates the velocity
//! of the whole current latent as one new chunk, conditioned on the states
//! cached from all previous steps, and then folds that chunk into the cache.

use serde::{Deserialize, Serialize};

use crate::attention::ChunkState;
use crate::error::{Error, Result};
use crate::interpolant::{denoiser_from_velocity, score_from_velocity, FlowTime};
use crate::model::{forward_with, AttentionForm, ConditioningInput, ForwardOptions, ModelParams, NULL_CLASS};
use crate::numcore::{RngState, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    #[default]
    OdeEuler,
    SdeEulerMaruyama,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    pub steps: usize,
    pub cfg_scale: f64,
    pub mode: SamplerMode,
    pub use_cache: bool,
    pub t_start: f64,
    pub t_end: f64,
    /// SDE diffusion `w_t = diffusion_scale · t`.
    pub diffusion_scale: f64,
    /// Finish with `z − t_end·v`, the data estimate at the last grid time.
    pub final_denoise: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 32,
            cfg_scale: 1.0,
            mode: SamplerMode::OdeEuler,
            use_cache: true,
            t_start: 1.0,
            t_end: 0.004,
            diffusion_scale: 1.0,
            final_denoise: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("sampler needs at least one step".into()));
        }
        if !(self.t_start > self.t_end && self.t_end >= 0.0 && self.t_start <= 1.0) {
            return Err(Error::Config(format!(
                "need 1 ≥ t_start > t_end ≥ 0, got {} and {}",
                self.t_start, self.t_end
            )));
        }
        if !(self.cfg_scale >= 0.0) || !(self.diffusion_scale >= 0.0) {
            return Err(Error::Config("cfg_scale and diffusion_scale must be non-negative".into()));
        }
        if self.mode == SamplerMode::SdeEulerMaruyama && self.t_end == 0.0 {
            return Err(Error::Config("SDE sampling needs t_end > 0".into()));
        }
        Ok(())
    }

    /// Time after `k` of the `steps` uniform steps.
    pub fn time_at(&self, k: usize) -> f64 {
        if k == self.steps {
            return self.t_end;
        }
        self.t_start - (self.t_start - self.t_end) * k as f64 / self.steps as f64
    }

    pub fn dt(&self) -> f64 {
        -(self.t_start - self.t_end) / self.steps as f64
    }
}

/// Anything that maps a latent at time `t` to a velocity, optionally
/// carrying a cache from chunk to chunk.
pub trait VelocityField {
    type Cache: Clone;

    fn empty_cache(&self) -> Self::Cache;

    /// Velocity of `z` and the cache after folding `z` in. With
    /// `use_cache = false` the cache must come back unchanged.
    fn eval(
        &self,
        z: &Tensor,
        t: FlowTime,
        label: usize,
        cache: &Self::Cache,
        use_cache: bool,
    ) -> Result<(Tensor, Self::Cache)>;
}

impl VelocityField for ModelParams {
    type Cache = Vec<ChunkState>;

    fn empty_cache(&self) -> Self::Cache {
        let c = self.config();
        vec![ChunkState::zeros(c.num_heads, c.head_dim()); c.depth]
    }

    fn eval(
        &self,
        z: &Tensor,
        t: FlowTime,
        label: usize,
        cache: &Self::Cache,
        use_cache: bool,
    ) -> Result<(Tensor, Self::Cache)> {
        let opts = ForwardOptions {
            use_cache,
            form: AttentionForm::Recurrent,
        };
        let cond = ConditioningInput::new(vec![t], label);
        let (mut v, states) = forward_with(self, std::slice::from_ref(z), &cond, &opts, Some(cache))?;
        Ok((v.remove(0), states))
    }
}

/// The exact velocity `(z − z*)/t` of the flow that transports every noise
/// draw to the single point `z*`.
#[derive(Debug, Clone)]
pub struct PointTarget {
    pub target: Tensor,
}

impl VelocityField for PointTarget {
    type Cache = ();

    fn empty_cache(&self) {}

    fn eval(&self, z: &Tensor, t: FlowTime, _: usize, _: &(), _: bool) -> Result<(Tensor, ())> {
        if t.get() <= 0.0 {
            return Err(Error::Singularity(t.get()));
        }
        let inv = 1.0 / t.get();
        Ok((z.zip_with(&self.target, "point target", |a, b| (a - b) * inv)?, ()))
    }
}

#[derive(Debug, Clone)]
pub struct GenState<C> {
    pub z: Tensor,
    pub t: f64,
    pub step: usize,
    pub cond_cache: C,
    /// Present only when guidance uses the unconditional branch.
    pub uncond_cache: Option<C>,
}

pub fn cfg_combine(v_cond: &Tensor, v_uncond: &Tensor, s: f64) -> Result<Tensor> {
    if s == 1.0 {
        return Ok(v_cond.clone());
    }
    if s == 0.0 {
        return Ok(v_uncond.clone());
    }
    v_cond.zip_with(v_uncond, "cfg_combine", |c, u| u + s * (c - u))
}

pub fn init_state<F: VelocityField>(field: &F, cfg: &SamplerConfig, dims: &[usize], rng: &mut RngState) -> GenState<F::Cache> {
    GenState {
        z: Tensor::gaussian(dims, rng),
        t: cfg.t_start,
        step: 0,
        cond_cache: field.empty_cache(),
        uncond_cache: (cfg.cfg_scale != 1.0).then(|| field.empty_cache()),
    }
}

/// Guided velocity at the current state together with both updated caches.
fn guided<F: VelocityField>(
    field: &F,
    state: &GenState<F::Cache>,
    class_id: usize,
    cfg: &SamplerConfig,
) -> Result<(Tensor, F::Cache, Option<F::Cache>)> {
    let t = FlowTime::new(state.t)?;
    let (vc, cc) = field.eval(&state.z, t, class_id, &state.cond_cache, cfg.use_cache)?;
    match &state.uncond_cache {
        Some(uc) if cfg.cfg_scale != 1.0 => {
            let (vu, uc) = field.eval(&state.z, t, NULL_CLASS, uc, cfg.use_cache)?;
            Ok((cfg_combine(&vc, &vu, cfg.cfg_scale)?, cc, Some(uc)))
        }
        _ => Ok((vc, cc, state.uncond_cache.clone())),
    }
}

/// One integration step from `state.t` to the next grid time.
pub fn step<F: VelocityField>(
    state: &GenState<F::Cache>,
    field: &F,
    class_id: usize,
    cfg: &SamplerConfig,
    rng: &mut RngState,
) -> Result<GenState<F::Cache>> {
    if state.step >= cfg.steps || state.t <= cfg.t_end {
        return Err(Error::contract(format!("no step left at t = {}", state.t)));
    }
    let (v, cond_cache, uncond_cache) = guided(field, state, class_id, cfg)?;
    let dt = cfg.time_at(state.step + 1) - state.t;
    let z = match cfg.mode {
        SamplerMode::OdeEuler => state.z.zip_with(&v, "euler", |z, v| z + dt * v)?,
        SamplerMode::SdeEulerMaruyama => {
            let t = FlowTime::new(state.t)?;
            let w = cfg.diffusion_scale * state.t;
            let score = score_from_velocity(&state.z, &v, t)?;
            let xi = rng.gaussian_vec(v.numel());
            let amp = (w * dt.abs()).sqrt();
            let half_w = 0.5 * w;
            let data = (0..v.numel())
                .map(|i| {
                    let drift = v.data()[i] - half_w * score.data()[i];
                    (state.z.data()[i] + dt * drift) + amp * xi[i]
                })
                .collect();
            Tensor::new(v.shape(), data)?
        }
    };
    Ok(GenState {
        z,
        t: cfg.time_at(state.step + 1),
        step: state.step + 1,
        cond_cache,
        uncond_cache,
    })
}

/// Runs all steps and returns the final state (before any denoising).
pub fn integrate<F: VelocityField>(
    field: &F,
    class_id: usize,
    cfg: &SamplerConfig,
    dims: &[usize],
    rng: &mut RngState,
) -> Result<GenState<F::Cache>> {
    cfg.validate()?;
    let mut s = init_state(field, cfg, dims, rng);
    while s.step < cfg.steps {
        s = step(&s, field, class_id, cfg, rng)?;
    }
    Ok(s)
}

/// Draws one latent for `class_id` (or [`NULL_CLASS`]).
pub fn generate<F: VelocityField>(
    field: &F,
    class_id: usize,
    cfg: &SamplerConfig,
    dims: &[usize],
    rng: &mut RngState,
) -> Result<Tensor> {
    let s = integrate(field, class_id, cfg, dims, rng)?;
    if !cfg.final_denoise || s.t == 0.0 {
        return Ok(s.z);
    }
    let (v, _, _) = guided(field, &s, class_id, cfg)?;
    denoiser_from_velocity(&s.z, &v, FlowTime::new(s.t)?)
}

/// Generates with the model's own latent shape.
pub fn generate_latent(params: &ModelParams, class_id: usize, cfg: &SamplerConfig, rng: &mut RngState) -> Result<Tensor> {
    let dims = params.config().latent_shape.dims();
    generate(params, class_id, cfg, &dims, rng)
}

/// `count` latents drawn one after another from a single stream.
pub fn generate_many(
    params: &ModelParams,
    class_id: usize,
    count: usize,
    cfg: &SamplerConfig,
    rng: &mut RngState,
) -> Result<Vec<Tensor>> {
    (0..count).map(|_| generate_latent(params, class_id, cfg, rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::numcore::{with_precision, Precision};
    use crate::sequence::LatentShape;

    fn point() -> PointTarget {
        PointTarget {
            target: Tensor::gaussian(&[2, 3], &mut RngState::new(9)),
        }
    }

    #[test]
    fn ode_hits_the_point_target() {
        with_precision(Precision::F64, || {
            let f = point();
            for k in [1, 8, 32] {
                let cfg = SamplerConfig {
                    steps: k,
                    ..SamplerConfig::default()
                };
                let z = generate(&f, 0, &cfg, &[2, 3], &mut RngState::new(k as u64)).unwrap();
                assert!(z.max_abs_diff(&f.target) < 1e-9, "K = {k}");
                let raw = integrate(&f, 0, &cfg, &[2, 3], &mut RngState::new(k as u64)).unwrap();
                assert!(raw.z.max_abs_diff(&f.target) < 0.004 * 10.0);
            }
        });
    }

    #[test]
    fn sde_without_diffusion_is_ode() {
        let f = point();
        let ode = SamplerConfig::default();
        let sde = SamplerConfig {
            mode: SamplerMode::SdeEulerMaruyama,
            diffusion_scale: 0.0,
            ..ode
        };
        let a = generate(&f, 0, &ode, &[2, 3], &mut RngState::new(1)).unwrap();
        let b = generate(&f, 0, &sde, &[2, 3], &mut RngState::new(1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sde_concentrates_on_a_point_target() {
        with_precision(Precision::F64, || {
            let f = point();
            let cfg = SamplerConfig {
                mode: SamplerMode::SdeEulerMaruyama,
                steps: 200,
                final_denoise: false,
                ..SamplerConfig::default()
            };
            let mut rng = RngState::new(4);
            let mut worst: f64 = 0.0;
            for _ in 0..20 {
                let z = generate(&f, 0, &cfg, &[2, 3], &mut rng).unwrap();
                worst = worst.max(z.max_abs_diff(&f.target));
            }
            assert!(worst < 0.1, "{worst}");
        });
    }

    #[test]
    fn combine_algebra() {
        let mut rng = RngState::new(0);
        let a = Tensor::gaussian(&[3], &mut rng);
        let b = Tensor::gaussian(&[3], &mut rng);
        assert_eq!(cfg_combine(&a, &b, 1.0).unwrap(), a);
        assert_eq!(cfg_combine(&a, &b, 0.0).unwrap(), b);
        let d = cfg_combine(&a, &b, 2.0).unwrap().sub(&cfg_combine(&a, &b, 1.0).unwrap()).unwrap();
        assert!(d.max_abs_diff(&a.sub(&b).unwrap()) < 1e-6);
    }

    #[test]
    fn grid_and_validation() {
        let cfg = SamplerConfig {
            steps: 4,
            ..SamplerConfig::default()
        };
        assert_eq!(cfg.time_at(0), 1.0);
        assert_eq!(cfg.time_at(4), 0.004);
        assert!((cfg.dt() + 0.249).abs() < 1e-12);
        assert!(SamplerConfig { steps: 0, ..cfg }.validate().is_err());
        assert!(SamplerConfig { t_end: 1.0, ..cfg }.validate().is_err());
    }

    fn model() -> ModelParams {
        let cfg = ModelConfig {
            latent_shape: LatentShape::new(1, 4, 4),
            hidden_size: 8,
            depth: 2,
            num_heads: 2,
            num_classes: 2,
            time_freq_dim: 8,
            ..ModelConfig::default()
        };
        let mut rng = RngState::new(3);
        ModelParams::init(cfg, &mut rng).unwrap().perturbed(0.2, &mut rng)
    }

    #[test]
    fn caches_track_steps() {
        let p = model();
        let cfg = SamplerConfig {
            steps: 5,
            cfg_scale: 2.0,
            ..SamplerConfig::default()
        };
        let s = integrate(&p, 1, &cfg, &[1, 4, 4], &mut RngState::new(0)).unwrap();
        assert!(s.cond_cache.iter().all(|c| c.chunk_index == 5));
        assert!(s.uncond_cache.unwrap().iter().all(|c| c.chunk_index == 5));

        let off = SamplerConfig { use_cache: false, ..cfg };
        let s = integrate(&p, 1, &off, &[1, 4, 4], &mut RngState::new(0)).unwrap();
        assert!(s.cond_cache.iter().all(|c| c.chunk_index == 0 && c.is_zero()));
    }

    #[test]
    fn guidance_changes_samples_and_unit_scale_is_conditional() {
        let p = model();
        let base = SamplerConfig {
            steps: 4,
            ..SamplerConfig::default()
        };
        let a = generate_latent(&p, 0, &base, &mut RngState::new(7)).unwrap();
        let b = generate_latent(&p, 0, &SamplerConfig { cfg_scale: 3.0, ..base }, &mut RngState::new(7)).unwrap();
        assert_ne!(a, b);
        let again = generate_latent(&p, 0, &base, &mut RngState::new(7)).unwrap();
        assert_eq!(a, again);
    }

    #[test]
    fn step_past_the_end_rejected() {
        let f = point();
        let cfg = SamplerConfig {
            steps: 1,
            ..SamplerConfig::default()
        };
        let s = integrate(&f, 0, &cfg, &[2, 3], &mut RngState::new(0)).unwrap();
        assert!(step(&s, &f, 0, &cfg, &mut RngState::new(0)).is_err());
    }
}
