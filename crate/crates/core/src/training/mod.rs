//! Optimising the sequence velocity objective: batch assembly with label
//! dropout, the loss, AdamW, EMA and resumable training state.

mod checkpoint;
mod optim;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use optim::{adamw_step, clip_grad_norm, ema_update, global_norm, AdamW, OptimizerState};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{stack_tokens, ConditioningInput, ForwardOptions, ModelParams, NULL_CLASS};
use crate::numcore::{precision, set_precision, RngState, Tape, Tensor};
use crate::sequence::{build_sequence_with, CategoryDataset, TimeSampling, TrainingSequence};

/// Stream of the training batches, split off the run seed.
const TRAIN_STREAM: u64 = 2;
/// Stream of the parameter initialisation.
pub const INIT_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub ema_decay: f64,
    pub label_drop_prob: f64,
    /// Chunks per training sequence; `None` uses the model's default.
    pub seq_len: Option<usize>,
    pub total_steps: u64,
    pub seed: u64,
    pub time_sampling: TimeSampling,
    /// Max global gradient norm; `None` disables clipping.
    pub grad_clip: Option<f64>,
    /// Worker threads for the forward/backward pass.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            weight_decay: 0.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 8,
            ema_decay: 0.9999,
            label_drop_prob: 0.1,
            seq_len: None,
            total_steps: 200,
            seed: 0,
            time_sampling: TimeSampling::Uniform,
            grad_clip: None,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(Error::Config(format!("ema_decay {} outside [0, 1]", self.ema_decay)));
        }
        if !(0.0..1.0).contains(&self.label_drop_prob) {
            return Err(Error::Config(format!("label_drop_prob {} outside [0, 1)", self.label_drop_prob)));
        }
        if self.batch_size == 0 || self.threads == 0 || self.seq_len == Some(0) {
            return Err(Error::Config("batch_size, threads and seq_len must be positive".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("learning rate must be non-negative and adam_eps positive".into()));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return Err(Error::Config(format!("grad_clip must be positive, got {c}")));
            }
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamW {
        AdamW {
            lr: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// One training sequence with the class label the model actually sees.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub sequence: TrainingSequence,
    /// The sequence's class, or [`NULL_CLASS`] after label dropout.
    pub label: usize,
}

impl BatchItem {
    pub fn conditioning(&self) -> ConditioningInput {
        ConditioningInput::new(self.sequence.times(), self.label)
    }
}

/// Replaces the class with [`NULL_CLASS`] with probability `p`.
pub fn drop_label(class_id: usize, p: f64, rng: &mut RngState) -> usize {
    if rng.bernoulli(p) {
        NULL_CLASS
    } else {
        class_id
    }
}

/// Each element draws its own class uniformly, then its label dropout,
/// then its sequence.
pub fn draw_batch(
    ds: &CategoryDataset,
    batch_size: usize,
    seq_len: usize,
    label_drop_prob: f64,
    sampling: TimeSampling,
    rng: &mut RngState,
) -> Result<Vec<BatchItem>> {
    (0..batch_size)
        .map(|_| {
            let class_id = rng.below(ds.num_classes());
            let label = drop_label(class_id, label_drop_prob, rng);
            let sequence = build_sequence_with(ds, class_id, seq_len, sampling, rng)?;
            Ok(BatchItem { sequence, label })
        })
        .collect()
}

fn check_batch(items: &[BatchItem]) -> Result<usize> {
    let n = items
        .first()
        .map(|b| b.sequence.len())
        .ok_or_else(|| Error::contract("empty batch"))?;
    if items.iter().any(|b| b.sequence.len() != n) {
        return Err(Error::contract("mixed sequence lengths in one batch"));
    }
    Ok(n)
}

/// Mean squared velocity error over the shard and its parameter gradients.
fn shard_loss(params: &ModelParams, items: &[BatchItem], want_grads: bool) -> Result<(f64, Vec<Tensor>)> {
    let cfg = params.config();
    let tape = Tape::new();
    let mv = params.attach(&tape, want_grads)?;
    let inputs: Vec<&Tensor> = items.iter().flat_map(|b| b.sequence.chunks.iter().map(|c| &c.z_t)).collect();
    let targets: Vec<&Tensor> = items
        .iter()
        .flat_map(|b| b.sequence.chunks.iter().map(|c| &c.v_target))
        .collect();
    let tokens = tape.constant(stack_tokens(cfg, &inputs)?);
    let target = tape.constant(stack_tokens(cfg, &targets)?);
    let conds: Vec<ConditioningInput> = items.iter().map(BatchItem::conditioning).collect();
    let out = mv.forward_tokens(tokens, &conds, &ForwardOptions::default(), None)?;
    let diff = out.velocity.sub(target)?;
    let loss = diff.mul(diff)?.mean()?;
    let value = loss.value().item();
    if !value.is_finite() {
        return Err(Error::NonFinite("training loss"));
    }
    let grads = if want_grads {
        let g = tape.backward(loss)?;
        mv.vars().iter().map(|v| g.get(*v)).collect()
    } else {
        Vec::new()
    };
    Ok((value, grads))
}

/// Loss and gradients of a batch, split into `threads` contiguous shards.
/// Shard results are weighted by their share of the batch and reduced in
/// shard order, so the outcome depends only on the thread count.
pub fn loss_and_grads(params: &ModelParams, items: &[BatchItem], threads: usize) -> Result<(f64, Vec<Tensor>)> {
    check_batch(items)?;
    let shards = threads.clamp(1, items.len());
    if shards == 1 {
        return shard_loss(params, items, true);
    }
    let per = items.len().div_ceil(shards);
    let mode = precision();
    let results: Vec<Result<(f64, Vec<Tensor>)>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(per)
            .map(|chunk| {
                s.spawn(move || {
                    set_precision(mode);
                    shard_loss(params, chunk, true).map(|(l, g)| (l * chunk.len() as f64, g, chunk.len()))
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                let (l, g, len) = h.join().map_err(|_| Error::Numeric("worker thread panicked".into()))??;
                let w = len as f64 / items.len() as f64;
                Ok((l / items.len() as f64, g.into_iter().map(|t| t.scale(w)).collect()))
            })
            .collect()
    });
    let mut total = 0.0;
    let mut grads: Option<Vec<Tensor>> = None;
    for r in results {
        let (l, g) = r?;
        total += l;
        grads = Some(match grads {
            None => g,
            Some(acc) => acc.iter().zip(&g).map(|(a, b)| a.add(b)).collect::<Result<_>>()?,
        });
    }
    Ok((total, grads.unwrap_or_default()))
}

/// The sequence objective for a batch: label dropout per sequence with
/// probability `label_drop_prob`, then the mean velocity error over all
/// chunks.
pub fn sequence_loss(
    params: &ModelParams,
    batch: &[TrainingSequence],
    label_drop_prob: f64,
    rng: &mut RngState,
) -> Result<f64> {
    let items: Vec<BatchItem> = batch
        .iter()
        .map(|s| BatchItem {
            label: drop_label(s.class_id, label_drop_prob, rng),
            sequence: s.clone(),
        })
        .collect();
    check_batch(&items)?;
    Ok(shard_loss(params, &items, false)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

pub const METRICS_HEADER: &str = "step,loss,grad_norm,wall_ms";

impl StepMetrics {
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{:.3}", self.step, self.loss, self.grad_norm, self.wall_ms)
    }
}

pub fn metrics_csv(rows: &[StepMetrics]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

/// Everything needed to continue a run bit-exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub model: ModelParams,
    pub ema: Vec<Tensor>,
    pub opt: OptimizerState,
    pub config: TrainConfig,
    pub rng: RngState,
    pub step: u64,
}

impl Trainer {
    pub fn new(model: ModelParams, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let ema = model.tensors().to_vec();
        let opt = OptimizerState::zeros_like(model.tensors());
        Ok(Self {
            rng: RngState::new(config.seed).split(TRAIN_STREAM),
            model,
            ema,
            opt,
            config,
            step: 0,
        })
    }

    /// Fresh model from the run seed.
    pub fn from_seed(model_cfg: crate::model::ModelConfig, config: TrainConfig) -> Result<Self> {
        let mut rng = RngState::new(config.seed).split(INIT_STREAM);
        Self::new(ModelParams::init(model_cfg, &mut rng)?, config)
    }

    pub fn seq_len(&self) -> usize {
        self.config.seq_len.unwrap_or(self.model.config().seq_len_train)
    }

    pub fn ema_params(&self) -> Result<ModelParams> {
        ModelParams::from_tensors(*self.model.config(), self.ema.clone())
    }

    pub fn step(&mut self, ds: &CategoryDataset) -> Result<StepMetrics> {
        let start = Instant::now();
        let mc = self.model.config();
        if ds.latent_shape() != mc.latent_shape || ds.num_classes() != mc.num_classes {
            return Err(Error::Config(format!(
                "dataset ({} classes, {:?}) does not match the model ({} classes, {:?})",
                ds.num_classes(),
                ds.latent_shape().dims(),
                mc.num_classes,
                mc.latent_shape.dims()
            )));
        }
        let c = self.config;
        let items = draw_batch(ds, c.batch_size, self.seq_len(), c.label_drop_prob, c.time_sampling, &mut self.rng)?;
        let (loss, mut grads) = loss_and_grads(&self.model, &items, c.threads)?;
        let grad_norm = match c.grad_clip {
            Some(max) => clip_grad_norm(&mut grads, max),
            None => global_norm(&grads),
        };
        if !grad_norm.is_finite() {
            return Err(Error::NonFinite("gradient norm"));
        }
        adamw_step(self.model.tensors_mut(), &grads, &mut self.opt, &c.adamw())?;
        ema_update(&mut self.ema, self.model.tensors(), c.ema_decay)?;
        self.step += 1;
        Ok(StepMetrics {
            step: self.step,
            loss,
            grad_norm,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Steps until `config.total_steps`, calling `on_step` after each one.
    pub fn run(
        &mut self,
        ds: &CategoryDataset,
        mut on_step: impl FnMut(&Trainer, &StepMetrics) -> Result<()>,
    ) -> Result<Vec<StepMetrics>> {
        let mut log = Vec::new();
        while self.step < self.config.total_steps {
            let m = self.step(ds)?;
            on_step(self, &m)?;
            log.push(m);
        }
        Ok(log)
    }
}

/// Trains a fresh model for `config.total_steps` steps.
pub fn train(
    model_cfg: crate::model::ModelConfig,
    config: TrainConfig,
    ds: &CategoryDataset,
) -> Result<(Trainer, Vec<StepMetrics>)> {
    let mut t = Trainer::from_seed(model_cfg, config)?;
    let log = t.run(ds, |_, _| Ok(()))?;
    Ok((t, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::numcore::{with_precision, Precision};
    use crate::sequence::{make_gaussian_mixture_dataset, LatentShape};

    fn tiny() -> ModelConfig {
        ModelConfig {
            latent_shape: LatentShape::new(1, 4, 4),
            patch_size: 2,
            hidden_size: 8,
            depth: 1,
            num_heads: 2,
            num_classes: 2,
            time_freq_dim: 8,
            seq_len_train: 3,
            ..ModelConfig::default()
        }
    }

    fn data() -> CategoryDataset {
        make_gaussian_mixture_dataset(2, 8, LatentShape::new(1, 4, 4), 0.2, &mut RngState::new(5)).unwrap()
    }

    #[test]
    fn zero_model_loss_is_mean_target_energy() {
        with_precision(Precision::F64, || {
            let p = ModelParams::init(tiny(), &mut RngState::new(0)).unwrap();
            let ds = data();
            let mut rng = RngState::new(1);
            let batch: Vec<_> = (0..3).map(|k| build_sequence_with(&ds, k % 2, 3, TimeSampling::Uniform, &mut rng).unwrap()).collect();
            let loss = sequence_loss(&p, &batch, 0.0, &mut rng).unwrap();
            let mut acc = 0.0;
            let mut count = 0;
            for s in &batch {
                for c in &s.chunks {
                    acc += c.v_target.data().iter().map(|x| x * x).sum::<f64>();
                    count += c.v_target.numel();
                }
            }
            assert!((loss - acc / count as f64).abs() < 1e-12);
        });
    }

    #[test]
    fn mixed_lengths_rejected() {
        let p = ModelParams::init(tiny(), &mut RngState::new(0)).unwrap();
        let ds = data();
        let mut rng = RngState::new(1);
        let a = build_sequence_with(&ds, 0, 2, TimeSampling::Uniform, &mut rng).unwrap();
        let b = build_sequence_with(&ds, 0, 3, TimeSampling::Uniform, &mut rng).unwrap();
        assert!(sequence_loss(&p, &[a, b], 0.0, &mut rng).is_err());
    }

    #[test]
    fn threads_agree_with_single_shard() {
        with_precision(Precision::F64, || {
            let mut rng = RngState::new(0);
            let p = ModelParams::init(tiny(), &mut rng).unwrap().perturbed(0.1, &mut rng);
            let items = draw_batch(&data(), 5, 3, 0.1, TimeSampling::Uniform, &mut rng).unwrap();
            let (l1, g1) = loss_and_grads(&p, &items, 1).unwrap();
            let (l3, g3) = loss_and_grads(&p, &items, 3).unwrap();
            assert!((l1 - l3).abs() < 1e-12);
            for (a, b) in g1.iter().zip(&g3) {
                assert!(a.max_abs_diff(b) < 1e-12);
            }
        });
    }

    #[test]
    fn one_step_moves_the_head() {
        let cfg = TrainConfig {
            batch_size: 4,
            total_steps: 1,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let (t, log) = train(tiny(), cfg, &data()).unwrap();
        assert!(log[0].loss > 0.0);
        let head = t.model.get("final.head.w").unwrap();
        assert!(head.data().iter().any(|&x| x != 0.0));
        assert_eq!(t.opt.step, 1);
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = TrainConfig {
            batch_size: 2,
            total_steps: 3,
            ..TrainConfig::default()
        };
        let (a, la) = train(tiny(), cfg, &data()).unwrap();
        let (b, lb) = train(tiny(), cfg, &data()).unwrap();
        assert_eq!(a.model, b.model);
        let losses = |l: &[StepMetrics]| l.iter().map(|m| m.loss).collect::<Vec<_>>();
        assert_eq!(losses(&la), losses(&lb));
    }

    #[test]
    fn dataset_mismatch_is_config_error() {
        let mut t = Trainer::from_seed(
            ModelConfig {
                num_classes: 3,
                ..tiny()
            },
            TrainConfig::default(),
        )
        .unwrap();
        assert!(matches!(t.step(&data()), Err(Error::Config(_))));
    }

    #[test]
    fn config_bounds() {
        let bad = TrainConfig {
            label_drop_prob: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            ema_decay: -0.1,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
