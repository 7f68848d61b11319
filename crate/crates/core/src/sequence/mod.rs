//! Class-conditioned datasets and the causally ordered training sequences
//! built from them.
//!
//! A training sequence holds `n` independent items of one class, each
//! corrupted at its own time, arranged from most to least noisy.

mod datasets;
mod io;

pub use datasets::{make_gaussian_mixture_dataset, make_pattern_image_dataset, mixture_means, pattern_means};
pub use io::{load_dataset, save_dataset, LatentFile, DATASET_MAGIC};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interpolant::{corrupt, FlowTime, InterpolantSample};
use crate::numcore::{RngState, Tensor};

/// `(channels, height, width)` of one latent image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl LatentShape {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn numel(&self) -> usize {
        self.channels * self.height * self.width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoryDataset {
    latent_shape: LatentShape,
    items: Vec<Vec<Tensor>>,
}

impl CategoryDataset {
    pub fn new(latent_shape: LatentShape, items: Vec<Vec<Tensor>>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::contract("dataset needs at least one class"));
        }
        for (k, class) in items.iter().enumerate() {
            if class.is_empty() {
                return Err(Error::contract(format!("class {k} has no items")));
            }
            if let Some(bad) = class.iter().find(|t| t.shape() != latent_shape.dims()) {
                return Err(Error::shape("dataset item", bad.shape(), &latent_shape.dims()));
            }
        }
        Ok(Self { latent_shape, items })
    }

    pub fn num_classes(&self) -> usize {
        self.items.len()
    }

    pub fn latent_shape(&self) -> LatentShape {
        self.latent_shape
    }

    pub fn class_items(&self, class_id: usize) -> &[Tensor] {
        &self.items[class_id]
    }

    pub fn items(&self) -> &[Vec<Tensor>] {
        &self.items
    }
}

/// Density of the per-chunk training times.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeSampling {
    #[default]
    Uniform,
    /// `t = sigmoid(m + s·ξ)` with standard normal `ξ`.
    LogitNormal { mean: f64, std: f64 },
}

impl TimeSampling {
    fn draw(&self, n: usize, rng: &mut RngState) -> Vec<f64> {
        match *self {
            TimeSampling::Uniform => rng.uniform_vec(n),
            TimeSampling::LogitNormal { mean, std } => rng
                .gaussian_vec(n)
                .into_iter()
                .map(|x| 1.0 / (1.0 + (-(mean + std * x)).exp()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSequence {
    pub class_id: usize,
    pub chunks: Vec<InterpolantSample>,
    /// Index of the source item of each chunk within its class.
    pub source_items: Vec<usize>,
}

impl TrainingSequence {
    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn times(&self) -> Vec<FlowTime> {
        self.chunks.iter().map(|c| c.t).collect()
    }
}

/// Random choices behind one sequence, in draw order.
#[derive(Debug, Clone, PartialEq)]
pub struct SequencePlan {
    pub items: Vec<usize>,
    pub raw_times: Vec<f64>,
}

pub fn plan_sequence(
    items_in_class: usize,
    n: usize,
    sampling: TimeSampling,
    rng: &mut RngState,
) -> SequencePlan {
    let items = (0..n).map(|_| rng.below(items_in_class)).collect();
    let raw_times = sampling.draw(n, rng);
    SequencePlan { items, raw_times }
}

pub fn build_sequence(ds: &CategoryDataset, class_id: usize, n: usize, rng: &mut RngState) -> Result<TrainingSequence> {
    build_sequence_with(ds, class_id, n, TimeSampling::Uniform, rng)
}

pub fn build_sequence_with(
    ds: &CategoryDataset,
    class_id: usize,
    n: usize,
    sampling: TimeSampling,
    rng: &mut RngState,
) -> Result<TrainingSequence> {
    if n < 1 {
        return Err(Error::contract("sequence length must be at least 1"));
    }
    if class_id >= ds.num_classes() {
        return Err(Error::contract(format!(
            "class {class_id} out of range ({} classes)",
            ds.num_classes()
        )));
    }
    let pool = ds.class_items(class_id);
    if pool.is_empty() {
        return Err(Error::contract(format!("class {class_id} is empty")));
    }
    let plan = plan_sequence(pool.len(), n, sampling, rng);

    // stable sort, most noise first; ties keep draw order
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| plan.raw_times[b].total_cmp(&plan.raw_times[a]));

    let dims = ds.latent_shape().dims();
    let mut chunks = Vec::with_capacity(n);
    let mut source_items = Vec::with_capacity(n);
    for &slot in &order {
        let item = plan.items[slot];
        let eps = Tensor::gaussian(&dims, rng);
        let t = FlowTime::new(plan.raw_times[slot].clamp(0.0, 1.0))?;
        chunks.push(corrupt(&pool[item], &eps, t)?);
        source_items.push(item);
    }
    Ok(TrainingSequence {
        class_id,
        chunks,
        source_items,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(items: usize) -> CategoryDataset {
        let mut rng = RngState::new(3);
        make_gaussian_mixture_dataset(3, items, LatentShape::new(1, 2, 2), 1.0, &mut rng).unwrap()
    }

    #[test]
    fn single_chunk_sequence() {
        let ds = toy(4);
        let seq = build_sequence(&ds, 1, 1, &mut RngState::new(0)).unwrap();
        assert_eq!(seq.len(), 1);
        assert_eq!(seq.class_id, 1);
    }

    #[test]
    fn times_are_sorted_raw_draws() {
        let ds = toy(4);
        let rng = RngState::new(42);
        let plan = plan_sequence(4, 5, TimeSampling::Uniform, &mut rng.clone());
        let seq = build_sequence(&ds, 0, 5, &mut rng.clone()).unwrap();
        let mut expected = plan.raw_times.clone();
        expected.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let got: Vec<f64> = seq.times().iter().map(|t| t.get()).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn deterministic_given_rng() {
        let ds = toy(4);
        let a = build_sequence(&ds, 2, 5, &mut RngState::new(9)).unwrap();
        let b = build_sequence(&ds, 2, 5, &mut RngState::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_arguments() {
        let ds = toy(2);
        assert!(build_sequence(&ds, 0, 0, &mut RngState::new(0)).is_err());
        assert!(build_sequence(&ds, 3, 2, &mut RngState::new(0)).is_err());
    }

    #[test]
    fn empty_class_rejected_at_construction() {
        let shape = LatentShape::new(1, 1, 1);
        assert!(CategoryDataset::new(shape, vec![vec![Tensor::zeros(&[1, 1, 1])], vec![]]).is_err());
    }

    #[test]
    fn chunks_use_their_source_items() {
        let ds = toy(6);
        let seq = build_sequence(&ds, 1, 4, &mut RngState::new(5)).unwrap();
        for (chunk, &item) in seq.chunks.iter().zip(&seq.source_items) {
            assert_eq!(chunk.z_star, ds.class_items(1)[item]);
        }
    }

    #[test]
    fn logit_normal_times_in_range() {
        let ds = toy(2);
        let sampling = TimeSampling::LogitNormal { mean: 0.0, std: 1.0 };
        let seq = build_sequence_with(&ds, 0, 8, sampling, &mut RngState::new(1)).unwrap();
        let ts = seq.times();
        assert!(ts.windows(2).all(|w| w[0] >= w[1]));
        assert!(ts.iter().all(|t| (0.0..=1.0).contains(&t.get())));
    }
}
