//! Synthetic stand-ins for encoded image latents.

use super::{CategoryDataset, LatentShape};
use crate::error::{Error, Result};
use crate::numcore::{RngState, Tensor};

/// Stream id offset for per-class patterns, far away from item draws.
const PATTERN_STREAM: u64 = 1 << 20;

fn check_counts(num_classes: usize, items_per_class: usize, shape: LatentShape) -> Result<()> {
    if num_classes == 0 || items_per_class == 0 || shape.numel() == 0 {
        return Err(Error::contract("dataset counts and latent extents must be positive"));
    }
    Ok(())
}

/// Per-class means of [`make_gaussian_mixture_dataset`]: a fixed function of
/// the class index and the seed.
pub fn mixture_means(num_classes: usize, shape: LatentShape, seed: u64) -> Vec<Tensor> {
    let base = RngState::new(seed);
    (0..num_classes)
        .map(|k| {
            let mut r = base.split(PATTERN_STREAM + k as u64);
            Tensor::gaussian(&shape.dims(), &mut r)
        })
        .collect()
}

/// Class `k` draws `N(μ_k, spread² I)`.
pub fn make_gaussian_mixture_dataset(
    num_classes: usize,
    items_per_class: usize,
    shape: LatentShape,
    spread: f64,
    rng: &mut RngState,
) -> Result<CategoryDataset> {
    check_counts(num_classes, items_per_class, shape)?;
    let means = mixture_means(num_classes, shape, rng.seed);
    jittered(&means, items_per_class, shape, spread, rng)
}

/// Per-class gratings of [`make_pattern_image_dataset`].
pub fn pattern_means(num_classes: usize, shape: LatentShape) -> Vec<Tensor> {
    let (h, w) = (shape.height as f64, shape.width as f64);
    (0..num_classes)
        .map(|k| {
            let freq = 1.0 + (k % 3) as f64;
            let angle = std::f64::consts::PI * k as f64 / num_classes as f64;
            let (ca, sa) = (angle.cos(), angle.sin());
            let mut data = Vec::with_capacity(shape.numel());
            for c in 0..shape.channels {
                let phase = std::f64::consts::FRAC_PI_2 * c as f64;
                for y in 0..shape.height {
                    for x in 0..shape.width {
                        let u = x as f64 / w * ca + y as f64 / h * sa;
                        data.push((std::f64::consts::TAU * freq * u + phase).cos());
                    }
                }
            }
            Tensor::new(&shape.dims(), data).expect("pattern extents")
        })
        .collect()
}

/// Class `k` is an oriented grating plus i.i.d. Gaussian jitter.
pub fn make_pattern_image_dataset(
    num_classes: usize,
    items_per_class: usize,
    shape: LatentShape,
    jitter: f64,
    rng: &mut RngState,
) -> Result<CategoryDataset> {
    check_counts(num_classes, items_per_class, shape)?;
    let means = pattern_means(num_classes, shape);
    jittered(&means, items_per_class, shape, jitter, rng)
}

fn jittered(
    means: &[Tensor],
    items_per_class: usize,
    shape: LatentShape,
    scale: f64,
    rng: &mut RngState,
) -> Result<CategoryDataset> {
    let items = means
        .iter()
        .map(|mu| {
            (0..items_per_class)
                .map(|_| {
                    let noise = Tensor::gaussian(&shape.dims(), rng);
                    mu.zip_with(&noise, "jitter", |m, n| m + scale * n)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    CategoryDataset::new(shape, items)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHAPE: LatentShape = LatentShape {
        channels: 2,
        height: 2,
        width: 2,
    };

    fn class_mean(ds: &CategoryDataset, k: usize) -> Vec<f64> {
        let items = ds.class_items(k);
        let mut acc = vec![0.0; SHAPE.numel()];
        for it in items {
            for (a, x) in acc.iter_mut().zip(it.data()) {
                *a += x;
            }
        }
        acc.iter().map(|a| a / items.len() as f64).collect()
    }

    #[test]
    fn zero_spread_gives_means() {
        let mut rng = RngState::new(8);
        let ds = make_gaussian_mixture_dataset(3, 5, SHAPE, 0.0, &mut rng).unwrap();
        let means = mixture_means(3, SHAPE, 8);
        for k in 0..3 {
            assert!(ds.class_items(k).iter().all(|t| *t == means[k]));
        }
    }

    #[test]
    fn mixture_mean_recovery() {
        let mut rng = RngState::new(1);
        let ds = make_gaussian_mixture_dataset(2, 10_000, SHAPE, 0.1, &mut rng).unwrap();
        let means = mixture_means(2, SHAPE, 1);
        for k in 0..2 {
            for (got, want) in class_mean(&ds, k).iter().zip(means[k].data()) {
                assert!((got - want).abs() < 0.01, "class {k}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn class_means_are_distinct() {
        let means = mixture_means(4, SHAPE, 3);
        for i in 0..4 {
            for j in i + 1..4 {
                assert!(means[i].max_abs_diff(&means[j]) > 0.0);
            }
        }
    }

    #[test]
    fn pattern_dataset_trio() {
        let mut rng = RngState::new(2);
        let exact = make_pattern_image_dataset(3, 4, SHAPE, 0.0, &mut rng).unwrap();
        let means = pattern_means(3, SHAPE);
        assert!(exact.class_items(2).iter().all(|t| *t == means[2]));

        let big = make_pattern_image_dataset(2, 10_000, SHAPE, 0.1, &mut RngState::new(4)).unwrap();
        let means2 = pattern_means(2, SHAPE);
        for k in 0..2 {
            for (got, want) in class_mean(&big, k).iter().zip(means2[k].data()) {
                assert!((got - want).abs() < 0.01);
            }
        }

        let a = make_pattern_image_dataset(2, 3, SHAPE, 0.5, &mut RngState::new(6)).unwrap();
        let b = make_pattern_image_dataset(2, 3, SHAPE, 0.5, &mut RngState::new(6)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_counts_rejected() {
        assert!(make_gaussian_mixture_dataset(0, 1, SHAPE, 1.0, &mut RngState::new(0)).is_err());
        assert!(make_pattern_image_dataset(1, 0, SHAPE, 1.0, &mut RngState::new(0)).is_err());
    }
}
