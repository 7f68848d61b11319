//! Statistical properties of training-sequence construction over many builds.

use arflow::numcore::RngState;
use arflow::sequence::{build_sequence, make_gaussian_mixture_dataset, CategoryDataset, LatentShape, TimeSampling};
use arflow::model::NULL_CLASS;
use arflow::training::draw_batch;

fn dataset(items: usize) -> CategoryDataset {
    make_gaussian_mixture_dataset(4, items, LatentShape::new(1, 2, 2), 0.5, &mut RngState::new(21)).unwrap()
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[test]
fn chunk_noise_is_uncorrelated_across_chunks() {
    let ds = dataset(8);
    let mut rng = RngState::new(1);
    let builds = 10_000;
    let mut first = Vec::with_capacity(builds);
    let mut second = Vec::with_capacity(builds);
    let mut last = Vec::with_capacity(builds);
    for i in 0..builds {
        let s = build_sequence(&ds, i % 4, 3, &mut rng).unwrap();
        first.push(s.chunks[0].eps.data()[0]);
        second.push(s.chunks[1].eps.data()[0]);
        last.push(s.chunks[2].eps.data()[3]);
    }
    for (a, b) in [(&first, &second), (&first, &last), (&second, &last)] {
        let rho = pearson(a, b);
        assert!(rho.abs() < 0.02, "rho = {rho}");
    }
}

#[test]
fn sources_are_diverse_at_the_expected_rate() {
    let ds = dataset(4);
    let mut rng = RngState::new(2);
    let builds = 10_000;
    let n = 3;
    let same = (0..builds)
        .filter(|i| {
            let s = build_sequence(&ds, i % 4, n, &mut rng).unwrap();
            s.source_items.iter().all(|&k| k == s.source_items[0])
        })
        .count();
    // all n chunks from one item: (1/4)^(n-1)
    let p = 0.25f64.powi(n as i32 - 1);
    let rate = same as f64 / builds as f64;
    let se = (p * (1.0 - p) / builds as f64).sqrt();
    assert!((rate - p).abs() < 5.0 * se, "rate {rate} vs {p}");
}

#[test]
fn times_never_increase_along_a_sequence() {
    let ds = dataset(4);
    let mut rng = RngState::new(3);
    for n in [1, 2, 5, 9] {
        for _ in 0..500 {
            let t = build_sequence(&ds, 1, n, &mut rng).unwrap().times();
            assert!(t.windows(2).all(|w| w[0].get() >= w[1].get()));
        }
    }
}

#[test]
fn label_dropout_rate_matches_configuration() {
    let ds = dataset(4);
    for p in [0.1, 0.5] {
        let mut rng = RngState::new(4);
        let batch = draw_batch(&ds, 10_000, 1, p, TimeSampling::Uniform, &mut rng).unwrap();
        let dropped = batch.iter().filter(|b| b.label == NULL_CLASS).count() as f64 / 10_000.0;
        assert!((dropped - p).abs() < 0.01, "p {p}: {dropped}");
        assert!(batch
            .iter()
            .all(|b| b.label == NULL_CLASS || b.label == b.sequence.class_id));
    }
}
