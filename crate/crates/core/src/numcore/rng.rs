use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

/// Word offset between sub-streams produced by [`RngState::split`].
const SPLIT_STRIDE: u64 = 1 << 40;

/// Counter-based random stream: `(seed, counter)` fully determines every
/// subsequent draw. The counter is the ChaCha8 word position, so the state
/// can be checkpointed and restored exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub counter: u64,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    /// Independent sub-stream `k` (offset by a fixed counter stride).
    pub fn split(&self, k: u64) -> Self {
        Self {
            seed: self.seed,
            counter: self
                .counter
                .wrapping_add(k.wrapping_add(1).wrapping_mul(SPLIT_STRIDE)),
        }
    }

    fn with_stream<R>(&mut self, f: impl FnOnce(&mut ChaCha8Rng) -> R) -> R {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_word_pos(self.counter as u128);
        let out = f(&mut rng);
        self.counter = rng.get_word_pos() as u64;
        out
    }

    pub fn next_u64(&mut self) -> u64 {
        self.with_stream(|r| r.next_u64())
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    pub fn uniform(&mut self) -> f64 {
        to_unit(self.next_u64())
    }

    pub fn uniform_vec(&mut self, n: usize) -> Vec<f64> {
        self.with_stream(|r| (0..n).map(|_| to_unit(r.next_u64())).collect())
    }

    /// Standard normal draws via Box–Muller, two per pair of uniforms.
    pub fn gaussian_vec(&mut self, n: usize) -> Vec<f64> {
        self.with_stream(|r| {
            let mut out = Vec::with_capacity(n + 1);
            while out.len() < n {
                let u1 = 1.0 - to_unit(r.next_u64());
                let u2 = to_unit(r.next_u64());
                let radius = (-2.0 * u1.ln()).sqrt();
                let angle = std::f64::consts::TAU * u2;
                out.push(radius * angle.cos());
                out.push(radius * angle.sin());
            }
            out.truncate(n);
            out
        })
    }

    pub fn gaussian(&mut self) -> f64 {
        self.gaussian_vec(1)[0]
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        ((self.uniform() * n as f64) as usize).min(n - 1)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

#[inline]
fn to_unit(x: u64) -> f64 {
    (x >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_state_same_stream() {
        let mut a = RngState::new(7);
        let mut b = RngState::new(7);
        assert_eq!(a.gaussian_vec(33), b.gaussian_vec(33));
        assert_eq!(a, b);
    }

    #[test]
    fn batched_and_single_draws_agree() {
        let mut a = RngState::new(3);
        let mut b = RngState::new(3);
        let batch = a.uniform_vec(5);
        let single: Vec<f64> = (0..5).map(|_| b.uniform()).collect();
        assert_eq!(batch, single);
        assert_eq!(a.counter, b.counter);
    }

    #[test]
    fn resume_from_counter() {
        let mut a = RngState::new(11);
        a.uniform_vec(17);
        let mut resumed = RngState {
            seed: 11,
            counter: a.counter,
        };
        assert_eq!(a.uniform_vec(4), resumed.uniform_vec(4));
    }

    #[test]
    fn gaussian_moments() {
        let mut r = RngState::new(1);
        let xs = r.gaussian_vec(200_000);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn split_streams_differ() {
        let base = RngState::new(5);
        let mut s0 = base.split(0);
        let mut s1 = base.split(1);
        assert_ne!(s0.uniform_vec(4), s1.uniform_vec(4));
    }
}
