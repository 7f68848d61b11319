//! Patch layout and the fixed sinusoidal tables.

use crate::error::{Error, Result};
use crate::numcore::Tensor;

fn check(h: usize, w: usize, p: usize) -> Result<()> {
    if p == 0 || !h.is_multiple_of(p) || !w.is_multiple_of(p) {
        return Err(Error::contract(format!("latent {h}×{w} is not divisible into {p}×{p} patches")));
    }
    Ok(())
}

/// `[d, h, w]` → `M × (p·p·d)`. Patches are taken left to right, top to
/// bottom; inside a token the feature order is `(py, px, channel)`.
pub fn patchify(z: &Tensor, p: usize) -> Result<Tensor> {
    let [d, h, w] = match z.shape() {
        &[d, h, w] => [d, h, w],
        s => return Err(Error::shape("patchify", s, &[0, 0, 0])),
    };
    check(h, w, p)?;
    let (gh, gw) = (h / p, w / p);
    let src = z.data();
    let mut out = Vec::with_capacity(z.numel());
    for gy in 0..gh {
        for gx in 0..gw {
            for py in 0..p {
                for px in 0..p {
                    let (y, x) = (gy * p + py, gx * p + px);
                    for c in 0..d {
                        out.push(src[(c * h + y) * w + x]);
                    }
                }
            }
        }
    }
    Tensor::new(&[gh * gw, p * p * d], out)
}

/// Exact inverse of [`patchify`].
pub fn unpatchify(tokens: &Tensor, p: usize, dims: [usize; 3]) -> Result<Tensor> {
    let [d, h, w] = dims;
    check(h, w, p)?;
    let (gh, gw) = (h / p, w / p);
    if tokens.shape() != [gh * gw, p * p * d] {
        return Err(Error::shape("unpatchify", tokens.shape(), &[gh * gw, p * p * d]));
    }
    let src = tokens.data();
    let mut out = vec![0.0; d * h * w];
    let mut i = 0;
    for gy in 0..gh {
        for gx in 0..gw {
            for py in 0..p {
                for px in 0..p {
                    let (y, x) = (gy * p + py, gx * p + px);
                    for c in 0..d {
                        out[(c * h + y) * w + x] = src[i];
                        i += 1;
                    }
                }
            }
        }
    }
    Tensor::new(&dims, out)
}

fn sincos_1d(dim: usize, pos: f64, out: &mut Vec<f64>) {
    let half = dim / 2;
    for i in 0..half {
        let omega = 1.0 / 10_000f64.powf(i as f64 / half as f64);
        out.push((pos * omega).sin());
    }
    for i in 0..half {
        let omega = 1.0 / 10_000f64.powf(i as f64 / half as f64);
        out.push((pos * omega).cos());
    }
}

/// `M × hidden` table: the first half of each row encodes the patch row,
/// the second half the patch column. `hidden` must be a multiple of 4.
pub fn positional_table(grid_h: usize, grid_w: usize, hidden: usize) -> Result<Tensor> {
    if !hidden.is_multiple_of(4) || hidden == 0 {
        return Err(Error::Config(format!("hidden size {hidden} must be a positive multiple of 4")));
    }
    let mut data = Vec::with_capacity(grid_h * grid_w * hidden);
    for gy in 0..grid_h {
        for gx in 0..grid_w {
            sincos_1d(hidden / 2, gy as f64, &mut data);
            sincos_1d(hidden / 2, gx as f64, &mut data);
        }
    }
    Tensor::new(&[grid_h * grid_w, hidden], data)
}

/// Sinusoidal features of flow times, `times.len() × dim`. Times are
/// scaled by 1000 so that `[0, 1]` spans the frequency range.
pub fn time_features(times: &[f64], dim: usize) -> Result<Tensor> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::Config(format!("time feature size {dim} must be even")));
    }
    let half = dim / 2;
    let mut data = Vec::with_capacity(times.len() * dim);
    for &t in times {
        let t = t * 1000.0;
        for i in 0..half {
            let f = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            data.push((t * f).cos());
        }
        for i in 0..half {
            let f = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
            data.push((t * f).sin());
        }
    }
    Tensor::new(&[times.len(), dim], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::RngState;

    #[test]
    fn whole_latent_in_one_token() {
        let z = Tensor::gaussian(&[3, 2, 2], &mut RngState::new(0));
        let t = patchify(&z, 2).unwrap();
        assert_eq!(t.shape(), &[1, 12]);
    }

    #[test]
    fn round_trip_is_exact() {
        let z = Tensor::gaussian(&[4, 6, 8], &mut RngState::new(1));
        for p in [1, 2] {
            assert_eq!(unpatchify(&patchify(&z, p).unwrap(), p, [4, 6, 8]).unwrap(), z);
        }
    }

    #[test]
    fn first_token_is_top_left_block() {
        // 1 channel, values encode their position: v = 10·y + x
        let data = (0..16).map(|i| (10 * (i / 4) + i % 4) as f64).collect();
        let z = Tensor::new(&[1, 4, 4], data).unwrap();
        let t = patchify(&z, 2).unwrap();
        assert_eq!(t.row(0), &[0.0, 1.0, 10.0, 11.0]);
        assert_eq!(t.row(1), &[2.0, 3.0, 12.0, 13.0]);
        assert_eq!(t.row(2), &[20.0, 21.0, 30.0, 31.0]);
    }

    #[test]
    fn channels_are_innermost() {
        let data = (0..8).map(|i| i as f64).collect();
        let z = Tensor::new(&[2, 2, 2], data).unwrap();
        let t = patchify(&z, 2).unwrap();
        assert_eq!(t.row(0), &[0.0, 4.0, 1.0, 5.0, 2.0, 6.0, 3.0, 7.0]);
    }

    #[test]
    fn indivisible_rejected() {
        let z = Tensor::zeros(&[1, 3, 4]);
        assert!(patchify(&z, 2).is_err());
    }

    #[test]
    fn tables_have_expected_shapes() {
        let pos = positional_table(4, 4, 8).unwrap();
        assert_eq!(pos.shape(), &[16, 8]);
        // origin: sin terms 0, cos terms 1
        assert_eq!(pos.row(0), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0]);
        assert!(positional_table(2, 2, 6).is_err());
        let tf = time_features(&[0.0, 0.5], 4).unwrap();
        assert_eq!(tf.row(0), &[1.0, 1.0, 0.0, 0.0]);
    }
}
