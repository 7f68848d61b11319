//! Binary PGM (P5) grids of latent channels.

use crate::error::{Error, Result};
use crate::numcore::Tensor;

/// One 8-bit grayscale image per channel, tiling the samples row by row
/// with a one-pixel gap. Each channel is min-max normalised over all
/// samples.
pub fn channel_grids(latents: &[Tensor]) -> Result<Vec<Vec<u8>>> {
    let Some(first) = latents.first() else {
        return Ok(Vec::new());
    };
    let &[c, h, w] = first.shape() else {
        return Err(Error::contract(format!("grid needs c×h×w latents, got {:?}", first.shape())));
    };
    if latents.iter().any(|t| t.shape() != first.shape()) {
        return Err(Error::contract("latents differ in shape"));
    }
    let n = latents.len();
    let cols = (n as f64).sqrt().ceil() as usize;
    let rows = n.div_ceil(cols);
    let (gw, gh) = (cols * (w + 1) - 1, rows * (h + 1) - 1);
    let plane = h * w;
    (0..c)
        .map(|ch| {
            let vals = || latents.iter().flat_map(|t| &t.data()[ch * plane..(ch + 1) * plane]);
            let lo = vals().copied().fold(f64::INFINITY, f64::min);
            let hi = vals().copied().fold(f64::NEG_INFINITY, f64::max);
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(Error::NonFinite("image grid"));
            }
            let span = if hi > lo { hi - lo } else { 1.0 };
            let mut px = vec![0u8; gw * gh];
            for (i, t) in latents.iter().enumerate() {
                let (oy, ox) = ((i / cols) * (h + 1), (i % cols) * (w + 1));
                for y in 0..h {
                    for x in 0..w {
                        let v = (t.data()[ch * plane + y * w + x] - lo) / span;
                        px[(oy + y) * gw + ox + x] = (v * 255.0).round().clamp(0.0, 255.0) as u8;
                    }
                }
            }
            let mut out = format!("P5\n{gw} {gh}\n255\n").into_bytes();
            out.extend_from_slice(&px);
            Ok(out)
        })
        .collect()
}
