//! Gate values across logits and the chunk-level decay they produce.

use arflow::attention::{chunk_decay, gate};
use arflow::numcore::{RngState, Tensor};

fn main() -> arflow::Result<()> {
    let logits = [-8.0, -2.0, 0.0, 2.0, 8.0];
    let x = Tensor::new(&[logits.len(), 1], logits.to_vec())?;
    let g = gate(&x, &Tensor::new(&[1, 1], vec![1.0])?, &Tensor::zeros(&[1, 1]), 16.0)?;
    for (l, v) in logits.iter().zip(g.data()) {
        println!("logit {l:>5}: g = {v:.6}");
    }
    println!("0.5^(1/16) = {:.6}", 0.5f64.powf(1.0 / 16.0));

    let mut rng = RngState::new(3);
    for c in [1, 4, 16, 64] {
        let gates: Vec<f64> = (0..c).map(|_| 0.8 + 0.2 * rng.uniform()).collect();
        let lo = gates.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = gates.iter().cloned().fold(0.0, f64::max);
        println!("C={c:>2}: gamma {:.5} in [{lo:.5}, {hi:.5}]", chunk_decay(&gates)?);
    }
    Ok(())
}
