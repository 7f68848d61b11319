//! Runs hybrid attention in its parallel and recurrent forms, then continues
//! a sequence from a saved state.

use arflow::attention::{hybrid_forward_chunkwise, hybrid_forward_recurrent, AttentionParams, HybridAttnConfig};
use arflow::numcore::{with_precision, Precision, RngState, Tape, Tensor};

fn main() -> arflow::Result<()> {
    with_precision(Precision::F64, || {
        let cfg = HybridAttnConfig::new(4, 8, 16);
        let mut rng = RngState::new(0);
        let p = AttentionParams::random(&cfg, 0.2, &mut rng);
        let x = Tensor::gaussian(&[8 * 16, cfg.hidden()], &mut rng);
        let tape = Tape::new();
        let pv = p.attach(&tape, false);

        let par = hybrid_forward_chunkwise(tape.constant(x.clone()), 1, &cfg, &pv, None)?;
        let rec = hybrid_forward_recurrent(tape.constant(x.clone()), 1, &cfg, &pv, None)?;
        println!("chunkwise vs recurrent: {:.2e}", par.out.value().max_abs_diff(&rec.out.value()));

        // first half, then the second half from the carried state
        let half = 4 * 16;
        let xv = tape.constant(x);
        let first = hybrid_forward_chunkwise(xv.slice_rows(0, half)?, 1, &cfg, &pv, None)?;
        let second = hybrid_forward_chunkwise(xv.slice_rows(half, half)?, 1, &cfg, &pv, Some(&first.states))?;
        let tail = par.out.slice_rows(half, half)?;
        println!("continued from state: {:.2e}", second.out.value().max_abs_diff(&tail.value()));
        println!("state after chunk {}", second.states[0].chunk_index);

        let decays: Vec<String> = par.traces[0].decays.data().iter().step_by(4).map(|g| format!("{g:.4}")).collect();
        println!("head 0 chunk decays: {}", decays.join(" "));
        Ok(())
    })
}
