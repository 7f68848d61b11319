//! MMD² with its standard error between mixture samples: same distribution,
//! a small shift and a large one.

use arflow::cli::eval::{cov_error, mean_error, mmd2};
use arflow::numcore::{RngState, Tensor};
use arflow::sequence::{make_gaussian_mixture_dataset, LatentShape};

fn main() -> arflow::Result<()> {
    let shape = LatentShape::new(2, 4, 4);
    let a = make_gaussian_mixture_dataset(1, 300, shape, 0.5, &mut RngState::new(1))?;
    let b = make_gaussian_mixture_dataset(1, 300, shape, 0.5, &mut RngState::new(1).split(5))?;
    let x = a.class_items(0);
    for shift in [0.0, 0.1, 0.5] {
        let y: Vec<Tensor> = b.class_items(0).iter().map(|z| z.map(|v| v + shift)).collect();
        let m = mmd2(x, &y)?;
        println!(
            "shift {shift:.1}: mmd2 {:.5} ± {:.5} (bw {:.3}), mean err {:.3}, cov err {:.3}",
            m.value,
            m.std_err,
            m.bandwidth,
            mean_error(x, &y)?,
            cov_error(x, &y)?
        );
    }
    Ok(())
}
