//! ODE and SDE sampling against a velocity field with a known endpoint.

use arflow::numcore::{RngState, Tensor};
use arflow::sampler::{generate, PointTarget, SamplerConfig, SamplerMode};

fn main() -> arflow::Result<()> {
    let dims = [1, 4, 4];
    let target = Tensor::gaussian(&dims, &mut RngState::new(1));
    let field = PointTarget { target: target.clone() };
    for steps in [1, 8, 32] {
        let ode = SamplerConfig { steps, ..SamplerConfig::default() };
        let z = generate(&field, 0, &ode, &dims, &mut RngState::new(2))?;
        let sde = SamplerConfig { mode: SamplerMode::SdeEulerMaruyama, ..ode };
        let zs = generate(&field, 0, &sde, &dims, &mut RngState::new(2))?;
        println!(
            "K={steps:>2}: ode error {:.2e}, sde error {:.2e}",
            z.max_abs_diff(&target),
            zs.max_abs_diff(&target)
        );
    }
    Ok(())
}
