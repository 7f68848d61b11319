//! Samples a checkpoint at several guidance scales and reports how close
//! each class lands to its mixture mean.
//!
//! cargo run --release --example train_toy && cargo run --release --example guided_sampling -- [ckpt]

use arflow::numcore::RngState;
use arflow::sampler::{generate_many, SamplerConfig};
use arflow::sequence::{mixture_means, LatentShape};
use arflow::training::Checkpoint;

fn main() -> arflow::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| std::env::temp_dir().join("toy.arfckpt").display().to_string());
    let trainer = Checkpoint::load(path.as_ref())?.into_trainer();
    let params = trainer.ema_params()?;
    let cfg = params.config();
    let means = mixture_means(cfg.num_classes, LatentShape::new(2, 4, 4), 11);
    for scale in [1.0, 2.0, 4.0] {
        let sc = SamplerConfig {
            cfg_scale: scale,
            ..SamplerConfig::default()
        };
        let mut rng = RngState::new(0);
        let mut dist = 0.0;
        for (k, mu) in means.iter().enumerate() {
            let s = generate_many(&params, k, 32, &sc, &mut rng)?;
            dist += s.iter().map(|z| z.sub(mu).unwrap().data().iter().map(|v| v * v).sum::<f64>().sqrt()).sum::<f64>()
                / s.len() as f64;
        }
        println!("cfg {scale}: mean distance to class mean {:.3}", dist / means.len() as f64);
    }
    Ok(())
}
