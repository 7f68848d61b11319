//! Trains the mixture toy at N = 1, 2, 5 and compares the final-window
//! loss, then trains an N = 5 model at a higher rate and samples it with and
//! without cached states and at fewer steps.
//!
//! cargo run --release --example seq_len_sweep -- [steps] [lr] [eval_lr]

use arflow::cli::eval::mmd2;
use arflow::model::{ModelConfig, ModelParams};
use arflow::numcore::{RngState, Tensor};
use arflow::sampler::{generate_many, SamplerConfig};
use arflow::sequence::{make_gaussian_mixture_dataset, CategoryDataset, LatentShape};
use arflow::training::{TrainConfig, Trainer};

fn mmd(params: &ModelParams, refs: &[Vec<Tensor>], cfg: &SamplerConfig) -> arflow::Result<f64> {
    let mut rng = RngState::new(5);
    let mut total = 0.0;
    for (c, r) in refs.iter().enumerate() {
        let s = generate_many(params, c, 200, cfg, &mut rng)?;
        total += mmd2(&s, r)?.value;
    }
    Ok(total / refs.len() as f64)
}

fn main() -> arflow::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(2000);
    let lr: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(1e-4);
    let eval_lr: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(5e-4);
    let shape = LatentShape::new(2, 4, 4);
    let train: CategoryDataset = make_gaussian_mixture_dataset(4, 64, shape, 0.5, &mut RngState::new(11))?;
    let held = make_gaussian_mixture_dataset(4, 200, shape, 0.5, &mut RngState::new(11).split(9))?;
    let window = (steps as usize / 10).max(1);

    let model = |n: usize| ModelConfig {
        latent_shape: shape,
        hidden_size: 64,
        depth: 2,
        num_heads: 4,
        num_classes: 4,
        seq_len_train: n,
        time_freq_dim: 64,
        ..ModelConfig::default()
    };
    let train_cfg = |lr: f64| TrainConfig {
        learning_rate: lr,
        ema_decay: 0.995,
        batch_size: 8,
        total_steps: steps,
        ..TrainConfig::default()
    };
    for n in [1, 2, 5] {
        let start = std::time::Instant::now();
        let mut tr = Trainer::from_seed(model(n), train_cfg(lr))?;
        let log = tr.run(&train, |_, _| Ok(()))?;
        let tail = &log[log.len() - window..];
        let mean = tail.iter().map(|m| m.loss).sum::<f64>() / tail.len() as f64;
        println!("N={n}: final-{window} loss {mean:.4} ({:.0}s)", start.elapsed().as_secs_f64());
    }

    let mut tr = Trainer::from_seed(model(5), train_cfg(eval_lr))?;
    tr.run(&train, |_, _| Ok(()))?;
    let params = tr.ema_params()?;
    let refs: Vec<Vec<Tensor>> = (0..4)
        .map(|c| train.class_items(c).iter().chain(held.class_items(c)).cloned().collect())
        .collect();
    for (k, cache) in [(32, true), (32, false), (4, true)] {
        let cfg = SamplerConfig {
            steps: k,
            use_cache: cache,
            ..SamplerConfig::default()
        };
        println!("K={k} cache={cache}: mmd2 {:.4}", mmd(&params, &refs, &cfg)?);
    }
    Ok(())
}
