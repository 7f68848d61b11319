//! Trains a small model on the mixture toy and writes a checkpoint.
//!
//! cargo run --release --example train_toy -- [steps] [seq_len] [out.arfckpt]

use arflow::model::ModelConfig;
use arflow::numcore::RngState;
use arflow::sequence::{make_gaussian_mixture_dataset, LatentShape};
use arflow::training::{Checkpoint, TrainConfig, Trainer};

fn main() -> arflow::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(500);
    let n: usize = args.next().and_then(|s| s.parse().ok()).unwrap_or(5);
    let out = args.next().unwrap_or_else(|| std::env::temp_dir().join("toy.arfckpt").display().to_string());

    let shape = LatentShape::new(2, 4, 4);
    let model = ModelConfig {
        latent_shape: shape,
        hidden_size: 64,
        depth: 2,
        num_heads: 4,
        num_classes: 4,
        seq_len_train: n,
        time_freq_dim: 64,
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        learning_rate: 1e-3,
        ema_decay: 0.995,
        batch_size: 8,
        total_steps: steps,
        ..TrainConfig::default()
    };
    let ds = make_gaussian_mixture_dataset(4, 64, shape, 0.5, &mut RngState::new(11))?;
    let mut trainer = Trainer::from_seed(model, train)?;
    let mut window = Vec::new();
    trainer.run(&ds, |_, m| {
        window.push(m.loss);
        if window.len() == 100 {
            println!("step {:>5}  loss {:.4}", m.step, window.iter().sum::<f64>() / 100.0);
            window.clear();
        }
        Ok(())
    })?;
    Checkpoint::from_trainer(&trainer).save(out.as_ref())?;
    println!("wrote {out}");
    Ok(())
}
