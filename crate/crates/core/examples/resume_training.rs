//! Saves a checkpoint mid-run and shows the resumed run repeating the
//! uninterrupted losses bit for bit.

use arflow::model::ModelConfig;
use arflow::numcore::RngState;
use arflow::sequence::{make_gaussian_mixture_dataset, LatentShape};
use arflow::training::{Checkpoint, TrainConfig, Trainer};

fn main() -> arflow::Result<()> {
    let shape = LatentShape::new(1, 4, 4);
    let model = ModelConfig {
        latent_shape: shape,
        hidden_size: 32,
        depth: 2,
        num_heads: 2,
        num_classes: 3,
        seq_len_train: 3,
        time_freq_dim: 16,
        ..ModelConfig::default()
    };
    let train = TrainConfig {
        learning_rate: 1e-3,
        batch_size: 4,
        total_steps: 20,
        ..TrainConfig::default()
    };
    let ds = make_gaussian_mixture_dataset(3, 16, shape, 0.3, &mut RngState::new(0))?;
    let path = std::env::temp_dir().join("resume_demo.arfckpt");

    let mut full = Trainer::from_seed(model, train)?;
    let mut reference = Vec::new();
    while full.step < 20 {
        if full.step == 10 {
            Checkpoint::from_trainer(&full).save(&path)?;
        }
        reference.push(full.step(&ds)?.loss);
    }
    let mut resumed = Checkpoint::load(&path)?.into_trainer();
    for want in &reference[10..] {
        let got = resumed.step(&ds)?.loss;
        println!("step {:>2}: {got:.6} {}", resumed.step, if got.to_bits() == want.to_bits() { "same" } else { "DIFFERENT" });
    }
    Ok(())
}
