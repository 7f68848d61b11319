//! Builds the class-conditioned Gaussian mixture, checks the class means and
//! writes the dataset file twice to show the byte-exact round trip.
//!
//! cargo run --release --example mixture_data -- [items_per_class]

use arflow::numcore::RngState;
use arflow::sequence::{build_sequence, load_dataset, make_gaussian_mixture_dataset, mixture_means, save_dataset, LatentShape};

fn main() -> arflow::Result<()> {
    let items: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let shape = LatentShape::new(2, 4, 4);
    let seed = 7;
    let ds = make_gaussian_mixture_dataset(4, items, shape, 0.5, &mut RngState::new(seed))?;
    for (k, mu) in mixture_means(4, shape, seed).iter().enumerate() {
        let pool = ds.class_items(k);
        let mut mean = vec![0.0; shape.numel()];
        for z in pool {
            for (m, v) in mean.iter_mut().zip(z.data()) {
                *m += v / pool.len() as f64;
            }
        }
        let err = mean.iter().zip(mu.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        println!("class {k}: {} items, max |mean - mu| = {err:.4}", pool.len());
    }

    let seq = build_sequence(&ds, 2, 5, &mut RngState::new(1))?;
    let times: Vec<String> = seq.times().iter().map(|t| format!("{:.3}", t.get())).collect();
    println!("sequence of class 2: times [{}], items {:?}", times.join(", "), seq.source_items);

    let dir = std::env::temp_dir();
    let (a, b) = (dir.join("mixture_a.arfds"), dir.join("mixture_b.arfds"));
    save_dataset(&ds, &a)?;
    save_dataset(&load_dataset(&a)?, &b)?;
    let same = std::fs::read(&a)? == std::fs::read(&b)?;
    println!("{} bytes, round trip identical: {same}", std::fs::metadata(&a)?.len());
    Ok(())
}
