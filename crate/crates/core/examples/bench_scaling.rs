//! Times hybrid, softmax and causal linear attention over growing sequence
//! lengths and fits the log-log slope of each.
//!
//! cargo run --release --example bench_scaling -- [max_T]

use arflow::bench::{fit_scaling_exponent, sweep, to_csv, Mechanism, SweepConfig};

fn main() -> arflow::Result<()> {
    let max_t: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4096);
    let t_list: Vec<usize> = (8..).map(|k| 1usize << k).take_while(|&t| t <= max_t).collect();
    for m in Mechanism::ALL {
        let points = sweep(&SweepConfig::new(m, t_list.clone()))?;
        print!("{}", to_csv(&points));
        let (slope, r2) = fit_scaling_exponent(&points)?;
        println!("# {}: slope {slope:.3}, r² {r2:.4}\n", m.name());
    }
    Ok(())
}
