//! Trains and compares the four diarization systems on synthetic data.
//!
//! ```text
//! cargo run --release --example compare_systems -- [seed ...]
//! ```

use probdiar::pipeline::{experiment_table, run_experiment, ExperimentConfig};
use probdiar::training::history_table;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let seeds: Vec<u64> = std::env::args().skip(1).map(|s| s.parse()).collect::<Result<_, _>>()?;
    let seeds = if seeds.is_empty() { vec![1] } else { seeds };
    let base = ExperimentConfig::default();
    for seed in seeds {
        let t = std::time::Instant::now();
        let res = run_experiment(&base.with_seed(seed))?;
        println!("seed {seed} ({:.1} s)", t.elapsed().as_secs_f64());
        print!("{}", experiment_table(&res.systems));
        println!("plda-only training:\n{}", history_table(&res.plda_only_history));
        println!("full training:\n{}", history_table(&res.full_history));
    }
    Ok(())
}
