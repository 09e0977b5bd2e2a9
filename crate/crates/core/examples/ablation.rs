//! Trains each sampling regime on the default synthetic corpus and reports
//! the held-out linear-probe top-1 per seed, plus the median over seeds.
//!
//! ```text
//! cargo run --release --example ablation -- [iterations] [seeds]
//! ```

use std::time::Instant;

use vince::data::{generate_synthetic, FrameStore, SyntheticWorldConfig};
use vince::eval::{train_linear_probe, ProbeConfig};
use vince::train::{train, Regime, TrainConfig, TrainOptions, TrainState};

fn main() -> vince::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let iterations: u64 = args.first().map_or(2000, |s| s.parse().expect("iterations"));
    let seeds: u64 = args.get(1).map_or(1, |s| s.parse().expect("seeds"));
    let tmp = tempfile::tempdir()?;
    let start = Instant::now();
    let mut results = vec![Vec::new(); Regime::ALL.len()];
    for seed in 0..seeds {
        let manifest = generate_synthetic(&SyntheticWorldConfig::default(), seed, &tmp.path().join(seed.to_string()))?;
        let store = FrameStore::load(&manifest)?;
        for (arm, regime) in Regime::ALL.into_iter().enumerate() {
            let cfg = TrainConfig {
                regime,
                iterations,
                seed,
                record_timing: false,
                ..TrainConfig::default()
            };
            let mut state = TrainState::new(cfg)?;
            train(&mut state, &store, TrainOptions::default())?;
            let probe = train_linear_probe(&state.moco.f, &store, &ProbeConfig { seed, ..ProbeConfig::default() })?;
            println!(
                "seed {seed} {:<12} top-1 {:.4} (train {:.4}) at {:.0} s",
                regime.name(),
                probe.top1,
                probe.train_top1,
                start.elapsed().as_secs_f64()
            );
            results[arm].push(probe.top1);
        }
    }
    for (arm, regime) in Regime::ALL.into_iter().enumerate() {
        let mut v = results[arm].clone();
        v.sort_by(f64::total_cmp);
        println!("median {:<12} {:.4}", regime.name(), v[v.len() / 2]);
    }
    Ok(())
}
