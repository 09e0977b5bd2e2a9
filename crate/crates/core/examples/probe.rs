//! Frozen-feature evaluation: linear and temporal probes on a random encoder
//! and on the same encoder after training.
//!
//! ```text
//! cargo run --release --example probe -- [iterations]
//! ```

use vince::data::{generate_synthetic, FrameStore, SyntheticWorldConfig};
use vince::encoder::EncoderParams;
use vince::eval::{temporal_probe, train_linear_probe, ProbeConfig};
use vince::train::{train, Regime, TrainConfig, TrainOptions, TrainState};

fn report(name: &str, params: &EncoderParams, store: &FrameStore) -> vince::Result<()> {
    let cfg = ProbeConfig::default();
    let frame = train_linear_probe(params, store, &cfg)?;
    let video = temporal_probe(params, store, &cfg)?;
    println!(
        "{name:<8} frame top-1 {:.3}, temporal top-1 {:.3} (chance {:.3}, {} test frames)",
        frame.top1,
        video.top1,
        frame.chance(),
        frame.test_samples
    );
    Ok(())
}

fn main() -> vince::Result<()> {
    let iterations: u64 = std::env::args().nth(1).map_or(1000, |s| s.parse().expect("iterations"));
    let tmp = tempfile::tempdir()?;
    let manifest = generate_synthetic(&SyntheticWorldConfig::default(), 2, tmp.path())?;
    let store = FrameStore::load(&manifest)?;
    let cfg = TrainConfig {
        regime: Regime::MultiPair,
        iterations,
        seed: 2,
        ..TrainConfig::default()
    };
    let mut state = TrainState::new(cfg)?;
    report("random", &state.moco.f, &store)?;
    train(&mut state, &store, TrainOptions::default())?;
    report("trained", &state.moco.f, &store)?;
    Ok(())
}
