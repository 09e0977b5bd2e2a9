//! A short multi-pair training run on a small synthetic corpus, with
//! metrics and checkpoints written to a temporary directory.

use vince::data::{generate_synthetic, FrameStore, SyntheticWorldConfig};
use vince::train::{checkpoint_hash, load_checkpoint, train, Regime, TrainConfig, TrainOptions, TrainState};

fn main() -> vince::Result<()> {
    let tmp = tempfile::tempdir()?;
    let world = SyntheticWorldConfig {
        videos_per_class: 8,
        ..SyntheticWorldConfig::default()
    };
    let manifest = generate_synthetic(&world, 1, &tmp.path().join("corpus"))?;
    let store = FrameStore::load(&manifest)?;
    let cfg = TrainConfig {
        regime: Regime::MultiPair,
        iterations: 60,
        bank_size: 512,
        checkpoint_every: 30,
        seed: 1,
        ..TrainConfig::default()
    };
    let out = tmp.path().join("run");
    let mut state = TrainState::new(cfg)?;
    let on_step = |r: &vince::train::StepReport| {
        if r.iteration.is_multiple_of(10) {
            println!(
                "step {:>3} loss {:.4} (uniform {:.4}) lr {:.3}",
                r.iteration,
                r.loss,
                ((1 + r.competitors_per_score) as f64).ln(),
                r.lr
            );
        }
    };
    let rows = train(
        &mut state,
        &store,
        TrainOptions {
            out_dir: Some(out.clone()),
            on_step: Some(Box::new(on_step)),
            ..Default::default()
        },
    )?;
    let ckpt = out.join("final.ckpt");
    println!("{} steps, final checkpoint {}", rows.len(), checkpoint_hash(&ckpt)?);
    let reloaded = load_checkpoint(&ckpt)?;
    println!("reloaded at iteration {}, identical state: {}", reloaded.iteration, reloaded == state);
    Ok(())
}
