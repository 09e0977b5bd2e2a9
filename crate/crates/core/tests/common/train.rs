//! Small training fixtures plus the determinism and resume checks shared by
//! the train tests and the acceptance report.

use std::fs;
use std::path::Path;

use vince::data::synthetic::render_video;
use vince::data::{AugmentConfig, FrameStore, SyntheticWorldConfig};
use vince::train::{checkpoint_path, load_checkpoint, train, Regime, TrainConfig, TrainOptions, TrainState, METRICS_FILE};

/// An in-memory corpus of `classes × per_class` videos, 16 px frames.
pub fn tiny_store(classes: usize, per_class: usize, frames: usize) -> FrameStore {
    let world = SyntheticWorldConfig {
        num_classes: classes,
        videos_per_class: per_class,
        frames_per_video: frames,
        image_size: 16,
        ..SyntheticWorldConfig::default()
    };
    let mut ids = Vec::new();
    let mut labels = Vec::new();
    let mut all = Vec::new();
    for c in 0..classes {
        for i in 0..per_class {
            let index = c * per_class + i;
            ids.push(format!("v{index:03}"));
            labels.push(Some(c as i64));
            all.push(render_video(&world, c, index, 11).iter().map(|f| f.to_image()).collect());
        }
    }
    FrameStore::from_frames(ids, labels, all).unwrap()
}

pub fn tiny_config(regime: Regime) -> TrainConfig {
    let (videos, k) = match regime {
        Regime::MultiPair => (3, 2),
        _ => (6, 1),
    };
    TrainConfig {
        regime,
        videos: Some(videos),
        frames_per_video: Some(k),
        iterations: 40,
        bank_size: 24,
        alpha: 0.9,
        seed: 5,
        record_timing: false,
        encoder: super::gradcheck::tiny_encoder_config(),
        augment: AugmentConfig {
            output_size: 16,
            ..AugmentConfig::default()
        },
        ..TrainConfig::default()
    }
}

/// Two runs of the same config and seed write byte-identical metrics.
pub fn metrics_are_reproducible(root: &Path, regime: Regime) -> bool {
    let store = tiny_store(4, 3, 3);
    let run = |name: &str| -> Vec<u8> {
        let dir = root.join(name);
        let mut state = TrainState::new(tiny_config(regime)).unwrap();
        train(&mut state, &store, TrainOptions { out_dir: Some(dir.clone()), ..Default::default() }).unwrap();
        fs::read(dir.join(METRICS_FILE)).unwrap()
    };
    let a = run("a");
    let b = run("b");
    a == b && a.len() > 20
}

/// Training `at + extra` steps in one go and resuming from the checkpoint at
/// `at` give identical losses, metrics files and final checkpoints.
pub fn resume_is_exact(root: &Path, regime: Regime, at: u64, extra: u64) -> bool {
    let store = tiny_store(4, 3, 3);
    let mut cfg = tiny_config(regime);
    cfg.iterations = at + extra;
    cfg.checkpoint_every = at;

    let full_dir = root.join("full");
    let mut full = TrainState::new(cfg.clone()).unwrap();
    let full_rows = train(&mut full, &store, TrainOptions { out_dir: Some(full_dir.clone()), ..Default::default() }).unwrap();

    let part_dir = root.join("part");
    let mut first = TrainState::new(cfg).unwrap();
    train(&mut first, &store, TrainOptions { out_dir: Some(part_dir.clone()), max_steps: Some(at + 3), ..Default::default() }).unwrap();
    let mut resumed = load_checkpoint(&checkpoint_path(&part_dir, at)).unwrap();
    if resumed.iteration != at {
        return false;
    }
    let tail = train(&mut resumed, &store, TrainOptions { out_dir: Some(part_dir.clone()), ..Default::default() }).unwrap();

    let losses = |rows: &[vince::train::MetricsRow]| rows.iter().map(|r| r.loss.to_bits()).collect::<Vec<_>>();
    losses(&full_rows[at as usize..]) == losses(&tail)
        && resumed == full
        && fs::read(full_dir.join(METRICS_FILE)).unwrap() == fs::read(part_dir.join(METRICS_FILE)).unwrap()
        && fs::read(full_dir.join("final.ckpt")).unwrap() == fs::read(part_dir.join("final.ckpt")).unwrap()
}

pub struct SmokeRun {
    pub losses: Vec<f64>,
    /// `ln(1 + competitors)`: the loss when every similarity is equal.
    pub uniform: Vec<f64>,
}

fn median(v: &[f64]) -> f64 {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    (v[(n - 1) / 2] + v[n / 2]) / 2.0
}

impl SmokeRun {
    /// Medians of the first and last 50 losses.
    pub fn loss_trend(&self) -> (f64, f64) {
        let n = self.losses.len();
        (median(&self.losses[..50]), median(&self.losses[n - 50..]))
    }

    /// Same, for the distance below the uniform loss.
    pub fn gap_trend(&self) -> (f64, f64) {
        let gap: Vec<f64> = self.uniform.iter().zip(&self.losses).map(|(u, l)| u - l).collect();
        let n = gap.len();
        (median(&gap[..50]), median(&gap[n - 50..]))
    }
}

/// 200 steps at the default configuration on a default synthetic corpus.
pub fn smoke_run(root: &Path, regime: Regime, seed: u64) -> SmokeRun {
    let manifest = vince::data::generate_synthetic(&SyntheticWorldConfig::default(), seed, root).unwrap();
    let store = FrameStore::load(&manifest).unwrap();
    let cfg = TrainConfig {
        regime,
        iterations: 200,
        seed,
        record_timing: false,
        ..TrainConfig::default()
    };
    let mut state = TrainState::new(cfg).unwrap();
    let mut run = SmokeRun { losses: Vec::new(), uniform: Vec::new() };
    let on_step = |r: &vince::train::StepReport| {
        run.losses.push(r.loss as f64);
        run.uniform.push(((1 + r.competitors_per_score) as f64).ln());
    };
    train(&mut state, &store, TrainOptions { on_step: Some(Box::new(on_step)), ..Default::default() }).unwrap();
    run
}
