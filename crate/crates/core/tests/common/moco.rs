//! Memory-bank replay and momentum-convergence checks.

use rand::Rng;
use vince::encoder::EncoderParams;
use vince::moco::{MemoryBank, MocoState};

use super::*;

/// Runs a random sequence of enqueues against a plain-list replay log and
/// checks that the bank always holds the newest `min(total, m)` rows, oldest
/// first.
pub fn bank_replay_holds(seed: u64) -> bool {
    let mut r = rng(seed);
    let capacity = r.gen_range(1..=24);
    let dim = r.gen_range(1..=4);
    let mut bank = MemoryBank::new(capacity, dim);
    let mut log: Vec<Vec<f32>> = Vec::new();
    for _ in 0..r.gen_range(1..=12) {
        let b = r.gen_range(0..=capacity);
        let rows: Vec<Vec<f32>> = unit_rows(&mut r, b, dim)
            .into_iter()
            .map(|row| row.into_iter().map(|v| v as f32).collect())
            .collect();
        let tensor = vince::tensor::Tensor::new([b, dim], rows.iter().flatten().copied().collect()).unwrap();
        bank.enqueue(&tensor, None).unwrap();
        log.extend(rows);
        let keep = log.len().min(capacity);
        let want: Vec<f32> = log[log.len() - keep..].iter().flatten().copied().collect();
        let view = bank.negatives_view();
        if view.shape() != [keep, dim] || view.data() != want.as_slice() {
            return false;
        }
        if bank.cursor() as u64 != bank.total_enqueued() % capacity as u64 || bank.filled() != keep {
            return false;
        }
    }
    true
}

/// Applies the momentum rule `steps` times towards a fixed `f` and checks
/// `‖g − f‖∞ ≤ αᵗ ‖g₀ − f‖∞` after every step.
pub fn momentum_bound_holds(alpha: f32, steps: usize, seed: u64) -> bool {
    let cfg = super::gradcheck::tiny_encoder_config();
    let f = EncoderParams::init(&cfg, seed).unwrap();
    let g0 = EncoderParams::init(&cfg, seed + 1).unwrap();
    let dist = |a: &EncoderParams, b: &EncoderParams| -> f64 {
        a.tensors()
            .iter()
            .zip(b.tensors())
            .map(|(x, y)| x.max_abs_diff(y) as f64)
            .fold(0.0, f64::max)
    };
    let d0 = dist(&g0, &f);
    let mut state = MocoState::from_parts(f, g0, alpha).unwrap();
    for t in 1..=steps {
        state.momentum_update().unwrap();
        // one f32 rounding per element per step
        let slack = t as f64 * 1e-7 * (1.0 + d0);
        if dist(&state.g, &state.f) > (alpha as f64).powi(t as i32) * d0 + slack {
            return false;
        }
    }
    true
}
