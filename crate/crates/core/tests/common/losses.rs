//! Loss evaluations against the loop oracles, shared by the loss tests and
//! the acceptance report.

use rand::seq::SliceRandom;
use rand::Rng;
use vince::nce::{self, build_pair_mask, BatchLayout, NceConfig};
use vince::tensor::{Graph, Tensor};

use super::*;

#[derive(Clone, Copy, Debug)]
pub struct LossConfig {
    pub v: usize,
    pub k: usize,
    pub m: usize,
    pub d: usize,
    pub tau: f32,
}

impl LossConfig {
    pub fn n(&self) -> usize {
        self.v * self.k
    }

    /// n ≤ 16, m ≤ 32, k ∈ {1, 2, 4}, τ from the default multiplier down to 1.
    pub fn random(seed: u64) -> Self {
        let mut r = rng(seed);
        let k = *[1, 2, 4].choose(&mut r).unwrap();
        let v = r.gen_range(2..=16 / k);
        LossConfig {
            v,
            k,
            m: r.gen_range(0..=32),
            d: r.gen_range(2..=16),
            tau: *[1.0 / 0.07, 5.0, 1.0].choose(&mut r).unwrap(),
        }
    }
}

/// Unit rows rounded through f32 so the library and oracle see identical
/// inputs.
pub fn f32_unit_rows(r: &mut ChaCha8Rng, n: usize, d: usize) -> (Tensor, Vec<Vec<f64>>) {
    let t = to_tensor(&unit_rows(r, n, d), d);
    let rows = rows_f64(&t);
    (t, rows)
}

pub fn eval_nce(a: &Tensor, p: &Tensor, tau: f32) -> vince::Result<(f64, usize, usize)> {
    let mut g = Graph::new();
    let (a, p) = (g.constant(a.clone()), g.constant(p.clone()));
    let out = nce::nce_loss(&mut g, a, p, &NceConfig { temperature: tau })?;
    Ok((g.value(out.loss).item()? as f64, out.positive_scores, out.competitors_per_score))
}

pub fn eval_memory(a: &Tensor, p: &Tensor, bank: &Tensor, tau: f32) -> vince::Result<(f64, usize, usize)> {
    let mut g = Graph::new();
    let (a, p) = (g.constant(a.clone()), g.constant(p.clone()));
    let out = nce::memory_nce_loss(&mut g, a, p, bank, &NceConfig { temperature: tau })?;
    Ok((g.value(out.loss).item()? as f64, out.positive_scores, out.competitors_per_score))
}

pub fn eval_multi_pair(f: &Tensor, g_out: &Tensor, bank: &Tensor, k: usize, tau: f32) -> vince::Result<(f64, usize, usize)> {
    let (n, _) = f.dims2()?;
    let (m, _) = bank.dims2()?;
    let mask = build_pair_mask(BatchLayout::new(n / k, k, m)?);
    let mut g = Graph::new();
    let (fv, gv) = (g.constant(f.clone()), g.constant(g_out.clone()));
    let out = nce::multi_pair_nce_loss(&mut g, fv, gv, bank, &mask, &NceConfig { temperature: tau })?;
    Ok((g.value(out.loss).item()? as f64, out.positive_scores, out.competitors_per_score))
}

/// Absolute library-vs-oracle differences for the three losses.
pub fn oracle_gaps(cfg: LossConfig, seed: u64) -> [f64; 3] {
    let mut r = rng(seed ^ 0x5eed);
    let n = cfg.n();
    let (a, ar) = f32_unit_rows(&mut r, n, cfg.d);
    let (p, pr) = f32_unit_rows(&mut r, n, cfg.d);
    let (bank, br) = f32_unit_rows(&mut r, cfg.m, cfg.d);
    let tau = cfg.tau as f64;
    let nce = eval_nce(&a, &p, cfg.tau).unwrap().0;
    let mem = eval_memory(&a, &p, &bank, cfg.tau).unwrap().0;
    let (mp, count, _) = eval_multi_pair(&a, &p, &bank, cfg.k, cfg.tau).unwrap();
    let (mp_want, count_want) = multi_pair_oracle(&ar, &pr, &br, cfg.k, tau);
    assert_eq!(count, count_want);
    [
        (nce - nce_oracle(&ar, &pr, tau)).abs(),
        (mem - memory_oracle(&ar, &pr, &br, tau)).abs(),
        (mp - mp_want).abs(),
    ]
}

/// Losses when every embedding (and bank row) is the same unit vector.
pub fn uniform_losses(v: usize, k: usize, m: usize, d: usize, tau: f32) -> (f64, f64, f64) {
    let n = v * k;
    let mut e = vec![0.0f32; d];
    e[0] = 1.0;
    let rows = |c: usize| Tensor::new([c, d], e.iter().copied().cycle().take(c * d).collect()).unwrap();
    (
        eval_nce(&rows(n), &rows(n), tau).unwrap().0,
        eval_memory(&rows(n), &rows(n), &rows(m), tau).unwrap().0,
        eval_multi_pair(&rows(n), &rows(n), &rows(m), k, tau).unwrap().0,
    )
}

/// `|multi_pair(k = 1) − memory_nce|` on the same f, g and bank.
pub fn k1_reduction_gap(seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = r.gen_range(2..=16);
    let m = r.gen_range(0..=32);
    let d = 8;
    let (f, _) = f32_unit_rows(&mut r, n, d);
    let (g_out, _) = f32_unit_rows(&mut r, n, d);
    let (bank, _) = f32_unit_rows(&mut r, m, d);
    let tau = 1.0 / 0.07;
    let mp = eval_multi_pair(&f, &g_out, &bank, 1, tau).unwrap().0;
    let mem = eval_memory(&f, &g_out, &bank, tau).unwrap().0;
    (mp - mem).abs()
}
