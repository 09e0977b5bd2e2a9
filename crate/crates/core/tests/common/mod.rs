//! Independent f64 reference implementations used as test oracles.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vince::encoder::{EncoderConfig, EncoderParams};
use vince::tensor::Tensor;

pub mod gradcheck;
pub mod losses;
pub mod moco;
pub mod data;
pub mod train;
pub mod eval;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(lo..hi)).collect()
}

/// `n × d` rows of unit length, as f64.
pub fn unit_rows(r: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| r.gen_range(-1.0..1.0)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect()
}

pub fn to_tensor(rows: &[Vec<f64>], d: usize) -> Tensor {
    Tensor::new(
        [rows.len(), d],
        rows.iter().flatten().map(|&v| v as f32).collect(),
    )
    .unwrap()
}

/// Rows of an f32 tensor, widened.
pub fn rows_f64(t: &Tensor) -> Vec<Vec<f64>> {
    let (n, _) = t.dims2().unwrap();
    (0..n).map(|i| t.row(i).iter().map(|&v| v as f64).collect()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `-log(exp(pos) / (exp(pos) + Σ exp(neg)))`, evaluated directly.
fn neg_log_score(pos: f64, negs: &[f64]) -> f64 {
    let denom: f64 = pos.exp() + negs.iter().map(|s| s.exp()).sum::<f64>();
    -(pos.exp() / denom).ln()
}

/// In-batch NCE by explicit loops.
pub fn nce_oracle(a: &[Vec<f64>], p: &[Vec<f64>], tau: f64) -> f64 {
    let n = a.len();
    let mut total = 0.0;
    for i in 0..n {
        let pos = tau * dot(&a[i], &p[i]);
        let negs: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| tau * dot(&a[i], &p[j])).collect();
        total += neg_log_score(pos, &negs);
    }
    total / n as f64
}

/// Memory-bank NCE by explicit loops.
pub fn memory_oracle(a: &[Vec<f64>], p: &[Vec<f64>], bank: &[Vec<f64>], tau: f64) -> f64 {
    let n = a.len();
    let mut total = 0.0;
    for i in 0..n {
        let pos = tau * dot(&a[i], &p[i]);
        let negs: Vec<f64> = bank.iter().map(|b| tau * dot(&a[i], b)).collect();
        total += neg_log_score(pos, &negs);
    }
    total / n as f64
}

/// Multi-pair NCE by explicit loops: rows `i` and `j < n` match iff
/// `i / k == j / k`. Returns `(loss, number of positive scores)`.
pub fn multi_pair_oracle(f: &[Vec<f64>], g: &[Vec<f64>], bank: &[Vec<f64>], k: usize, tau: f64) -> (f64, usize) {
    let n = f.len();
    let compare: Vec<&Vec<f64>> = g.iter().chain(bank.iter()).collect();
    let mut total = 0.0;
    let mut count = 0;
    for (i, fi) in f.iter().enumerate() {
        let sims: Vec<f64> = compare.iter().map(|c| tau * dot(fi, c)).collect();
        let is_pos = |j: usize| j < n && j / k == i / k;
        let negs: Vec<f64> = (0..compare.len()).filter(|&j| !is_pos(j)).map(|j| sims[j]).collect();
        assert_eq!(negs.len(), n + bank.len() - k);
        for j in (0..compare.len()).filter(|&j| is_pos(j)) {
            total += neg_log_score(sims[j], &negs);
            count += 1;
        }
    }
    (total / count as f64, count)
}

/// Central finite difference of `f` at `x`, one coordinate at a time.
pub fn finite_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = xp[i];
            xp[i] = orig + h;
            let up = f(&xp);
            xp[i] = orig - h;
            let down = f(&xp);
            xp[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖∞ / max(‖b‖∞, 1e-8)`.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.abs()).fold(0.0, f64::max).max(1e-8);
    diff / scale
}

pub fn widen(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

/// `n × c × h × w` cross-correlation with zero padding.
pub fn conv2d_ref(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    k: &[f64],
    (o, kh, kw): (usize, usize, usize),
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = bias.map_or(0.0, |bs| bs[oc]);
                    for ic in 0..c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (y * stride + dy) as isize - pad as isize;
                                let ix = (xo * stride + dx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x[((b * c + ic) * h + iy as usize) * w + ix as usize]
                                    * k[((oc * c + ic) * kh + dy) * kw + dx];
                            }
                        }
                    }
                    out[((b * o + oc) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

pub fn leaky(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        v * slope
    }
}

/// `(channels, height, width)` of the trunk output.
pub type Dims = (usize, usize, usize);

/// Which side of zero every pre-activation fell on, layer by layer.
pub type ActivationPattern = Vec<Vec<bool>>;

/// Reference encoder forward in f64. `params` is the flat parameter list in
/// layout order. Returns `(embeddings n×d, spatial features, (c', h', w'))`.
pub fn encode_ref(
    cfg: &EncoderConfig,
    params: &[Vec<f64>],
    images: &[f64],
    n: usize,
    size: usize,
) -> (Vec<Vec<f64>>, Vec<f64>, Dims) {
    let (emb, spatial, dims, _) = encode_ref_with(cfg, params, images, n, size, None);
    (emb, spatial, dims)
}

/// As [`encode_ref`], optionally evaluating every LeakyReLU with a frozen
/// activation pattern. Finite differences through a frozen pattern see the
/// local linear piece only, so they are unaffected by nearby kinks.
pub fn encode_ref_with(
    cfg: &EncoderConfig,
    params: &[Vec<f64>],
    images: &[f64],
    n: usize,
    size: usize,
    frozen: Option<&ActivationPattern>,
) -> (Vec<Vec<f64>>, Vec<f64>, Dims, ActivationPattern) {
    let slope = cfg.leaky_slope as f64;
    let mut pattern: ActivationPattern = Vec::new();
    let mut activate = |values: Vec<f64>| -> Vec<f64> {
        let layer = pattern.len();
        let signs: Vec<bool> = match frozen {
            Some(p) => p[layer].clone(),
            None => values.iter().map(|&v| v > 0.0).collect(),
        };
        let out = values
            .iter()
            .zip(&signs)
            .map(|(&v, &pos)| if pos { v } else { v * slope })
            .collect();
        pattern.push(signs);
        out
    };
    let mut x = images.to_vec();
    let (mut c, mut h, mut w) = (cfg.input_channels, size, size);
    for (i, block) in cfg.trunk.iter().enumerate() {
        let (out, oh, ow) = conv2d_ref(
            &x,
            (n, c, h, w),
            &params[2 * i],
            (block.out_channels, block.kernel, block.kernel),
            Some(&params[2 * i + 1]),
            block.stride,
            block.kernel / 2,
        );
        x = activate(out);
        c = block.out_channels;
        h = oh;
        w = ow;
    }
    let spatial = x.clone();
    let t = 2 * cfg.trunk.len();
    let linear = |input: &[f64], wt: &[f64], b: &[f64], fin: usize, fout: usize| -> Vec<f64> {
        (0..fout)
            .map(|j| b[j] + (0..fin).map(|i| input[i] * wt[i * fout + j]).sum::<f64>())
            .collect()
    };
    let mut pre_hidden = Vec::with_capacity(n * cfg.hidden_dim);
    for b in 0..n {
        let pooled: Vec<f64> = (0..c)
            .map(|ch| x[(b * c + ch) * h * w..(b * c + ch + 1) * h * w].iter().sum::<f64>() / (h * w) as f64)
            .collect();
        pre_hidden.extend(linear(&pooled, &params[t], &params[t + 1], c, cfg.hidden_dim));
    }
    let hidden = activate(pre_hidden);
    let emb = hidden
        .chunks(cfg.hidden_dim)
        .map(|hd| linear(hd, &params[t + 2], &params[t + 3], cfg.hidden_dim, cfg.embed_dim))
        .collect();
    (emb, spatial, (c, h, w), pattern)
}

pub fn params_f64(p: &EncoderParams) -> Vec<Vec<f64>> {
    p.tensors().iter().map(widen).collect()
}

pub fn normalize(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}
