//! Finite-difference checks of every differentiable graph op against f64
//! reference implementations.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use vince::encoder::{BoundEncoder, ConvBlock, EncoderConfig, EncoderParams, InitScheme};
use vince::nce::{self, build_pair_mask, BatchLayout, NceConfig};
use vince::tensor::{Conv2dSpec, Graph, Reduce, Tensor, Var};
use vince::Result;

use super::*;

type Build = Box<dyn Fn(&mut Graph, &[Var]) -> Result<Var>>;
type Oracle = Box<dyn Fn(&[Vec<f64>]) -> Vec<f64>>;

pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Tensor>,
    /// Which inputs are differentiated (others enter as constants).
    pub differentiate: Vec<bool>,
    pub build: Build,
    pub oracle: Oracle,
}

const H: f64 = 1e-3;

/// Maximum relative error between the tape's gradient and a central
/// difference of the f64 oracle, for `Σ out · R` with random `R`.
pub fn check_case(case: &OpCase, r: &mut ChaCha8Rng) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = case
        .inputs
        .iter()
        .zip(&case.differentiate)
        .map(|(t, &d)| g.leaf(t.clone(), d))
        .collect();
    let out = (case.build)(&mut g, &vars).unwrap_or_else(|e| panic!("{}: {e}", case.name));
    let shape = g.value(out).shape().to_vec();
    let weights = random_vec(r, g.value(out).len(), -1.0, 1.0);
    let wt = g.constant(Tensor::new(shape, weights.iter().map(|&v| v as f32).collect()).unwrap());
    let prod = g.mul(out, wt).unwrap();
    let obj = g.sum_all(prod).unwrap();
    g.backward(obj).unwrap();

    let base: Vec<Vec<f64>> = case.inputs.iter().map(widen).collect();
    let objective = |xs: &[Vec<f64>]| -> f64 { dot(&(case.oracle)(xs), &weights) };
    let mut tape = Vec::new();
    let mut numeric = Vec::new();
    for (i, v) in vars.iter().enumerate() {
        if !case.differentiate[i] {
            continue;
        }
        tape.extend(widen(g.grad(*v).expect("gradient for differentiated input")));
        let mut xs = base.clone();
        numeric.extend(finite_diff(&base[i], H, |xi| {
            xs[i] = xi.to_vec();
            objective(&xs)
        }));
    }
    rel_err(&tape, &numeric)
}

fn t(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), random_vec(r, n, lo, hi).into_iter().map(|v| v as f32).collect()).unwrap()
}

/// Values bounded away from zero (for kinked ops).
fn away_from_zero(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m: f32 = r.gen_range(0.05..1.0);
            if r.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Distinct values spaced at least 0.05 apart, shuffled.
fn well_separated(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    use rand::seq::SliceRandom;
    let n: usize = shape.iter().product();
    let mut data: Vec<f32> = (0..n).map(|i| i as f32 * 0.1 - 0.5 + r.gen_range(0.0..0.04)).collect();
    data.shuffle(r);
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn matmul_ref(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    (0..m * n)
        .map(|ij| (0..k).map(|p| a[(ij / n) * k + p] * b[p * n + ij % n]).sum())
        .collect()
}

fn reduce_ref(x: &[f64], rows: usize, cols: usize, axis: usize, op: Reduce) -> Vec<f64> {
    let lanes: Vec<Vec<f64>> = if axis == 0 {
        (0..cols).map(|c| (0..rows).map(|r| x[r * cols + c]).collect()).collect()
    } else {
        (0..rows).map(|r| x[r * cols..(r + 1) * cols].to_vec()).collect()
    };
    lanes
        .iter()
        .map(|l| match op {
            Reduce::Sum => l.iter().sum(),
            Reduce::Mean => l.iter().sum::<f64>() / l.len() as f64,
            Reduce::Max => l.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect()
}

fn normalize_rows_ref(x: &[f64], d: usize) -> Vec<f64> {
    x.chunks(d).flat_map(normalize).collect()
}

fn rows(x: &[f64], d: usize) -> Vec<Vec<f64>> {
    x.chunks(d).map(<[f64]>::to_vec).collect()
}

/// One case per differentiable op (and per interesting variant).
pub fn op_cases(r: &mut ChaCha8Rng) -> Vec<OpCase> {
    let mut cases: Vec<OpCase> = Vec::new();
    let all = |n: usize| vec![true; n];

    cases.push(OpCase {
        name: "matmul",
        inputs: vec![t(r, &[3, 4], -1.0, 1.0), t(r, &[4, 2], -1.0, 1.0)],
        differentiate: all(2),
        build: Box::new(|g, v| g.matmul(v[0], v[1])),
        oracle: Box::new(|x| matmul_ref(&x[0], &x[1], 3, 4, 2)),
    });
    cases.push(OpCase {
        name: "transpose",
        inputs: vec![t(r, &[3, 4], -1.0, 1.0)],
        differentiate: all(1),
        build: Box::new(|g, v| g.transpose(v[0])),
        oracle: Box::new(|x| (0..12).map(|ij| x[0][(ij % 3) * 4 + ij / 3]).collect()),
    });
    cases.push(OpCase {
        name: "linear",
        inputs: vec![t(r, &[3, 4], -1.0, 1.0), t(r, &[4, 5], -1.0, 1.0), t(r, &[5], -1.0, 1.0)],
        differentiate: all(3),
        build: Box::new(|g, v| g.linear(v[0], v[1], v[2])),
        oracle: Box::new(|x| {
            let mut y = matmul_ref(&x[0], &x[1], 3, 4, 5);
            y.iter_mut().enumerate().for_each(|(i, v)| *v += x[2][i % 5]);
            y
        }),
    });
    for (name, op) in [("add", 0), ("sub", 1), ("mul", 2)] {
        cases.push(OpCase {
            name,
            inputs: vec![t(r, &[2, 3], -1.0, 1.0), t(r, &[2, 3], -1.0, 1.0)],
            differentiate: all(2),
            build: Box::new(move |g, v| match op {
                0 => g.add(v[0], v[1]),
                1 => g.sub(v[0], v[1]),
                _ => g.mul(v[0], v[1]),
            }),
            oracle: Box::new(move |x| {
                x[0].iter()
                    .zip(&x[1])
                    .map(|(a, b)| match op {
                        0 => a + b,
                        1 => a - b,
                        _ => a * b,
                    })
                    .collect()
            }),
        });
    }
    cases.push(OpCase {
        name: "mul_scalar_broadcast",
        inputs: vec![t(r, &[2, 3], -1.0, 1.0), t(r, &[1], -1.0, 1.0)],
        differentiate: all(2),
        build: Box::new(|g, v| g.mul(v[0], v[1])),
        oracle: Box::new(|x| x[0].iter().map(|a| a * x[1][0]).collect()),
    });
    cases.push(OpCase {
        name: "exp",
        inputs: vec![t(r, &[2, 3], -1.0, 1.0)],
        differentiate: all(1),
        build: Box::new(|g, v| g.exp(v[0])),
        oracle: Box::new(|x| x[0].iter().map(|v| v.exp()).collect()),
    });
    cases.push(OpCase {
        name: "log",
        inputs: vec![t(r, &[2, 3], 0.5, 2.0)],
        differentiate: all(1),
        build: Box::new(|g, v| g.log(v[0])),
        oracle: Box::new(|x| x[0].iter().map(|v| v.ln()).collect()),
    });
    cases.push(OpCase {
        name: "relu",
        inputs: vec![away_from_zero(r, &[2, 5])],
        differentiate: all(1),
        build: Box::new(|g, v| g.relu(v[0])),
        oracle: Box::new(|x| x[0].iter().map(|v| v.max(0.0)).collect()),
    });
    cases.push(OpCase {
        name: "leaky_relu",
        inputs: vec![away_from_zero(r, &[2, 5])],
        differentiate: all(1),
        build: Box::new(|g, v| g.leaky_relu(v[0], 0.1)),
        oracle: Box::new(|x| x[0].iter().map(|&v| leaky(v, 0.1f32 as f64)).collect()),
    });
    cases.push(OpCase {
        name: "scale",
        inputs: vec![t(r, &[2, 3], -1.0, 1.0)],
        differentiate: all(1),
        build: Box::new(|g, v| g.scale(v[0], 2.5)),
        oracle: Box::new(|x| x[0].iter().map(|v| v * 2.5).collect()),
    });
    for (name, op, axis) in [
        ("reduce_sum_axis0", Reduce::Sum, 0),
        ("reduce_sum_axis1", Reduce::Sum, 1),
        ("reduce_mean_axis0", Reduce::Mean, 0),
        ("reduce_mean_axis1", Reduce::Mean, 1),
        ("reduce_max_axis0", Reduce::Max, 0),
        ("reduce_max_axis1", Reduce::Max, 1),
    ] {
        cases.push(OpCase {
            name,
            inputs: vec![well_separated(r, &[3, 4])],
            differentiate: all(1),
            build: Box::new(move |g, v| g.reduce(op, v[0], axis)),
            oracle: Box::new(move |x| reduce_ref(&x[0], 3, 4, axis, op)),
        });
    }
    cases.push(OpCase {
        name: "sum_all",
        inputs: vec![t(r, &[2, 3, 2], -1.0, 1.0)],
        differentiate: all(1),
        build: Box::new(|g, v| g.sum_all(v[0])),
        oracle: Box::new(|x| vec![x[0].iter().sum()]),
    });
    cases.push(OpCase {
        name: "mean_all",
        inputs: vec![t(r, &[2, 3, 2], -1.0, 1.0)],
        differentiate: all(1),
        build: Box::new(|g, v| g.mean_all(v[0])),
        oracle: Box::new(|x| vec![x[0].iter().sum::<f64>() / 12.0]),
    });
    cases.push(OpCase {
        name: "l2_normalize_rows",
        inputs: vec![t(r, &[3, 4], -1.0, 1.0)],
        differentiate: all(1),
        build: Box::new(|g, v| g.l2_normalize_rows(v[0], 1e-8)),
        oracle: Box::new(|x| normalize_rows_ref(&x[0], 4)),
    });
    cases.push(OpCase {
        name: "conv2d_stride2_pad1_bias",
        inputs: vec![t(r, &[2, 3, 5, 5], -1.0, 1.0), t(r, &[4, 3, 3, 3], -1.0, 1.0), t(r, &[4], -1.0, 1.0)],
        differentiate: all(3),
        build: Box::new(|g, v| g.conv2d(v[0], v[1], Some(v[2]), Conv2dSpec { stride: 2, padding: 1 })),
        oracle: Box::new(|x| conv2d_ref(&x[0], (2, 3, 5, 5), &x[1], (4, 3, 3), Some(&x[2]), 2, 1).0),
    });
    cases.push(OpCase {
        name: "conv2d_stride1_nobias",
        inputs: vec![t(r, &[1, 2, 4, 6], -1.0, 1.0), t(r, &[3, 2, 2, 3], -1.0, 1.0)],
        differentiate: all(2),
        build: Box::new(|g, v| g.conv2d(v[0], v[1], None, Conv2dSpec::default())),
        oracle: Box::new(|x| conv2d_ref(&x[0], (1, 2, 4, 6), &x[1], (3, 2, 3), None, 1, 0).0),
    });
    cases.push(OpCase {
        name: "reshape",
        inputs: vec![t(r, &[2, 6], -1.0, 1.0)],
        differentiate: all(1),
        build: Box::new(|g, v| g.reshape(v[0], [3, 4])),
        oracle: Box::new(|x| x[0].clone()),
    });
    cases.push(OpCase {
        name: "concat_rows",
        inputs: vec![t(r, &[2, 3], -1.0, 1.0), t(r, &[1, 3], -1.0, 1.0)],
        differentiate: all(2),
        build: Box::new(|g, v| g.concat_rows(&[v[0], v[1]])),
        oracle: Box::new(|x| x[0].iter().chain(&x[1]).copied().collect()),
    });
    cases.push(OpCase {
        name: "gather",
        inputs: vec![t(r, &[2, 3], -1.0, 1.0)],
        differentiate: all(1),
        build: Box::new(|g, v| g.gather(v[0], vec![5, 0, 0, 3], [2, 2])),
        oracle: Box::new(|x| [5, 0, 0, 3].iter().map(|&i| x[0][i]).collect()),
    });
    cases.push(OpCase {
        name: "broadcast_cols",
        inputs: vec![t(r, &[3], -1.0, 1.0)],
        differentiate: all(1),
        build: Box::new(|g, v| g.broadcast_cols(v[0], 4)),
        oracle: Box::new(|x| x[0].iter().flat_map(|&v| [v; 4]).collect()),
    });
    cases.push(OpCase {
        name: "contrastive_loss",
        inputs: vec![t(r, &[3, 4], -1.0, 1.0), t(r, &[5, 4], -1.0, 1.0)],
        differentiate: all(2),
        build: Box::new(|g, v| {
            g.contrastive_loss(v[0], v[1], 1.5, &[vec![0], vec![1, 2], vec![4]], &[vec![1, 2, 3], vec![0], vec![]])
        }),
        oracle: Box::new(|x| {
            let a = rows(&x[0], 4);
            let c = rows(&x[1], 4);
            let s = |i: usize, j: usize| 1.5 * dot(&a[i], &c[j]);
            let pos: [&[usize]; 3] = [&[0], &[1, 2], &[4]];
            let neg: [&[usize]; 3] = [&[1, 2, 3], &[0], &[]];
            let mut total = 0.0;
            for i in 0..3 {
                let nsum: f64 = neg[i].iter().map(|&q| s(i, q).exp()).sum();
                for &p in pos[i] {
                    total -= (s(i, p).exp() / (s(i, p).exp() + nsum)).ln();
                }
            }
            vec![total / 4.0]
        }),
    });
    cases.extend(loss_cases(r));
    cases
}

/// Losses differentiated through a row normalization so perturbations stay
/// on the unit sphere.
fn loss_cases(r: &mut ChaCha8Rng) -> Vec<OpCase> {
    let tau = 2.0f32;
    let cfg = NceConfig { temperature: tau };
    let tau = tau as f64;
    let (n, d, m) = (4, 3, 5);
    let bank_rows = unit_rows(r, m, d);
    let bank = to_tensor(&bank_rows, d);
    let mut cases = Vec::new();

    cases.push(OpCase {
        name: "similarity_matrix",
        inputs: vec![t(r, &[n, d], -1.0, 1.0), t(r, &[n + 1, d], -1.0, 1.0)],
        differentiate: vec![true, true],
        build: Box::new(move |g, v| {
            let a = g.l2_normalize_rows(v[0], 1e-8)?;
            let b = g.l2_normalize_rows(v[1], 1e-8)?;
            nce::similarity_matrix(g, a, b, &cfg)
        }),
        oracle: Box::new(move |x| {
            let a = rows(&normalize_rows_ref(&x[0], d), d);
            let b = rows(&normalize_rows_ref(&x[1], d), d);
            a.iter().flat_map(|ai| b.iter().map(|bj| tau * dot(ai, bj)).collect::<Vec<_>>()).collect()
        }),
    });
    cases.push(OpCase {
        name: "nce_loss",
        inputs: vec![t(r, &[n, d], -1.0, 1.0), t(r, &[n, d], -1.0, 1.0)],
        differentiate: vec![true, true],
        build: Box::new(move |g, v| {
            let a = g.l2_normalize_rows(v[0], 1e-8)?;
            let p = g.l2_normalize_rows(v[1], 1e-8)?;
            Ok(nce::nce_loss(g, a, p, &cfg)?.loss)
        }),
        oracle: Box::new(move |x| {
            vec![nce_oracle(
                &rows(&normalize_rows_ref(&x[0], d), d),
                &rows(&normalize_rows_ref(&x[1], d), d),
                tau,
            )]
        }),
    });
    let bank_m = bank.clone();
    let rows_m = bank_rows.clone();
    cases.push(OpCase {
        name: "memory_nce_loss",
        inputs: vec![t(r, &[n, d], -1.0, 1.0), t(r, &[n, d], -1.0, 1.0)],
        differentiate: vec![true, true],
        build: Box::new(move |g, v| {
            let a = g.l2_normalize_rows(v[0], 1e-8)?;
            let p = g.l2_normalize_rows(v[1], 1e-8)?;
            Ok(nce::memory_nce_loss(g, a, p, &bank_m, &cfg)?.loss)
        }),
        oracle: Box::new(move |x| {
            vec![memory_oracle(
                &rows(&normalize_rows_ref(&x[0], d), d),
                &rows(&normalize_rows_ref(&x[1], d), d),
                &rows_m,
                tau,
            )]
        }),
    });
    let k = 2;
    let mask = build_pair_mask(BatchLayout::new(n / k, k, m).unwrap());
    cases.push(OpCase {
        name: "multi_pair_nce_loss",
        inputs: vec![t(r, &[n, d], -1.0, 1.0), to_tensor(&unit_rows(r, n, d), d)],
        differentiate: vec![true, false],
        build: Box::new(move |g, v| {
            let f = g.l2_normalize_rows(v[0], 1e-8)?;
            Ok(nce::multi_pair_nce_loss(g, f, v[1], &bank, &mask, &cfg)?.loss)
        }),
        oracle: Box::new(move |x| {
            vec![multi_pair_oracle(&rows(&normalize_rows_ref(&x[0], d), d), &rows(&x[1], d), &bank_rows, k, tau).0]
        }),
    });
    cases
}

pub fn tiny_encoder_config() -> EncoderConfig {
    EncoderConfig {
        input_channels: 3,
        input_size: 16,
        trunk: vec![ConvBlock::new(4, 3, 2), ConvBlock::new(6, 3, 2)],
        hidden_dim: 8,
        embed_dim: 5,
        leaky_slope: 0.1,
        init: InitScheme::HeUniform,
    }
}

/// Gradient of `Σ encode(x) · R` w.r.t. every encoder parameter.
pub fn encoder_case(seed: u64, r: &mut ChaCha8Rng) -> f64 {
    let cfg = tiny_encoder_config();
    let params = EncoderParams::init(&cfg, seed).unwrap();
    let n = 2;
    let images = t(r, &[n, 3, 16, 16], -1.0, 1.0);
    let case = OpCase {
        name: "encode",
        inputs: params.tensors().to_vec(),
        differentiate: vec![true; params.tensors().len()],
        build: {
            let images = images.clone();
            let cfg = cfg.clone();
            Box::new(move |g, v| {
                let x = g.constant(images.clone());
                BoundEncoder::from_vars(&cfg, g, v.to_vec())?.encode(g, x)
            })
        },
        oracle: {
            let images = widen(&images);
            let pattern = encode_ref_with(&cfg, &params_f64(&params), &images, n, 16, None).3;
            Box::new(move |x| {
                encode_ref_with(&cfg, x, &images, n, 16, Some(&pattern)).0.into_iter().flatten().collect()
            })
        },
    };
    check_case(&case, r)
}

/// Full composition: encoder → normalize → multi-pair loss against fixed
/// `g` outputs and bank, gradient w.r.t. every encoder parameter.
pub fn composition_case(seed: u64, r: &mut ChaCha8Rng) -> f64 {
    let cfg = tiny_encoder_config();
    let params = EncoderParams::init(&cfg, seed).unwrap();
    let (v, k, m) = (2, 2, 3);
    let n = v * k;
    let d = cfg.embed_dim;
    let images = t(r, &[n, 3, 16, 16], -1.0, 1.0);
    let g_rows = unit_rows(r, n, d);
    let bank_rows = unit_rows(r, m, d);
    let (g_t, bank) = (to_tensor(&g_rows, d), to_tensor(&bank_rows, d));
    let mask = build_pair_mask(BatchLayout::new(v, k, m).unwrap());
    let nce_cfg = NceConfig { temperature: 3.0 };
    let case = OpCase {
        name: "encoder+multi_pair",
        inputs: params.tensors().to_vec(),
        differentiate: vec![true; params.tensors().len()],
        build: {
            let images = images.clone();
            let cfg = cfg.clone();
            Box::new(move |g, vars| {
                let x = g.constant(images.clone());
                let raw = BoundEncoder::from_vars(&cfg, g, vars.to_vec())?.encode(g, x)?;
                let f = g.l2_normalize_rows(raw, 1e-8)?;
                let gv = g.constant(g_t.clone());
                Ok(nce::multi_pair_nce_loss(g, f, gv, &bank, &mask, &nce_cfg)?.loss)
            })
        },
        oracle: {
            let images = widen(&images);
            let pattern = encode_ref_with(&cfg, &params_f64(&params), &images, n, 16, None).3;
            Box::new(move |x| {
                let emb = encode_ref_with(&cfg, x, &images, n, 16, Some(&pattern)).0;
                let f: Vec<Vec<f64>> = emb.iter().map(|e| normalize(e)).collect();
                vec![multi_pair_oracle(&f, &g_rows, &bank_rows, k, 3.0).0]
            })
        },
    };
    check_case(&case, r)
}
