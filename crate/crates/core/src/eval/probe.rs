//! Linear classifiers on frozen features.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::frame_features;
use crate::data::FrameStore;
use crate::encoder::EncoderParams;
use crate::error::{Result, VinceError};
use crate::rng;
use crate::tensor::{Adam, AdamConfig, Graph, Reduce, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    /// Normalized output of the projection head.
    Embedding,
    /// Global-average-pooled trunk features.
    Pooled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    /// Adam updates, cycling through shuffled epochs.
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub features: FeatureKind,
    /// Every `holdout_every`-th video of each class is held out for testing.
    pub holdout_every: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 64,
            lr: 1e-3,
            features: FeatureKind::Embedding,
            holdout_every: 4,
            seed: 0,
        }
    }
}

/// Affine classifier applied after per-feature standardization.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeHead {
    pub weight: Tensor,
    pub bias: Tensor,
    pub mean: Vec<f32>,
    pub scale: Vec<f32>,
}

impl ProbeHead {
    fn standardize(&self, x: &Tensor) -> Result<Tensor> {
        standardize(x, &self.mean, &self.scale)
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let z = self.standardize(x)?;
        let mut g = Graph::new();
        let (x, w, b) = (
            g.constant(z),
            g.constant(self.weight.clone()),
            g.constant(self.bias.clone()),
        );
        let out = g.linear(x, w, b)?;
        Ok(g.value(out).clone())
    }

    /// Arg-max class per row, lowest index on ties.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        let c = self.bias.len();
        Ok(logits
            .data()
            .chunks(c)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect())
    }

    pub fn accuracy(&self, x: &Tensor, y: &[usize]) -> Result<f64> {
        if y.is_empty() {
            return Ok(0.0);
        }
        let hits = self.predict(x)?.iter().zip(y).filter(|(p, t)| p == t).count();
        Ok(hits as f64 / y.len() as f64)
    }
}

#[derive(Clone, Debug)]
pub struct ProbeResult {
    pub head: ProbeHead,
    /// Held-out top-1 accuracy.
    pub top1: f64,
    pub train_top1: f64,
    pub num_classes: usize,
    pub test_samples: usize,
}

impl ProbeResult {
    pub fn chance(&self) -> f64 {
        1.0 / self.num_classes as f64
    }
}

fn standardize(x: &Tensor, mean: &[f32], scale: &[f32]) -> Result<Tensor> {
    let (_, d) = x.dims2()?;
    if d != mean.len() {
        return Err(VinceError::dim(format!("probe expects {} features, got {d}", mean.len())));
    }
    let data = x
        .data()
        .chunks(d)
        .flat_map(|row| row.iter().zip(mean).zip(scale).map(|((v, m), s)| (v - m) / s))
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

fn moments(x: &Tensor) -> Result<(Vec<f32>, Vec<f32>)> {
    let (n, d) = x.dims2()?;
    let mut mean = vec![0.0f64; d];
    for row in x.data().chunks(d) {
        row.iter().zip(&mut mean).for_each(|(v, m)| *m += *v as f64);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0f64; d];
    for row in x.data().chunks(d) {
        for ((v, m), s) in row.iter().zip(&mean).zip(&mut var) {
            *s += (*v as f64 - m).powi(2);
        }
    }
    let scale = var
        .iter()
        .map(|s| ((s / n as f64).sqrt() as f32).max(1e-6))
        .collect();
    Ok((mean.iter().map(|&m| m as f32).collect(), scale))
}

fn rows_of(x: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let (_, d) = x.dims2()?;
    let mut data = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        data.extend_from_slice(x.row(i));
    }
    Tensor::new([idx.len(), d], data)
}

/// Softmax cross-entropy, averaged over rows, with a detached row max.
fn cross_entropy(g: &mut Graph, logits: crate::tensor::Var, y: &[usize]) -> Result<crate::tensor::Var> {
    let (n, c) = g.value(logits).dims2()?;
    let max = g.reduce(Reduce::Max, logits, 1)?;
    let max = g.detach(max);
    let max = g.broadcast_cols(max, c)?;
    let shifted = g.sub(logits, max)?;
    let e = g.exp(shifted)?;
    let sum = g.reduce(Reduce::Sum, e, 1)?;
    let lse = g.log(sum)?;
    let target = g.gather(shifted, y.iter().enumerate().map(|(i, &t)| i * c + t).collect(), [n])?;
    let per_row = g.sub(lse, target)?;
    g.mean_all(per_row)
}

/// Trains a probe on `train_x` and scores it on `test_x`.
pub fn train_probe_on_features(
    train_x: &Tensor,
    train_y: &[usize],
    test_x: &Tensor,
    test_y: &[usize],
    num_classes: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeResult> {
    let (n, d) = train_x.dims2()?;
    if n != train_y.len() || test_x.shape()[0] != test_y.len() {
        return Err(VinceError::dim("features and labels differ in length"));
    }
    let seen: BTreeSet<usize> = train_y.iter().copied().collect();
    if seen.len() < 2 || num_classes < 2 {
        return Err(VinceError::Degenerate(
            "a probe needs at least two classes in its training data".into(),
        ));
    }
    if let Some(&bad) = train_y.iter().chain(test_y).find(|&&y| y >= num_classes) {
        return Err(VinceError::dim(format!("label {bad} ≥ {num_classes} classes")));
    }
    let (mean, scale) = moments(train_x)?;
    let z = standardize(train_x, &mean, &scale)?;
    let mut params = vec![Tensor::zeros([d, num_classes]), Tensor::zeros([num_classes])];
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &params,
    );
    let batch = cfg.batch_size.clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut done = 0;
    let mut epoch = 0u64;
    while done < cfg.steps {
        order.shuffle(&mut rng::stream(cfg.seed, "probe", epoch));
        epoch += 1;
        for chunk in order.chunks(batch).take(cfg.steps - done) {
            let xb = rows_of(&z, chunk)?;
            let yb: Vec<usize> = chunk.iter().map(|&i| train_y[i]).collect();
            let mut g = Graph::new();
            let x = g.constant(xb);
            let w = g.param(params[0].clone());
            let b = g.param(params[1].clone());
            let logits = g.linear(x, w, b)?;
            let loss = cross_entropy(&mut g, logits, &yb)?;
            g.backward(loss)?;
            let grads = [w, b].map(|v| g.grad(v).cloned().expect("probe weights require grad"));
            adam.step(&mut params, &grads)?;
            done += 1;
        }
    }
    let bias = params.pop().expect("two tensors");
    let weight = params.pop().expect("two tensors");
    let head = ProbeHead {
        weight,
        bias,
        mean,
        scale,
    };
    Ok(ProbeResult {
        top1: head.accuracy(test_x, test_y)?,
        train_top1: head.accuracy(train_x, train_y)?,
        head,
        num_classes,
        test_samples: test_y.len(),
    })
}

/// Dense class indices for the store's labels (sorted label order).
pub fn class_indices(store: &FrameStore) -> Result<(Vec<usize>, usize)> {
    let labels: Vec<i64> = store
        .labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            l.ok_or_else(|| {
                VinceError::InsufficientData(format!("video {} has no label", store.video_ids[i]))
            })
        })
        .collect::<Result<_>>()?;
    let classes: Vec<i64> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(VinceError::Degenerate("labels contain a single class".into()));
    }
    let idx = labels
        .iter()
        .map(|l| classes.binary_search(l).expect("label present"))
        .collect();
    Ok((idx, classes.len()))
}

/// Stratified split: within each class, every `every`-th video (in store
/// order) is held out. Returns `(train, test)` video indices.
pub fn holdout_split(classes: &[usize], every: usize) -> (Vec<usize>, Vec<usize>) {
    let mut seen = vec![0usize; classes.iter().max().map_or(0, |m| m + 1)];
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (v, &c) in classes.iter().enumerate() {
        if every > 0 && seen[c] % every == every - 1 {
            test.push(v);
        } else {
            train.push(v);
        }
        seen[c] += 1;
    }
    (train, test)
}

/// Frame-level probe: every frame of a training video is a sample, scored
/// on every frame of the held-out videos.
pub fn train_linear_probe(params: &EncoderParams, store: &FrameStore, cfg: &ProbeConfig) -> Result<ProbeResult> {
    let (classes, num_classes) = class_indices(store)?;
    let feats = frame_features(params, store, cfg.features)?;
    let mut offsets = Vec::with_capacity(store.len());
    let mut acc = 0;
    for f in &store.frames {
        offsets.push(acc);
        acc += f.len();
    }
    let (train_v, test_v) = holdout_split(&classes, cfg.holdout_every);
    let gather = |videos: &[usize]| -> Result<(Tensor, Vec<usize>)> {
        let rows: Vec<usize> = videos
            .iter()
            .flat_map(|&v| offsets[v]..offsets[v] + store.frames[v].len())
            .collect();
        let y = videos
            .iter()
            .flat_map(|&v| std::iter::repeat_n(classes[v], store.frames[v].len()))
            .collect();
        Ok((rows_of(&feats, &rows)?, y))
    };
    let (train_x, train_y) = gather(&train_v)?;
    let (test_x, test_y) = gather(&test_v)?;
    train_probe_on_features(&train_x, &train_y, &test_x, &test_y, num_classes, cfg)
}

/// Video-level probe on the mean of each video's frame features.
pub fn temporal_probe(params: &EncoderParams, store: &FrameStore, cfg: &ProbeConfig) -> Result<ProbeResult> {
    let (classes, num_classes) = class_indices(store)?;
    let feats = frame_features(params, store, cfg.features)?;
    let (_, d) = feats.dims2()?;
    let mut pooled = Vec::with_capacity(store.len() * d);
    let mut row = 0;
    for frames in &store.frames {
        let mut sum = vec![0.0f64; d];
        for _ in 0..frames.len() {
            feats.row(row).iter().zip(&mut sum).for_each(|(v, s)| *s += *v as f64);
            row += 1;
        }
        pooled.extend(sum.iter().map(|s| (s / frames.len() as f64) as f32));
    }
    let pooled = Tensor::new([store.len(), d], pooled)?;
    let (train_v, test_v) = holdout_split(&classes, cfg.holdout_every);
    let pick = |vs: &[usize]| -> Result<(Tensor, Vec<usize>)> {
        Ok((rows_of(&pooled, vs)?, vs.iter().map(|&v| classes[v]).collect()))
    };
    let (train_x, train_y) = pick(&train_v)?;
    let (test_x, test_y) = pick(&test_v)?;
    train_probe_on_features(&train_x, &train_y, &test_x, &test_y, num_classes, cfg)
}
