//! Contrastive training: configuration, the single optimisation step,
//! checkpoints, and the driver loop.

mod checkpoint;
mod run;

use std::collections::HashSet;
use std::f64::consts::PI;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{AugmentConfig, Batch, SamplingRegime};
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Result, VinceError};
use crate::moco::{MemoryBank, MocoState};
use crate::nce::{self, build_pair_mask, BatchLayout, NceConfig};
use crate::rng;
use crate::tensor::{Graph, Sgd, SgdConfig, Tensor};

pub use checkpoint::{checkpoint_hash, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use run::{checkpoint_path, read_metrics, train, MetricsRow, TrainOptions, FINAL_CHECKPOINT, METRICS_FILE};

const NORMALIZE_EPS: f32 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    SameFrame,
    MultiFrame,
    MultiPair,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::SameFrame, Regime::MultiFrame, Regime::MultiPair];

    pub fn name(self) -> &'static str {
        match self {
            Regime::SameFrame => "same_frame",
            Regime::MultiFrame => "multi_frame",
            Regime::MultiPair => "multi_pair",
        }
    }

    pub fn sampling(self) -> SamplingRegime {
        match self {
            Regime::SameFrame => SamplingRegime::SameFrame,
            Regime::MultiFrame | Regime::MultiPair => SamplingRegime::MultiFrame,
        }
    }

    /// `(v, k)` when the config leaves them unset.
    pub fn default_layout(self) -> (usize, usize) {
        match self {
            Regime::MultiPair => (16, 4),
            _ => (64, 1),
        }
    }
}

impl FromStr for Regime {
    type Err = VinceError;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| VinceError::Config(format!("unknown regime {s:?}")))
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub regime: Regime,
    /// Videos per batch; regime default when unset.
    pub videos: Option<usize>,
    /// Rows per video; regime default when unset.
    pub frames_per_video: Option<usize>,
    pub iterations: u64,
    pub lr: f32,
    pub sgd_momentum: f32,
    pub weight_decay: f32,
    pub alpha: f32,
    pub temperature: f32,
    pub bank_size: usize,
    pub lr_schedule: LrSchedule,
    pub seed: u64,
    /// 0 writes a checkpoint only at the end.
    pub checkpoint_every: u64,
    /// 0 disables periodic evaluation.
    pub eval_every: u64,
    /// Drop bank rows from any video in the current batch; unset means on
    /// for `same_frame` and off otherwise.
    pub exclude_same_video: Option<bool>,
    /// Write real wall-clock times into the metrics CSV (0 otherwise).
    pub record_timing: bool,
    pub encoder: EncoderConfig,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            regime: Regime::MultiPair,
            videos: None,
            frames_per_video: None,
            iterations: 20_000,
            lr: 0.03,
            sgd_momentum: 0.9,
            weight_decay: 1e-4,
            alpha: 0.999,
            temperature: NceConfig::default().temperature,
            bank_size: 4096,
            lr_schedule: LrSchedule::Constant,
            seed: 0,
            checkpoint_every: 0,
            eval_every: 0,
            exclude_same_video: None,
            record_timing: true,
            encoder: EncoderConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn layout(&self) -> (usize, usize) {
        let (v, k) = self.regime.default_layout();
        (self.videos.unwrap_or(v), self.frames_per_video.unwrap_or(k))
    }

    pub fn batch_rows(&self) -> usize {
        let (v, k) = self.layout();
        v * k
    }

    pub fn excludes_same_video(&self) -> bool {
        self.exclude_same_video
            .unwrap_or(self.regime == Regime::SameFrame)
    }

    pub fn nce(&self) -> NceConfig {
        NceConfig {
            temperature: self.temperature,
        }
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            momentum: self.sgd_momentum,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (v, k) = self.layout();
        BatchLayout::new(v, k, 0)?;
        if self.regime == Regime::MultiPair && k < 2 {
            return Err(VinceError::Config("multi_pair needs frames_per_video ≥ 2".into()));
        }
        if self.regime != Regime::MultiPair && k != 1 {
            return Err(VinceError::Config(format!(
                "{} pairs one anchor per video, frames_per_video must be 1",
                self.regime
            )));
        }
        if v * k < 2 {
            return Err(VinceError::Config("a batch needs at least two rows".into()));
        }
        if self.bank_size > 0 && self.bank_size < v * k {
            return Err(VinceError::Config(format!(
                "bank_size {} is smaller than one batch ({})",
                self.bank_size,
                v * k
            )));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(VinceError::Config(format!("learning rate {} must be ≥ 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.sgd_momentum) || self.weight_decay < 0.0 {
            return Err(VinceError::Config("need 0 ≤ sgd_momentum < 1 and weight_decay ≥ 0".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(VinceError::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        self.nce().validate()?;
        self.encoder.validate()?;
        self.augment.validate()?;
        if self.augment.output_size != self.encoder.input_size {
            return Err(VinceError::Config(format!(
                "augment output {} does not match encoder input {}",
                self.augment.output_size, self.encoder.input_size
            )));
        }
        Ok(())
    }
}

/// Learning rate for `iteration` in `[0, iterations)`.
pub fn lr_at(iteration: u64, cfg: &TrainConfig) -> Result<f32> {
    if iteration >= cfg.iterations {
        return Err(VinceError::Range(format!(
            "iteration {iteration} outside [0, {})",
            cfg.iterations
        )));
    }
    Ok(match cfg.lr_schedule {
        LrSchedule::Constant => cfg.lr,
        LrSchedule::Cosine => {
            let frac = iteration as f64 / cfg.iterations as f64;
            (cfg.lr as f64 * 0.5 * (1.0 + (PI * frac).cos())) as f32
        }
    })
}

/// Everything that evolves during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub config: TrainConfig,
    pub moco: MocoState,
    pub bank: MemoryBank,
    pub optimizer: Sgd,
    /// Steps completed so far.
    pub iteration: u64,
}

impl TrainState {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let f = EncoderParams::init(&config.encoder, rng::child_seed(config.seed, "init", 0))?;
        let optimizer = Sgd::new(config.sgd(), f.tensors());
        let bank = MemoryBank::new(config.bank_size, config.encoder.embed_dim);
        Ok(Self {
            moco: MocoState::new(f, config.alpha)?,
            bank,
            optimizer,
            iteration: 0,
            config,
        })
    }

    pub fn layout(&self) -> (usize, usize) {
        self.config.layout()
    }

    /// Per-iteration seed handed to the batch sampler.
    pub fn batch_seed(&self, iteration: u64) -> u64 {
        rng::child_seed(self.config.seed, "batch", iteration)
    }
}

/// What one step did.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub iteration: u64,
    pub lr: f32,
    pub loss: f32,
    pub positive_scores: usize,
    pub competitors_per_score: usize,
    /// Normalized `f` embeddings of the anchors.
    pub f_out: Tensor,
    /// Normalized `g` embeddings of the positives.
    pub g_out: Tensor,
    /// Bank rows used as negatives, oldest first.
    pub negatives: Tensor,
}

fn numeric(iteration: u64, e: VinceError) -> VinceError {
    match e {
        VinceError::NonFinite(reason) => VinceError::Numeric { iteration, reason },
        other => other,
    }
}

/// One optimisation step: encode anchors with `f` and positives with `g`,
/// take the regime's loss, update `f` by SGD, blend `g` towards `f`, then
/// push the positives' `g` embeddings into the bank.
pub fn train_step(state: &mut TrainState, batch: &Batch) -> Result<StepReport> {
    let cfg = &state.config;
    let iteration = state.iteration;
    let (v, k) = cfg.layout();
    if batch.rows() != v * k {
        return Err(VinceError::dim(format!(
            "batch has {} rows, layout needs {}",
            batch.rows(),
            v * k
        )));
    }
    let lr = lr_at(iteration, cfg)?;
    let nce_cfg = cfg.nce();

    let mut graph = Graph::new();
    let f = state.moco.f.bind(&mut graph, true);
    let g = state.moco.g.bind(&mut graph, false);
    let anchors = graph.constant(batch.anchors.clone());
    let positives = graph.constant(batch.positives.clone());
    let forward = |graph: &mut Graph| -> Result<_> {
        let fa = f.encode(graph, anchors)?;
        let f_out = graph.l2_normalize_rows(fa, NORMALIZE_EPS)?;
        let gp = g.encode(graph, positives)?;
        let g_out = graph.l2_normalize_rows(gp, NORMALIZE_EPS)?;
        Ok((f_out, g_out))
    };
    let (f_out, g_out) = forward(&mut graph).map_err(|e| numeric(iteration, e))?;

    let tags: Vec<u32> = batch.video_indices.iter().map(|&i| i as u32).collect();
    let negatives = if cfg.excludes_same_video() {
        state.bank.negatives_view_excluding(&tags.iter().copied().collect::<HashSet<_>>())
    } else {
        state.bank.negatives_view()
    };

    let out = match cfg.regime {
        Regime::SameFrame | Regime::MultiFrame => {
            nce::memory_nce_loss(&mut graph, f_out, g_out, &negatives, &nce_cfg)
        }
        Regime::MultiPair => {
            let layout = BatchLayout::new(v, k, negatives.shape()[0])?;
            let mask = build_pair_mask(layout);
            nce::multi_pair_nce_loss(&mut graph, f_out, g_out, &negatives, &mask, &nce_cfg)
        }
    }
    .map_err(|e| numeric(iteration, e))?;

    let loss = graph.value(out.loss).item()?;
    if !loss.is_finite() {
        return Err(VinceError::Numeric {
            iteration,
            reason: format!("loss is {loss}"),
        });
    }
    graph.backward(out.loss).map_err(|e| numeric(iteration, e))?;
    let grads: Vec<Tensor> = f
        .vars()
        .iter()
        .map(|&p| {
            graph
                .grad(p)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(graph.value(p).shape()))
        })
        .collect();
    if let Some(i) = grads.iter().position(|t| !t.is_finite()) {
        return Err(VinceError::Numeric {
            iteration,
            reason: format!("gradient of {} is not finite", state.moco.f.names()[i]),
        });
    }

    let f_out = graph.value(f_out).clone();
    let g_out = graph.value(g_out).clone();
    drop(graph);

    state
        .optimizer
        .step(state.moco.f.tensors_mut(), &grads, lr)?;
    state.moco.momentum_update()?;
    if state.bank.capacity() > 0 {
        state.bank.enqueue(&g_out, Some(&tags))?;
    }
    state.iteration += 1;

    Ok(StepReport {
        iteration,
        lr,
        loss,
        positive_scores: out.positive_scores,
        competitors_per_score: out.competitors_per_score,
        f_out,
        g_out,
        negatives,
    })
}
