//! Contrastive losses over temperature-scaled cosine similarities.
//!
//! All three losses share one shape: every row of a similarity matrix has a
//! set of positive columns and a set of competing columns, and each positive
//! is scored as `exp(pos) / (exp(pos) + Σ exp(competitors))`. They differ
//! only in which columns play which role:
//!
//! | loss                    | positives of row `i`       | competitors of row `i`          |
//! |-------------------------|----------------------------|---------------------------------|
//! | [`nce_loss`]            | `P_i`                      | `P_j`, `j ≠ i`                  |
//! | [`memory_nce_loss`]     | `P_i`                      | every bank row                  |
//! | [`multi_pair_nce_loss`] | the `k` rows of `i`'s video| all other batch rows + bank     |

use serde::{Deserialize, Serialize};

use crate::error::{Result, VinceError};
use crate::tensor::{Graph, Tensor, Var};

/// Row norms must be within this of 1 for inputs that claim to be normalized.
pub const NORM_TOLERANCE: f32 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NceConfig {
    /// Multiplier on cosine similarity.
    pub temperature: f32,
}

impl Default for NceConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0 / 0.07,
        }
    }
}

impl NceConfig {
    pub fn new(temperature: f32) -> Result<Self> {
        let cfg = Self { temperature };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(VinceError::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// `v` videos with `k` rows each, followed by `m` memory-bank columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchLayout {
    pub videos: usize,
    pub frames_per_video: usize,
    pub bank_rows: usize,
}

impl BatchLayout {
    pub fn new(videos: usize, frames_per_video: usize, bank_rows: usize) -> Result<Self> {
        if videos == 0 || frames_per_video == 0 {
            return Err(VinceError::Config(format!(
                "layout needs v ≥ 1 and k ≥ 1, got v={videos}, k={frames_per_video}"
            )));
        }
        Ok(Self {
            videos,
            frames_per_video,
            bank_rows,
        })
    }

    pub fn rows(&self) -> usize {
        self.videos * self.frames_per_video
    }

    pub fn columns(&self) -> usize {
        self.rows() + self.bank_rows
    }

    /// Video block of batch row `i`.
    pub fn video_of(&self, row: usize) -> usize {
        row / self.frames_per_video
    }
}

/// Block-diagonal `n × (n + m)` boolean matrix: `(i, j)` is set iff `j < n`
/// and rows `i`, `j` come from the same video.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairMask {
    layout: BatchLayout,
    bits: Vec<bool>,
}

impl PairMask {
    pub fn layout(&self) -> BatchLayout {
        self.layout
    }

    pub fn rows(&self) -> usize {
        self.layout.rows()
    }

    pub fn columns(&self) -> usize {
        self.layout.columns()
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.columns() + col]
    }

    pub fn row(&self, row: usize) -> &[bool] {
        let c = self.columns();
        &self.bits[row * c..(row + 1) * c]
    }

    pub fn positive_columns(&self, row: usize) -> Vec<usize> {
        (0..self.columns()).filter(|&j| self.get(row, j)).collect()
    }

    pub fn negative_columns(&self, row: usize) -> Vec<usize> {
        (0..self.columns()).filter(|&j| !self.get(row, j)).collect()
    }

    /// Number of set entries.
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

pub fn build_pair_mask(layout: BatchLayout) -> PairMask {
    let (n, cols) = (layout.rows(), layout.columns());
    let mut bits = vec![false; n * cols];
    for i in 0..n {
        for j in 0..n {
            bits[i * cols + j] = layout.video_of(i) == layout.video_of(j);
        }
    }
    PairMask { layout, bits }
}

/// A loss node plus bookkeeping about how it was formed.
#[derive(Clone, Copy, Debug)]
pub struct NceOutput {
    pub loss: Var,
    /// Number of positive scores averaged into the loss.
    pub positive_scores: usize,
    /// Competing (negative) terms in each score's denominator.
    pub competitors_per_score: usize,
}

fn check_normalized(graph: &Graph, v: Var, what: &str) -> Result<usize> {
    let t = graph.value(v);
    let (rows, d) = t.dims2()?;
    for r in 0..rows {
        let norm = t.row(r).iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE as f64 {
            return Err(VinceError::Precondition(format!(
                "{what} row {r} has norm {norm:.6}, expected unit length"
            )));
        }
    }
    Ok(d)
}

/// `τ · f_out · compareᵀ` for row-normalized inputs.
pub fn similarity_matrix(
    graph: &mut Graph,
    f_out: Var,
    compare: Var,
    cfg: &NceConfig,
) -> Result<Var> {
    cfg.validate()?;
    let d1 = check_normalized(graph, f_out, "anchor")?;
    let d2 = check_normalized(graph, compare, "compare")?;
    if d1 != d2 {
        return Err(VinceError::dim(format!(
            "embedding widths differ: {d1} vs {d2}"
        )));
    }
    let ct = graph.transpose(compare)?;
    let raw = graph.matmul(f_out, ct)?;
    graph.scale(raw, cfg.temperature)
}

/// `−mean log( e^{pos} / (e^{pos} + Σ e^{competitors}) )` over every listed
/// positive of `τ · anchors · compareᵀ`, stabilized by subtracting each
/// row's maximum over its positive and competing entries together.
///
/// `positives` and `competitors` hold per-row column indices; every row must
/// list the same number of each.
pub(crate) fn contrastive_score_loss(
    graph: &mut Graph,
    anchors: Var,
    compare: Var,
    cfg: &NceConfig,
    positives: &[Vec<usize>],
    competitors: &[Vec<usize>],
) -> Result<NceOutput> {
    cfg.validate()?;
    let d1 = check_normalized(graph, anchors, "anchor")?;
    let d2 = check_normalized(graph, compare, "compare")?;
    if d1 != d2 {
        return Err(VinceError::dim(format!("embedding widths differ: {d1} vs {d2}")));
    }
    let n = positives.len();
    let p = positives.first().map_or(0, Vec::len);
    let q = competitors.first().map_or(0, Vec::len);
    if p == 0 || positives.iter().any(|r| r.len() != p) || competitors.iter().any(|r| r.len() != q) {
        return Err(VinceError::dim(
            "every row needs the same, non-zero number of positives and competitors",
        ));
    }
    let loss = graph.contrastive_loss(anchors, compare, cfg.temperature, positives, competitors)?;
    Ok(NceOutput {
        loss,
        positive_scores: n * p,
        competitors_per_score: q,
    })
}

fn batch_rows(graph: &Graph, a: Var, b: Var) -> Result<usize> {
    let (n, _) = graph.value(a).dims2()?;
    let (n2, _) = graph.value(b).dims2()?;
    if n != n2 {
        return Err(VinceError::dim(format!(
            "anchors have {n} rows, positives {n2}"
        )));
    }
    if n < 2 {
        return Err(VinceError::Degenerate(format!(
            "contrastive batch needs at least 2 rows, got {n}"
        )));
    }
    Ok(n)
}

/// In-batch NCE: positive `P_i`, competitors the other positives. Gradients
/// reach both anchors and positives.
pub fn nce_loss(graph: &mut Graph, anchors: Var, positives: Var, cfg: &NceConfig) -> Result<NceOutput> {
    let n = batch_rows(graph, anchors, positives)?;
    let pos: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let neg: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i).collect())
        .collect();
    contrastive_score_loss(graph, anchors, positives, cfg, &pos, &neg)
}

/// Memory-bank NCE: positive `P_i`, competitors every bank row. The bank is
/// detached; an empty bank gives every anchor a score of exactly 1.
pub fn memory_nce_loss(
    graph: &mut Graph,
    anchors: Var,
    positives: Var,
    bank: &Tensor,
    cfg: &NceConfig,
) -> Result<NceOutput> {
    let n = batch_rows(graph, anchors, positives)?;
    let m = bank_rows(graph, anchors, bank)?;
    let bank = graph.constant(bank.clone());
    let compare = graph.concat_rows(&[positives, bank])?;
    let pos: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let neg: Vec<Vec<usize>> = (0..n).map(|_| (n..n + m).collect()).collect();
    contrastive_score_loss(graph, anchors, compare, cfg, &pos, &neg)
}

fn bank_rows(graph: &Graph, anchors: Var, bank: &Tensor) -> Result<usize> {
    let (_, d) = graph.value(anchors).dims2()?;
    match bank.shape() {
        [m, bd] if *bd == d => Ok(*m),
        s => Err(VinceError::dim(format!(
            "bank shape {s:?} incompatible with embedding width {d}"
        ))),
    }
}

/// Multi-pair NCE over a block-diagonal mask. Rows of `f_out` / `g_out` are
/// ordered video-major. Only `f_out` receives gradients.
pub fn multi_pair_nce_loss(
    graph: &mut Graph,
    f_out: Var,
    g_out: Var,
    bank: &Tensor,
    mask: &PairMask,
    cfg: &NceConfig,
) -> Result<NceOutput> {
    let n = batch_rows(graph, f_out, g_out)?;
    let m = bank_rows(graph, f_out, bank)?;
    if mask.rows() != n || mask.columns() != n + m {
        return Err(VinceError::dim(format!(
            "mask is {}×{}, batch needs {n}×{}",
            mask.rows(),
            mask.columns(),
            n + m
        )));
    }
    let g_out = graph.detach(g_out);
    let bank = graph.constant(bank.clone());
    let compare = graph.concat_rows(&[g_out, bank])?;
    let pos: Vec<Vec<usize>> = (0..n).map(|i| mask.positive_columns(i)).collect();
    let neg: Vec<Vec<usize>> = (0..n).map(|i| mask.negative_columns(i)).collect();
    contrastive_score_loss(graph, f_out, compare, cfg, &pos, &neg)
}
