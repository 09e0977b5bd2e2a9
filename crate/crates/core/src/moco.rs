//! Momentum encoder pair and the FIFO memory bank of its past outputs.

use std::collections::HashSet;

use crate::encoder::EncoderParams;
use crate::error::{Result, VinceError};
use crate::nce::NORM_TOLERANCE;
use crate::tensor::Tensor;

/// Primary encoder `f`, momentum encoder `g`, and the coefficient `alpha`
/// of `g ← alpha · g + (1 − alpha) · f`.
#[derive(Clone, Debug, PartialEq)]
pub struct MocoState {
    pub f: EncoderParams,
    pub g: EncoderParams,
    alpha: f32,
}

impl MocoState {
    /// Starts `g` as an exact copy of `f`.
    pub fn new(f: EncoderParams, alpha: f32) -> Result<Self> {
        check_alpha(alpha)?;
        Ok(Self {
            g: f.clone(),
            f,
            alpha,
        })
    }

    pub fn from_parts(f: EncoderParams, g: EncoderParams, alpha: f32) -> Result<Self> {
        check_alpha(alpha)?;
        if f.config() != g.config() {
            return Err(VinceError::Precondition(
                "f and g must share one encoder config".into(),
            ));
        }
        Ok(Self { f, g, alpha })
    }

    pub fn alpha(&self) -> f32 {
        self.alpha
    }

    pub fn momentum_update(&mut self) -> Result<()> {
        self.g.blend_towards(&self.f, self.alpha)
    }
}

fn check_alpha(alpha: f32) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(VinceError::Config(format!(
            "momentum coefficient must lie in [0, 1], got {alpha}"
        )))
    }
}

/// Ring buffer of `capacity` unit-norm rows. Each row may carry a video tag
/// so that rows from particular videos can be left out of a step's negatives.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    capacity: usize,
    dim: usize,
    buffer: Vec<f32>,
    tags: Vec<Option<u32>>,
    cursor: usize,
    filled: usize,
    total_enqueued: u64,
}

impl MemoryBank {
    pub fn new(capacity: usize, dim: usize) -> Self {
        Self {
            capacity,
            dim,
            buffer: vec![0.0; capacity * dim],
            tags: vec![None; capacity],
            cursor: 0,
            filled: 0,
            total_enqueued: 0,
        }
    }

    /// Restores a bank from its raw parts (checkpoint loading).
    pub fn from_parts(
        capacity: usize,
        dim: usize,
        buffer: Vec<f32>,
        tags: Vec<Option<u32>>,
        total_enqueued: u64,
    ) -> Result<Self> {
        if buffer.len() != capacity * dim || tags.len() != capacity {
            return Err(VinceError::dim(format!(
                "bank buffer {} / tags {} do not match {capacity}×{dim}",
                buffer.len(),
                tags.len()
            )));
        }
        let (cursor, filled) = if capacity == 0 {
            (0, 0)
        } else {
            (
                (total_enqueued % capacity as u64) as usize,
                total_enqueued.min(capacity as u64) as usize,
            )
        };
        Ok(Self {
            capacity,
            dim,
            buffer,
            tags,
            cursor,
            filled,
            total_enqueued,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn filled(&self) -> usize {
        self.filled
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn total_enqueued(&self) -> u64 {
        self.total_enqueued
    }

    pub fn raw_buffer(&self) -> &[f32] {
        &self.buffer
    }

    pub fn raw_tags(&self) -> &[Option<u32>] {
        &self.tags
    }

    /// Writes `rows` at the cursor, overwriting the oldest entries first.
    pub fn enqueue(&mut self, rows: &Tensor, tags: Option<&[u32]>) -> Result<()> {
        let (b, d) = rows.dims2()?;
        if d != self.dim {
            return Err(VinceError::dim(format!(
                "bank width {} but rows have {d} columns",
                self.dim
            )));
        }
        if b > self.capacity {
            return Err(VinceError::Capacity {
                requested: b,
                capacity: self.capacity,
            });
        }
        if let Some(t) = tags {
            if t.len() != b {
                return Err(VinceError::dim(format!("{} tags for {b} rows", t.len())));
            }
        }
        for r in 0..b {
            let norm = rows.row(r).iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > NORM_TOLERANCE as f64 {
                return Err(VinceError::Precondition(format!(
                    "bank row {r} has norm {norm:.6}"
                )));
            }
        }
        for r in 0..b {
            let slot = self.cursor;
            self.buffer[slot * self.dim..(slot + 1) * self.dim].copy_from_slice(rows.row(r));
            self.tags[slot] = tags.map(|t| t[r]);
            self.cursor = (self.cursor + 1) % self.capacity;
        }
        self.filled = (self.filled + b).min(self.capacity);
        self.total_enqueued += b as u64;
        Ok(())
    }

    /// Slot indices of stored rows, oldest first.
    fn slots_by_age(&self) -> impl Iterator<Item = usize> + '_ {
        let start = if self.filled < self.capacity { 0 } else { self.cursor };
        (0..self.filled).map(move |i| (start + i) % self.capacity.max(1))
    }

    /// Copy of the filled rows, oldest first, as `filled × dim`.
    pub fn negatives_view(&self) -> Tensor {
        self.view_where(|_| true)
    }

    /// Like [`negatives_view`](Self::negatives_view) but dropping rows whose
    /// tag is in `exclude`.
    pub fn negatives_view_excluding(&self, exclude: &HashSet<u32>) -> Tensor {
        self.view_where(|slot| !self.tags[slot].is_some_and(|t| exclude.contains(&t)))
    }

    fn view_where(&self, keep: impl Fn(usize) -> bool) -> Tensor {
        let mut data = Vec::with_capacity(self.filled * self.dim);
        let mut rows = 0;
        for slot in self.slots_by_age() {
            if keep(slot) {
                data.extend_from_slice(&self.buffer[slot * self.dim..(slot + 1) * self.dim]);
                rows += 1;
            }
        }
        Tensor::new([rows, self.dim], data).expect("rows × dim by construction")
    }
}
