use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::{save_checkpoint, train_step, StepReport, TrainState};
use crate::data::{sample_batch, FrameStore};
use crate::error::{Result, VinceError};
use crate::nce::BatchLayout;

pub const METRICS_FILE: &str = "metrics.csv";
const METRICS_HEADER: &str = "iteration,lr,loss,wall_ms";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub lr: f32,
    pub loss: f32,
    pub wall_ms: u64,
}

impl MetricsRow {
    fn to_csv(&self) -> String {
        format!("{},{},{},{}", self.iteration, self.lr, self.loss, self.wall_ms)
    }

    fn parse(line: &str, path: &Path) -> Result<Self> {
        let bad = || VinceError::format(path, format!("bad metrics row {line:?}"));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        Ok(Self {
            iteration: f[0].parse().map_err(|_| bad())?,
            lr: f[1].parse().map_err(|_| bad())?,
            loss: f[2].parse().map_err(|_| bad())?,
            wall_ms: f[3].parse().map_err(|_| bad())?,
        })
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(VinceError::format(path, "missing metrics header"));
    }
    lines.map(|l| MetricsRow::parse(l, path)).collect()
}

pub type EvalHook<'a> = Box<dyn FnMut(&TrainState) -> Result<()> + 'a>;
pub type StepHook<'a> = Box<dyn FnMut(&StepReport) + 'a>;

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Receives `metrics.csv` and checkpoints; `None` keeps everything in memory.
    pub out_dir: Option<PathBuf>,
    /// Stop after this many steps in this call, even before `iterations`.
    pub max_steps: Option<u64>,
    /// Called after every `eval_every` steps.
    pub on_eval: Option<EvalHook<'a>>,
    /// Called after every step.
    pub on_step: Option<StepHook<'a>>,
}

pub fn checkpoint_path(out_dir: &Path, iteration: u64) -> PathBuf {
    out_dir.join(format!("checkpoint_{iteration:08}.ckpt"))
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";

/// Opens the metrics log for appending, first dropping any rows at or past
/// `from` (left over from a run that went further than its checkpoint).
fn open_metrics(path: &Path, from: u64) -> Result<fs::File> {
    let mut kept = format!("{METRICS_HEADER}\n");
    if from > 0 && path.is_file() {
        for row in read_metrics(path)? {
            if row.iteration < from {
                kept.push_str(&row.to_csv());
                kept.push('\n');
            }
        }
    }
    fs::write(path, kept)?;
    Ok(fs::OpenOptions::new().append(true).open(path)?)
}

/// Runs steps from `state.iteration` up to the configured total. Returns
/// the metrics rows produced by this call.
pub fn train(state: &mut TrainState, store: &FrameStore, mut opts: TrainOptions<'_>) -> Result<Vec<MetricsRow>> {
    state.config.validate()?;
    let (v, k) = state.layout();
    let layout = BatchLayout::new(v, k, 0)?;
    if store.len() < v {
        return Err(VinceError::InsufficientData(format!(
            "batch needs {v} videos, corpus has {}",
            store.len()
        )));
    }
    let mut log = match &opts.out_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Some(open_metrics(&dir.join(super::METRICS_FILE), state.iteration)?)
        }
        None => None,
    };
    let end = match opts.max_steps {
        Some(s) => (state.iteration + s).min(state.config.iterations),
        None => state.config.iterations,
    };
    let mut rows = Vec::new();
    while state.iteration < end {
        let started = Instant::now();
        let it = state.iteration;
        let batch = sample_batch(
            store,
            layout,
            state.config.regime.sampling(),
            &state.config.augment,
            state.batch_seed(it),
        )?;
        let report = train_step(state, &batch)?;
        let wall_ms = if state.config.record_timing {
            started.elapsed().as_millis() as u64
        } else {
            0
        };
        let row = MetricsRow {
            iteration: it,
            lr: report.lr,
            loss: report.loss,
            wall_ms,
        };
        if let Some(f) = log.as_mut() {
            writeln!(f, "{}", row.to_csv())?;
        }
        rows.push(row);
        if let Some(cb) = opts.on_step.as_mut() {
            cb(&report);
        }
        let done = state.iteration;
        if let Some(dir) = &opts.out_dir {
            let every = state.config.checkpoint_every;
            if every > 0 && done.is_multiple_of(every) && done < state.config.iterations {
                save_checkpoint(state, &checkpoint_path(dir, done))?;
            }
        }
        let every = state.config.eval_every;
        if every > 0 && done.is_multiple_of(every) {
            if let Some(cb) = opts.on_eval.as_mut() {
                cb(state)?;
            }
        }
    }
    if let (Some(dir), true) = (&opts.out_dir, state.iteration == state.config.iterations) {
        save_checkpoint(state, &dir.join(FINAL_CHECKPOINT))?;
    }
    Ok(rows)
}
