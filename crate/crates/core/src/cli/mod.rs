//! The `vince` command line: generate, curate, train, eval, knn, track and
//! export.
//!
//! Every command resolves a [`RunConfig`] from an optional JSON file plus
//! flag overrides and writes it to its output directory as `config.json`.
//! Exit codes are 0 on success, 1 on runtime failure and 2 on usage or
//! configuration errors.

use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::{generate_synthetic, CurationConfig, FrameStore, SyntheticWorldConfig, VideoManifest};
use crate::encoder::EncoderParams;
use crate::error::{Result, VinceError};
use crate::eval::{
    self, export_embeddings, knn::knn_retrieve_excluding, knn_retrieve, otb_metrics, scripted_sequence, siamfc_track,
    temporal_probe, train_linear_probe, EmbeddingTable, EvalReport, FeatureKind, Motion, ProbeConfig, TrackerConfig,
};
use crate::train::{
    checkpoint_hash, load_checkpoint, train, LrSchedule, Regime, TrainConfig, TrainOptions, TrainState, FINAL_CHECKPOINT,
};

pub const CONFIG_FILE: &str = "config.json";
pub const THREADS_ENV: &str = "VINCE_THREADS";

/// A scripted tracking sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackRun {
    pub motion: Motion,
    pub frames: usize,
    pub frame_size: usize,
    pub target_size: usize,
}

impl Default for TrackRun {
    fn default() -> Self {
        Self {
            motion: Motion::Linear { dx: 2.0, dy: -1.5 },
            frames: 30,
            frame_size: 160,
            target_size: 16,
        }
    }
}

/// Everything a command can be configured with. The top-level seed is
/// copied into the train and probe configs when resolved.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub synthetic: SyntheticWorldConfig,
    pub curation: CurationConfig,
    pub train: TrainConfig,
    pub probe: ProbeConfig,
    pub tracker: TrackerConfig,
    pub track: TrackRun,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| VinceError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| VinceError::Config(format!("{}: {e}", path.display())))
    }

    fn resolve(&mut self) {
        self.train.seed = self.seed;
        self.probe.seed = self.seed;
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(dir.join(CONFIG_FILE), text)?;
        Ok(())
    }
}

#[derive(Parser, Debug)]
#[command(name = "vince", version, about = "Multi-frame contrastive learning on video frames")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic labelled video corpus.
    Generate(GenerateArgs),
    /// Sample T frames per video from directories of frames and drop static videos.
    Curate(CurateArgs),
    /// Train an encoder under one of the three regimes.
    Train(TrainArgs),
    /// Linear and temporal probes on a frozen checkpoint.
    Eval(EvalArgs),
    /// Nearest frames of other videos for one query frame.
    Knn(KnnArgs),
    /// Track a scripted sequence and score it.
    Track(TrackArgs),
    /// Write per-frame embeddings as CSV.
    Export(ExportArgs),
}

#[derive(Args, Debug)]
pub struct Common {
    /// JSON config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub videos_per_class: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub image_size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct CurateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory of per-video frame directories.
    #[arg(long)]
    pub input: PathBuf,
    /// Frames kept per video (T).
    #[arg(long)]
    pub frames: Option<usize>,
    /// Source frames between kept frames (G).
    #[arg(long)]
    pub gap: Option<usize>,
    #[arg(long)]
    pub static_threshold: Option<f32>,
    #[arg(long)]
    pub change_epsilon: Option<u8>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ScheduleArg {
    Constant,
    Cosine,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Corpus directory or manifest file.
    #[arg(long)]
    pub data: PathBuf,
    /// same_frame, multi_frame or multi_pair
    #[arg(long)]
    pub regime: Option<Regime>,
    #[arg(long)]
    pub iterations: Option<u64>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long, value_enum)]
    pub lr_schedule: Option<ScheduleArg>,
    #[arg(long)]
    pub alpha: Option<f32>,
    #[arg(long)]
    pub temperature: Option<f32>,
    #[arg(long)]
    pub bank_size: Option<usize>,
    #[arg(long)]
    pub videos: Option<usize>,
    #[arg(long)]
    pub frames_per_video: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    #[arg(long)]
    pub eval_every: Option<u64>,
    /// Continue from a checkpoint; its training config is kept, except that
    /// `--iterations` may extend the run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Write 0 instead of wall-clock times to metrics.csv.
    #[arg(long)]
    pub no_timing: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FeatureArg {
    Embedding,
    Pooled,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum)]
    pub features: Option<FeatureArg>,
    #[arg(long)]
    pub probe_steps: Option<usize>,
    #[arg(long)]
    pub holdout_every: Option<usize>,
    /// Also track the configured scripted sequence.
    #[arg(long)]
    pub track: bool,
}

#[derive(Args, Debug)]
pub struct KnnArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Query video id.
    #[arg(long)]
    pub video: String,
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Skip frames of the query's own video.
    #[arg(long)]
    pub exclude_own_video: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MotionArg {
    Static,
    Linear,
}

#[derive(Args, Debug)]
pub struct TrackArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum)]
    pub motion: Option<MotionArg>,
    /// Per-frame displacement for linear motion.
    #[arg(long, allow_negative_numbers = true)]
    pub dx: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub dy: Option<f64>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub frame_size: Option<usize>,
    #[arg(long)]
    pub target_size: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn base_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, common.seed);
    Ok(cfg)
}

fn load_store(data: &Path) -> Result<FrameStore> {
    FrameStore::load(&VideoManifest::load(data)?)
}

/// The primary encoder of a checkpoint and the checkpoint's SHA-256.
fn load_encoder(path: &Path) -> Result<(EncoderParams, String)> {
    let state = load_checkpoint(path)?;
    Ok((state.moco.f, checkpoint_hash(path)?))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    let s = &mut cfg.synthetic;
    set(&mut s.num_classes, args.classes);
    set(&mut s.videos_per_class, args.videos_per_class);
    set(&mut s.frames_per_video, args.frames);
    set(&mut s.image_size, args.image_size);
    cfg.resolve();
    cfg.synthetic.validate()?;
    let manifest = generate_synthetic(&cfg.synthetic, cfg.seed, &args.common.out)?;
    cfg.write(&args.common.out)?;
    println!(
        "generated {} videos, {} frames in {}",
        manifest.len(),
        manifest.total_frames(),
        args.common.out.display()
    );
    Ok(())
}

fn cmd_curate(args: CurateArgs) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    let c = &mut cfg.curation;
    set(&mut c.frames_per_video, args.frames);
    set(&mut c.gap, args.gap);
    set(&mut c.static_threshold, args.static_threshold);
    set(&mut c.change_epsilon, args.change_epsilon);
    cfg.resolve();
    cfg.curation.validate()?;
    let report = crate::data::curate(&args.input, &args.common.out, &cfg.curation, cfg.seed)?;
    cfg.write(&args.common.out)?;
    let dropped: Vec<_> = report
        .dropped
        .iter()
        .map(|(id, why)| json!({ "video_id": id, "reason": format!("{why:?}") }))
        .collect();
    write_json(
        &args.common.out.join("curation.json"),
        &json!({ "input": report.input_count, "kept": report.kept(), "dropped": dropped }),
    )?;
    println!("kept {} dropped {} of {}", report.kept(), report.dropped.len(), report.input_count);
    if report.kept() == 0 {
        eprintln!(
            "warning: every video was dropped (a video needs at least {} frames and visible change)",
            cfg.curation.min_length()
        );
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    let t = &mut cfg.train;
    set(&mut t.regime, args.regime);
    set(&mut t.iterations, args.iterations);
    set(&mut t.lr, args.lr);
    set(
        &mut t.lr_schedule,
        args.lr_schedule.map(|s| match s {
            ScheduleArg::Constant => LrSchedule::Constant,
            ScheduleArg::Cosine => LrSchedule::Cosine,
        }),
    );
    set(&mut t.alpha, args.alpha);
    set(&mut t.temperature, args.temperature);
    set(&mut t.bank_size, args.bank_size);
    if args.videos.is_some() {
        t.videos = args.videos;
    }
    if args.frames_per_video.is_some() {
        t.frames_per_video = args.frames_per_video;
    }
    set(&mut t.checkpoint_every, args.checkpoint_every);
    set(&mut t.eval_every, args.eval_every);
    if args.no_timing {
        t.record_timing = false;
    }
    cfg.resolve();

    let mut state = match &args.resume {
        Some(path) => {
            let mut state = load_checkpoint(path)?;
            set(&mut state.config.iterations, args.iterations);
            if args.no_timing {
                state.config.record_timing = false;
            }
            cfg.seed = state.config.seed;
            cfg.train = state.config.clone();
            cfg.probe.seed = cfg.seed;
            state
        }
        None => TrainState::new(cfg.train.clone())?,
    };
    state.config.validate()?;
    let store = load_store(&args.data)?;
    let out = args.common.out.clone();
    cfg.write(&out)?;

    let eval_log = out.join("eval.csv");
    if args.resume.is_none() && eval_log.exists() {
        fs::remove_file(&eval_log)?;
    }
    let eval_cb = |s: &TrainState| -> Result<()> {
        let r = train_linear_probe(&s.moco.f, &store, &cfg.probe)?;
        let fresh = !eval_log.exists();
        let mut f = OpenOptions::new().create(true).append(true).open(&eval_log)?;
        if fresh {
            writeln!(f, "iteration,probe_top1")?;
        }
        writeln!(f, "{},{}", s.iteration, r.top1)?;
        Ok(())
    };
    let rows = train(
        &mut state,
        &store,
        TrainOptions {
            out_dir: Some(out.clone()),
            on_eval: Some(Box::new(eval_cb)),
            ..Default::default()
        },
    )?;
    let final_path = out.join(FINAL_CHECKPOINT);
    let hash = checkpoint_hash(&final_path)?;
    write_json(
        &out.join("train.json"),
        &json!({
            "checkpoint": FINAL_CHECKPOINT,
            "checkpoint_hash": hash,
            "iterations": state.iteration,
            "final_loss": rows.last().map(|r| r.loss),
        }),
    )?;
    println!("trained to iteration {}; {} sha256 {hash}", state.iteration, final_path.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    set(
        &mut cfg.probe.features,
        args.features.map(|f| match f {
            FeatureArg::Embedding => FeatureKind::Embedding,
            FeatureArg::Pooled => FeatureKind::Pooled,
        }),
    );
    set(&mut cfg.probe.steps, args.probe_steps);
    set(&mut cfg.probe.holdout_every, args.holdout_every);
    cfg.resolve();
    let (params, hash) = load_encoder(&args.checkpoint)?;
    let store = load_store(&args.data)?;
    let frame = train_linear_probe(&params, &store, &cfg.probe)?;
    let video = temporal_probe(&params, &store, &cfg.probe)?;
    let tracked = if args.track {
        Some(track_scripted(&params, &cfg)?)
    } else {
        None
    };
    let report = EvalReport {
        checkpoint_hash: Some(hash),
        probe_top1: frame.top1,
        probe_train_top1: frame.train_top1,
        temporal_top1: video.top1,
        chance: frame.chance(),
        num_classes: frame.num_classes,
        test_frames: frame.test_samples,
        test_videos: video.test_samples,
        precision_auc: tracked.as_ref().map(|t| t.0.precision_auc),
        success_auc: tracked.as_ref().map(|t| t.0.success_auc),
        curves: tracked.map(|t| t.0.curves),
    };
    cfg.write(&args.common.out)?;
    write_json(&args.common.out.join("metrics.json"), &report)?;
    println!(
        "probe top-1 {:.4} (chance {:.4}), temporal top-1 {:.4}",
        report.probe_top1, report.chance, report.temporal_top1
    );
    if let (Some(p), Some(s)) = (report.precision_auc, report.success_auc) {
        println!("tracking precision AUC {p:.4}, success AUC {s:.4}");
    }
    Ok(())
}

fn cmd_knn(args: KnnArgs) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    cfg.resolve();
    if args.k == 0 {
        return Err(VinceError::Config("--k must be ≥ 1".into()));
    }
    let (params, hash) = load_encoder(&args.checkpoint)?;
    let store = load_store(&args.data)?;
    let table = EmbeddingTable::from_store(&params, &store)?;
    let row = table.find(&args.video, args.frame).ok_or_else(|| {
        VinceError::Config(format!("no frame {} of video {:?} in the corpus", args.frame, args.video))
    })?;
    let query = table.embeddings.row(row);
    let result = if args.exclude_own_video {
        knn_retrieve_excluding(query, &table, args.k, &args.video)?
    } else {
        knn_retrieve(query, &table, args.k)?
    };
    cfg.write(&args.common.out)?;
    let mut csv = String::from("rank,video_id,frame_index,similarity\n");
    for (i, h) in result.hits.iter().enumerate() {
        csv.push_str(&format!("{},{},{},{}\n", i + 1, h.video_id, h.frame, h.similarity));
    }
    fs::write(args.common.out.join("knn.csv"), &csv)?;
    write_json(
        &args.common.out.join("knn.json"),
        &json!({
            "checkpoint_hash": hash,
            "query": { "video_id": args.video, "frame_index": args.frame },
            "k": args.k,
            "truncated": result.truncated,
            "hits": result.hits,
        }),
    )?;
    print!("{csv}");
    if result.truncated {
        eprintln!("note: only {} distinct videos available", result.hits.len());
    }
    Ok(())
}

type Tracked = (eval::TrackMetrics, Vec<eval::BBox>, Vec<eval::BBox>);

fn track_scripted(params: &EncoderParams, cfg: &RunConfig) -> Result<Tracked> {
    let t = &cfg.track;
    let seq = scripted_sequence(t.motion, t.frames, t.frame_size, t.target_size, cfg.seed)?;
    let boxes = siamfc_track(params, &seq.frames, seq.boxes[0], &cfg.tracker)?;
    Ok((otb_metrics(&boxes, &seq.boxes)?, boxes, seq.boxes))
}

fn cmd_track(args: TrackArgs) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    let t = &mut cfg.track;
    match args.motion {
        Some(MotionArg::Static) => t.motion = Motion::Static,
        Some(MotionArg::Linear) if !matches!(t.motion, Motion::Linear { .. }) => {
            t.motion = TrackRun::default().motion;
        }
        _ => {}
    }
    if let Motion::Linear { dx, dy } = &mut t.motion {
        set(dx, args.dx);
        set(dy, args.dy);
    } else if args.dx.is_some() || args.dy.is_some() {
        return Err(VinceError::Config("--dx/--dy need linear motion".into()));
    }
    set(&mut t.frames, args.frames);
    set(&mut t.frame_size, args.frame_size);
    set(&mut t.target_size, args.target_size);
    cfg.resolve();
    cfg.tracker.validate()?;
    let (params, hash) = load_encoder(&args.checkpoint)?;
    let (metrics, boxes, truth) = track_scripted(&params, &cfg)?;
    cfg.write(&args.common.out)?;
    write_json(
        &args.common.out.join("track.json"),
        &json!({
            "checkpoint_hash": hash,
            "precision_auc": metrics.precision_auc,
            "raw_precision_auc": metrics.raw_precision_auc,
            "success_auc": metrics.success_auc,
            "curves": metrics.curves,
            "boxes": boxes,
            "ground_truth": truth,
        }),
    )?;
    println!(
        "precision AUC {:.4}, success AUC {:.4} over {} frames",
        metrics.precision_auc,
        metrics.success_auc,
        boxes.len()
    );
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let mut cfg = base_config(&args.common)?;
    cfg.resolve();
    let (params, hash) = load_encoder(&args.checkpoint)?;
    let store = load_store(&args.data)?;
    let table = export_embeddings(&params, &store, &args.common.out.join("embeddings.csv"))?;
    cfg.write(&args.common.out)?;
    write_json(
        &args.common.out.join("export.json"),
        &json!({ "checkpoint_hash": hash, "rows": table.len(), "dim": params.config().embed_dim }),
    )?;
    println!("wrote {} embeddings to {}", table.len(), args.common.out.join("embeddings.csv").display());
    Ok(())
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| VinceError::Config(format!("{THREADS_ENV}={value:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| VinceError::Config(format!("cannot size the thread pool: {e}")))
}

pub fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Curate(a) => cmd_curate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Knn(a) => cmd_knn(a),
        Command::Track(a) => cmd_track(a),
        Command::Export(a) => cmd_export(a),
    }
}

pub fn exit_code(err: &VinceError) -> i32 {
    match err {
        VinceError::Config(_) => 2,
        _ => 1,
    }
}

/// Parses `std::env::args`, runs the command and returns the exit code.
pub fn main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if exit_code(&e) == 2 {
                eprintln!("run `vince --help` for usage");
            }
            exit_code(&e)
        }
    }
}
