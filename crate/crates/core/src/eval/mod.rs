//! Evaluations of a frozen encoder.

pub mod export;
pub mod knn;
pub mod otb;
pub mod probe;
pub mod track;

use serde::{Deserialize, Serialize};

use crate::data::{images_to_tensor, FrameStore, Image};
use crate::encoder::{self, EncoderParams};
use crate::error::Result;
use crate::tensor::Tensor;

pub use export::{export_embeddings, read_embeddings_csv, EmbeddingTable};
pub use knn::{knn_retrieve, KnnHit, KnnResult};
pub use otb::{otb_metrics, TrackMetrics, PRECISION_THRESHOLDS, SUCCESS_THRESHOLDS};
pub use probe::{
    temporal_probe, train_linear_probe, train_probe_on_features, FeatureKind, ProbeConfig, ProbeHead,
    ProbeResult,
};
pub use track::{scripted_sequence, siamfc_track, BBox, Motion, ScriptedSequence, TrackerConfig};

const EMBED_CHUNK: usize = 256;

/// Resizes a whole frame to the encoder's square input if needed.
pub fn fit_to_input(image: &Image, size: usize) -> Image {
    if image.width == size && image.height == size {
        image.clone()
    } else {
        image.crop_resize(0.0, 0.0, image.width as f32, image.height as f32, size, size)
    }
}

fn normalize_rows(t: &mut Tensor) {
    let d = t.shape()[1];
    for row in t.data_mut().chunks_mut(d) {
        let norm = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        if norm > 0.0 {
            row.iter_mut().for_each(|v| *v = (*v as f64 / norm) as f32);
        }
    }
}

/// Per-frame features for every frame of `store`, video-major, as
/// `total_frames × d`.
pub fn frame_features(params: &EncoderParams, store: &FrameStore, kind: FeatureKind) -> Result<Tensor> {
    let frames: Vec<&Image> = store.frames.iter().flatten().collect();
    features_of(params, &frames, kind)
}

pub fn features_of(params: &EncoderParams, frames: &[&Image], kind: FeatureKind) -> Result<Tensor> {
    let size = params.config().input_size;
    let width = match kind {
        FeatureKind::Embedding => params.config().embed_dim,
        FeatureKind::Pooled => params.config().feature_channels(),
    };
    let mut data = Vec::with_capacity(frames.len() * width);
    for chunk in frames.chunks(EMBED_CHUNK) {
        let imgs: Vec<Image> = chunk.iter().map(|f| fit_to_input(f, size)).collect();
        let x = images_to_tensor(&imgs)?;
        let out = match kind {
            FeatureKind::Embedding => {
                let mut e = encoder::encode(params, &x)?;
                normalize_rows(&mut e);
                e
            }
            FeatureKind::Pooled => {
                let s = encoder::spatial_features(params, &x)?;
                let (n, c, h, w) = s.dims4()?;
                let plane = h * w;
                let pooled = s
                    .data()
                    .chunks(plane)
                    .map(|p| (p.iter().map(|&v| v as f64).sum::<f64>() / plane as f64) as f32)
                    .collect();
                Tensor::new([n, c], pooled)?
            }
        };
        data.extend(out.into_data());
    }
    Tensor::new([frames.len(), width], data)
}

/// Summary written by `vince eval`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub checkpoint_hash: Option<String>,
    pub probe_top1: f64,
    pub probe_train_top1: f64,
    pub temporal_top1: f64,
    pub chance: f64,
    pub num_classes: usize,
    pub test_frames: usize,
    pub test_videos: usize,
    pub precision_auc: Option<f64>,
    pub success_auc: Option<f64>,
    pub curves: Option<otb::Curves>,
}
