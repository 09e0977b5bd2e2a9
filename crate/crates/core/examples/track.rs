//! Tracks a textured square across scripted sequences with a SiamFC-style
//! correlation tracker and scores it with the OTB metrics.

use vince::encoder::{EncoderConfig, EncoderParams};
use vince::eval::{otb_metrics, scripted_sequence, siamfc_track, Motion, TrackerConfig};

fn main() -> vince::Result<()> {
    let params = EncoderParams::init(&EncoderConfig::default(), 0)?;
    let tracker = TrackerConfig::default();
    for motion in [Motion::Static, Motion::Linear { dx: 3.0, dy: -1.5 }] {
        let seq = scripted_sequence(motion, 20, 160, 16, 0)?;
        let boxes = siamfc_track(&params, &seq.frames, seq.boxes[0], &tracker)?;
        let metrics = otb_metrics(&boxes, &seq.boxes)?;
        let worst = boxes.iter().zip(&seq.boxes).map(|(p, g)| p.center_distance(g)).fold(0.0, f64::max);
        println!(
            "{motion:?}: precision AUC {:.3}, success AUC {:.3}, worst center error {worst:.2} px",
            metrics.precision_auc, metrics.success_auc
        );
    }
    Ok(())
}
