//! Curates a folder of PPM videos: short and static videos are dropped, the
//! rest are cut down to evenly gapped frames.

use vince::data::{curate, CurationConfig, RgbImage};

fn moving(len: usize, hue: [u8; 3]) -> Vec<RgbImage> {
    (0..len)
        .map(|t| {
            let mut img = RgbImage::filled(32, 32, [80, 80, 80]);
            for y in 8..20 {
                for x in 0..10 {
                    img.set(x + t, y, hue);
                }
            }
            img
        })
        .collect()
}

fn main() -> vince::Result<()> {
    let tmp = tempfile::tempdir()?;
    let input = tmp.path().join("raw");
    let cfg = CurationConfig::default();
    let videos = [
        ("ball", moving(cfg.min_length() + 4, [240, 60, 40])),
        ("kite", moving(cfg.min_length(), [40, 200, 90])),
        ("wall", vec![RgbImage::filled(32, 32, [120, 110, 100]); cfg.min_length() + 4]),
        ("blink", moving(cfg.min_length() - 1, [30, 60, 230])),
    ];
    for (id, frames) in &videos {
        for (i, f) in frames.iter().enumerate() {
            f.write_ppm(&input.join(id).join(format!("frame_{i:04}.ppm")))?;
        }
    }
    let report = curate(&input, &tmp.path().join("curated"), &cfg, 0)?;
    println!("kept {} dropped {} of {}", report.kept(), report.dropped.len(), report.input_count);
    for record in &report.manifest.records {
        println!("  kept {} ({} frames)", record.video_id, record.frames.len());
    }
    for (id, reason) in &report.dropped {
        println!("  dropped {id}: {reason:?}");
    }
    Ok(())
}
