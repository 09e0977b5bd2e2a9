//! Renders a small synthetic corpus to disk and summarizes the manifest.
//!
//! ```text
//! cargo run --example generate -- [out_dir]
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use vince::data::{generate_synthetic, SyntheticWorldConfig};

fn main() -> vince::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("vince-generate"));
    let world = SyntheticWorldConfig {
        videos_per_class: 5,
        ..SyntheticWorldConfig::default()
    };
    let manifest = generate_synthetic(&world, 3, &out)?;
    let mut per_class: BTreeMap<i64, usize> = BTreeMap::new();
    for record in &manifest.records {
        *per_class.entry(record.label.unwrap_or(-1)).or_default() += 1;
    }
    println!("{} videos under {}", manifest.records.len(), out.display());
    for (label, count) in per_class {
        println!("  class {label}: {count} videos");
    }
    let first = &manifest.records[0];
    println!("first video {} has {} frames", first.video_id, first.frames.len());
    Ok(())
}
