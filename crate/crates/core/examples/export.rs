//! Writes per-frame embeddings to CSV and reads them back.

use vince::data::{generate_synthetic, FrameStore, SyntheticWorldConfig};
use vince::encoder::{EncoderConfig, EncoderParams};
use vince::eval::{export_embeddings, read_embeddings_csv};

fn main() -> vince::Result<()> {
    let tmp = tempfile::tempdir()?;
    let world = SyntheticWorldConfig {
        num_classes: 3,
        videos_per_class: 2,
        ..SyntheticWorldConfig::default()
    };
    let manifest = generate_synthetic(&world, 5, &tmp.path().join("corpus"))?;
    let store = FrameStore::load(&manifest)?;
    let params = EncoderParams::init(&EncoderConfig::default(), 5)?;
    let path = tmp.path().join("embeddings.csv");
    let table = export_embeddings(&params, &store, &path)?;
    println!("{} rows of dimension {} written to {}", table.len(), table.dim(), path.display());
    let text = std::fs::read_to_string(&path)?;
    for line in text.lines().take(3) {
        let shown: String = line.chars().take(72).collect();
        println!("  {shown}...");
    }
    let back = read_embeddings_csv(&path)?;
    println!("max round-trip difference {:.2e}", back.embeddings.max_abs_diff(&table.embeddings));
    Ok(())
}
