//! Nearest-neighbour retrieval over frame embeddings. Neighbours of a query
//! frame are listed one per video, with and without its own video.

use vince::data::{generate_synthetic, FrameStore, SyntheticWorldConfig};
use vince::encoder::{EncoderConfig, EncoderParams};
use vince::eval::{knn_retrieve, knn::knn_retrieve_excluding, EmbeddingTable, KnnResult};

fn show(title: &str, result: &KnnResult, labels: &dyn Fn(&str) -> i64) {
    println!("{title}{}", if result.truncated { " (truncated)" } else { "" });
    for hit in &result.hits {
        println!("  {} frame {} class {} cos {:.4}", hit.video_id, hit.frame, labels(&hit.video_id), hit.similarity);
    }
}

fn main() -> vince::Result<()> {
    let tmp = tempfile::tempdir()?;
    let world = SyntheticWorldConfig {
        videos_per_class: 6,
        ..SyntheticWorldConfig::default()
    };
    let manifest = generate_synthetic(&world, 4, tmp.path())?;
    let store = FrameStore::load(&manifest)?;
    let params = EncoderParams::init(&EncoderConfig::default(), 4)?;
    let table = EmbeddingTable::from_store(&params, &store)?;
    let labels = |id: &str| manifest.records.iter().find(|r| r.video_id == id).and_then(|r| r.label).unwrap_or(-1);

    let row = table.find(&manifest.records[0].video_id, 1).expect("query frame");
    let query = table.embeddings.row(row).to_vec();
    let id = &table.video_ids[row];
    println!("query {id} frame 1, class {}", labels(id));
    show("top 5", &knn_retrieve(&query, &table, 5)?, &labels);
    show("top 5 from other videos", &knn_retrieve_excluding(&query, &table, 5, id)?, &labels);
    Ok(())
}
