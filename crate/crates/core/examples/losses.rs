//! The three contrastive losses on one set of embeddings, with their
//! gradients and positive counts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vince::nce::{build_pair_mask, memory_nce_loss, multi_pair_nce_loss, nce_loss, BatchLayout, NceConfig};
use vince::tensor::{Graph, Tensor};

fn unit_rows(r: &mut ChaCha8Rng, n: usize, d: usize) -> Tensor {
    let mut data: Vec<f32> = (0..n * d).map(|_| r.gen_range(-1.0..1.0)).collect();
    for row in data.chunks_mut(d) {
        let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt();
        row.iter_mut().for_each(|v| *v /= norm);
    }
    Tensor::new([n, d], data).unwrap()
}

fn main() -> vince::Result<()> {
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let (v, k, m, d) = (4, 2, 16, 8);
    let f = unit_rows(&mut r, v * k, d);
    let g = unit_rows(&mut r, v * k, d);
    let bank = unit_rows(&mut r, m, d);
    let cfg = NceConfig::new(1.0 / 0.07)?;

    let mut graph = Graph::new();
    let (fv, gv) = (graph.leaf(f.clone(), true), graph.constant(g.clone()));
    let out = nce_loss(&mut graph, fv, gv, &cfg)?;
    println!("batch NCE   {:.4} ({} positives)", graph.value(out.loss).item()?, out.positive_scores);

    let mut graph = Graph::new();
    let (fv, gv) = (graph.leaf(f.clone(), true), graph.constant(g.clone()));
    let out = memory_nce_loss(&mut graph, fv, gv, &bank, &cfg)?;
    println!("memory NCE  {:.4} ({} positives)", graph.value(out.loss).item()?, out.positive_scores);

    let mut graph = Graph::new();
    let (fv, gv) = (graph.leaf(f, true), graph.constant(g));
    let mask = build_pair_mask(BatchLayout::new(v, k, m)?);
    let out = multi_pair_nce_loss(&mut graph, fv, gv, &bank, &mask, &cfg)?;
    graph.backward(out.loss)?;
    let grad = graph.grad(fv).expect("anchor gradient");
    println!(
        "multi-pair  {:.4} ({} positives = k²v, {} competitors each), |grad|∞ {:.4}",
        graph.value(out.loss).item()?,
        out.positive_scores,
        out.competitors_per_score,
        grad.data().iter().fold(0.0f32, |a, b| a.max(b.abs()))
    );
    Ok(())
}
