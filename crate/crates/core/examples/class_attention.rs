//! Groups a batch by label, runs class-wise attention and reassembles the
//! normalized embeddings.

use morel::embedding::{class_attention, group_by_class, AttentionWeights, EmbeddingConfig, EmbeddingSpace};
use morel::seed;
use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};

fn main() -> morel::Result<()> {
    let mut rng = seed::rng(3, "example", 0, 0);
    let y = [2, 0, 2, 1, 0, 2];
    let s = Array2::from_shape_simple_fn((y.len(), 8), || StandardNormal.sample(&mut rng));

    let groups = group_by_class(&s, &y)?;
    for g in &groups {
        println!("class {} -> batch rows {:?}", g.class_id, g.source_indices);
    }

    let weights = AttentionWeights::init(8, 2, &mut rng);
    let attended = class_attention(&groups[2], &weights)?;
    println!("class 2 attended rows:\n{:.3}", attended.rows);

    let space = EmbeddingSpace::new(EmbeddingConfig::new(16, 8, 2)?, &mut rng);
    let z = Array2::from_shape_simple_fn((y.len(), 16), || StandardNormal.sample(&mut rng));
    let t = space?.forward(&z, &y)?;
    let norms: Vec<String> = t.rows().into_iter().map(|r| format!("{:.6}", r.dot(&r).sqrt())).collect();
    println!("embedding row norms: {}", norms.join(" "));
    Ok(())
}
