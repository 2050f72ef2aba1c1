//! Generates the synthetic dataset, batches it and applies augmentation.

use morel::data::{augment, make_batches, BatchPlan, Split, SyntheticSpec};
use morel::seed;

fn main() -> morel::Result<()> {
    let spec = SyntheticSpec {
        per_class: 20,
        test_per_class: 5,
        ..Default::default()
    };
    let train = spec.generate(Split::Train);
    let test = spec.generate(Split::Test);
    println!(
        "train {} / test {} images of shape {:?}, {} classes",
        train.len(),
        test.len(),
        train.image_shape(),
        train.class_count()
    );

    let batches = make_batches(&train, &BatchPlan::new(8, true, 42)?);
    let first = &batches[0];
    println!("{} batches; first labels {:?}", batches.len(), first.labels);

    let flipped = augment(&first.images, &mut seed::rng(42, "augment", 0, 0));
    let moved = (&flipped - &first.images).mapv(f64::abs).sum() / flipped.len() as f64;
    println!("mean absolute change from crop+flip: {moved:.4}");

    let (rest, held) = train.holdout(0.1, 7);
    println!("holdout split: {} train, {} validation", rest.len(), held.len());
    Ok(())
}
