//! Robustness and accuracy objectives on random embeddings and logits.

use morel::losses::{accuracy_loss, robustness_loss, L2Variant, LossParams};
use morel::seed;
use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};

fn unit_rows(mut m: Array2<f64>) -> Array2<f64> {
    for mut r in m.rows_mut() {
        let n = r.dot(&r).sqrt();
        r /= n;
    }
    m
}

fn main() -> morel::Result<()> {
    let mut rng = seed::rng(5, "example", 0, 0);
    let mut normal = |shape| Array2::from_shape_simple_fn(shape, || StandardNormal.sample(&mut rng));
    let y = [0, 1, 0, 1, 2, 2];

    let t = unit_rows(normal((6, 16)));
    let noise: Array2<f64> = normal((6, 16));
    let t_adv = unit_rows(&t + &(noise * 0.3));
    let params = LossParams::default();
    let l1 = robustness_loss(&t, &t_adv, &y, &params)?;
    println!(
        "L1 = {:.5} (cosine {:.5} + α·contrastive {:.5})",
        l1.value,
        l1.cosine,
        params.alpha * l1.contrastive
    );

    let logits = normal((6, 3));
    let logits_adv = &logits + &normal((6, 3));
    for variant in [L2Variant::Trades, L2Variant::Mart] {
        let p = LossParams {
            l2_variant: variant,
            ..params
        };
        let l2 = accuracy_loss(&logits, &logits_adv, &y, &p);
        println!("L2 ({variant}) = {:.5}", l2.value);
    }
    Ok(())
}
