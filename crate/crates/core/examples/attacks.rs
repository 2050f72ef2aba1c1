//! FGSM, PGD and CW-inf against a freshly initialized toy CNN, checking that
//! every adversarial image stays in the ε-ball and the pixel domain.

use morel::attacks::{generate, AttackSpec, CIFAR_EPSILON};
use morel::data::{Split, SyntheticSpec};
use morel::evaluation::accuracy;
use morel::nn::{Architecture, DifferentiableClassifier};
use morel::seed;

fn main() -> morel::Result<()> {
    let data = SyntheticSpec {
        per_class: 4,
        ..Default::default()
    }
    .generate(Split::Train);
    let model = Architecture::ToyCnn { width: 8 }.build(data.image_shape(), data.class_count(), &mut seed::rng(1, "init", 0, 0))?;
    let (x, y) = data.gather(&(0..16).collect::<Vec<_>>());
    let eps = CIFAR_EPSILON;
    println!("clean accuracy of the untrained model: {:.1}%", accuracy(&model, &data));

    for spec in [
        AttackSpec::fgsm(eps),
        AttackSpec::pgd(eps, eps / 4.0, 10, true),
        AttackSpec::cw_linf(eps),
    ] {
        let x_adv = generate(&model, &x, &y, &spec, &mut seed::rng(1, "attack", 0, 0));
        let linf = (&x_adv - &x).iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let in_domain = x_adv.iter().all(|v| (0.0..=1.0).contains(v));
        let flips = model
            .logits(&x)
            .rows()
            .into_iter()
            .zip(model.logits(&x_adv).rows())
            .filter(|(a, b)| argmax(a.iter()) != argmax(b.iter()))
            .count();
        println!(
            "{:<7} max |δ| = {linf:.5} (ε = {eps:.5}), in [0,1]: {in_domain}, changed predictions: {flips}/16",
            spec.name()
        );
    }
    Ok(())
}

fn argmax<'a>(v: impl Iterator<Item = &'a f64>) -> usize {
    v.enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
        .0
}
