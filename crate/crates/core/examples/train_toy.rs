//! Trains MOREL-T and a natural control on the synthetic dataset and
//! prints the per-epoch history. Pass a directory to keep the artifacts.

use morel::attacks::{AttackSpec, InnerLoss, CIFAR_EPSILON};
use morel::data::{Split, SyntheticSpec};
use morel::nn::Architecture;
use morel::seed;
use morel::training::{fit, Objective, RunFiles, TrainConfig, TrainState};

fn main() -> morel::Result<()> {
    let out = std::env::args().nth(1);
    let spec = SyntheticSpec {
        per_class: 150,
        test_per_class: 20,
        ..Default::default()
    };
    let (train, val) = (spec.generate(Split::Train), spec.generate(Split::Test));
    let eps = CIFAR_EPSILON;

    for objective in [Objective::Natural, Objective::Morel] {
        let config = TrainConfig {
            objective,
            epochs: 4,
            lr_milestones: vec![3],
            lr_factor: 0.1,
            augment: false,
            train_attack: AttackSpec::pgd(eps, eps / 4.0, 5, true).with_inner_loss(InnerLoss::Kl),
            ..Default::default()
        };
        let model = Architecture::ToyCnn { width: 8 }.build(train.image_shape(), train.class_count(), &mut seed::rng(0, "init", 0, 0))?;
        let files = out
            .as_ref()
            .map(|d| RunFiles::new(format!("{d}/{objective}")))
            .transpose()?;
        let state = fit(TrainState::new(model, &config)?, &config, &train, &val, files.as_ref())?;
        println!("{objective}:");
        for r in &state.history {
            println!(
                "  epoch {}  L1 {:.4}  L2 {:.4}  clean {:5.1}%  PGD-20 {:5.1}%",
                r.epoch + 1,
                r.l1,
                r.l2,
                r.clean_acc,
                r.robust_acc
            );
        }
        println!(
            "  best {:.1}% at epoch {}",
            state.best_metric.unwrap_or(0.0),
            state.best_epoch.map_or(0, |e| e + 1)
        );
    }
    Ok(())
}
