//! White-box and black-box robustness reports for a briefly trained model,
//! written as JSON, a results table and an SVG chart into a temp directory.

use morel::attacks::{AttackSpec, CIFAR_EPSILON};
use morel::data::{Split, SyntheticSpec};
use morel::evaluation::{bar_chart_svg, build_report, write_table, CheckpointKind, EvalMode, ReportMeta, TableRow};
use morel::nn::Architecture;
use morel::seed;
use morel::training::{fit, Objective, TrainConfig, TrainState};

fn main() -> morel::Result<()> {
    let spec = SyntheticSpec {
        per_class: 120,
        test_per_class: 10,
        ..Default::default()
    };
    let (train, test) = (spec.generate(Split::Train), spec.generate(Split::Test));
    let trained = |objective, root| -> morel::Result<_> {
        let config = TrainConfig {
            objective,
            epochs: 3,
            lr_milestones: vec![],
            augment: false,
            seed: root,
            train_attack: AttackSpec::pgd(CIFAR_EPSILON, CIFAR_EPSILON / 4.0, 3, true),
            ..Default::default()
        };
        let model = Architecture::ToyCnn { width: 8 }.build(train.image_shape(), 10, &mut seed::rng(root, "init", 0, 0))?;
        Ok(fit(TrainState::new(model, &config)?, &config, &train, &test, None)?.model)
    };
    let target = trained(Objective::Adversarial, 0)?;
    let surrogate = trained(Objective::Natural, 1)?;

    let suite = [
        AttackSpec::fgsm(CIFAR_EPSILON),
        AttackSpec::pgd(CIFAR_EPSILON, CIFAR_EPSILON / 10.0, 20, false),
    ];
    let meta = ReportMeta {
        model_id: "trades-toy".into(),
        checkpoint_kind: CheckpointKind::Last,
        dataset: "synthetic".into(),
        seed: 0,
    };
    let white = build_report(&target, &test, &suite, EvalMode::Whitebox, None, &meta)?;
    let black = build_report(&target, &test, &suite, EvalMode::Blackbox, Some(&surrogate), &meta)?;
    for r in [&white, &black] {
        println!("{:<9} clean {:5.1}%  {:?}  avg {:5.1}%", r.mode.to_string(), r.clean_acc, r.per_attack, r.avg_robust);
    }

    let dir = std::env::temp_dir().join("morel-evaluate-example");
    std::fs::create_dir_all(&dir).map_err(|e| morel::Error::io(&dir, e))?;
    white.save(&dir.join("report.json"))?;
    let row = TableRow {
        method: "TRADES (toy)".into(),
        best: &white,
        last: Some(&black),
    };
    write_table(&dir.join("table.csv"), &[row])?;
    std::fs::write(dir.join("chart.svg"), bar_chart_svg(&white)).map_err(|e| morel::Error::io(&dir, e))?;
    println!("wrote {}", dir.display());
    Ok(())
}
