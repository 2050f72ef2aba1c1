use std::fs;

use morel::cli::{train_run, EFFECTIVE_CONFIG};
use morel::config::{parse_document, parse_override, EffectiveConfig};
use morel::nn::Parameterized;
use morel::training::{load_model, CheckpointFile};

fn tiny(extra: &[&str]) -> EffectiveConfig {
    let mut c = EffectiveConfig::new();
    let mut pairs: Vec<_> = [
        "data.dataset=synthetic",
        "data.synthetic.per_class=6",
        "data.synthetic.test_per_class=2",
        "model.width=4",
        "embedding.dim=16",
        "train.augment=false",
        "train.lr_milestones=[]",
        "train_attack.iterations=2",
        "eval_attack.iterations=2",
    ]
    .iter()
    .map(|s| parse_override(s).unwrap())
    .collect();
    pairs.extend(extra.iter().map(|s| parse_override(s).unwrap()));
    c.merge(&pairs).unwrap();
    c
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let (full, split) = (dir.path().join("full"), dir.path().join("split"));
    train_run(&tiny(&["train.epochs=2"]), &full, false).unwrap();
    train_run(&tiny(&["train.epochs=1"]), &split, false).unwrap();
    let resumed = train_run(&tiny(&["train.epochs=2"]), &split, true).unwrap();
    assert_eq!(resumed.epoch, 2);
    for f in ["epochs.csv", "history.csv"] {
        assert_eq!(
            fs::read_to_string(full.join(f)).unwrap(),
            fs::read_to_string(split.join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn echoed_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train_run(&tiny(&["train.epochs=1", "preset=morel-m", "train.seed=5"]), &a, false).unwrap();
    let echoed = fs::read_to_string(a.join(EFFECTIVE_CONFIG)).unwrap();
    let mut again = EffectiveConfig::new();
    again.merge(&parse_document(&echoed).unwrap()).unwrap();
    train_run(&again, &b, false).unwrap();
    for f in ["epochs.csv", "history.csv", EFFECTIVE_CONFIG] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs");
    }
    let weights = |d: &std::path::Path| load_model(&d.join("last.ckpt")).unwrap().fingerprint();
    assert_eq!(weights(&a), weights(&b));
}

#[test]
fn holdout_validation_and_natural_checkpoint_layout() {
    let dir = tempfile::tempdir().unwrap();
    let state = train_run(
        &tiny(&["train.epochs=1", "preset=natural", "data.val_source=holdout", "data.holdout_fraction=0.25"]),
        dir.path(),
        false,
    )
    .unwrap();
    assert_eq!(state.history[0].eval_samples, 15);
    assert!(state.embedding.is_none());
    let file = CheckpointFile::read(&dir.path().join("last.ckpt")).unwrap();
    assert!(file.has_group("model") && !file.has_group("embedding"));
}
