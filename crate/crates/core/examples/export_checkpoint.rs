//! Saves a MOREL training checkpoint, exports the classifier alone and
//! confirms the exported logits are bitwise identical.

use morel::data::{Split, SyntheticSpec};
use morel::nn::{Architecture, Parameterized};
use morel::seed;
use morel::training::{export_model, fit, load_model, save_checkpoint, CheckpointFile, TrainConfig, TrainState};

fn main() -> morel::Result<()> {
    let spec = SyntheticSpec {
        per_class: 8,
        test_per_class: 2,
        ..Default::default()
    };
    let (train, val) = (spec.generate(Split::Train), spec.generate(Split::Test));
    let config = TrainConfig {
        epochs: 1,
        lr_milestones: vec![],
        augment: false,
        ..Default::default()
    };
    let model = Architecture::ToyCnn { width: 8 }.build(train.image_shape(), 10, &mut seed::rng(0, "init", 0, 0))?;
    let state = fit(TrainState::new(model, &config)?, &config, &train, &val, None)?;

    let dir = tempfile_dir();
    let (full, slim) = (dir.join("last.ckpt"), dir.join("model.bin"));
    save_checkpoint(&state, Some(&config), &full)?;
    export_model(&state, Some(&config), &slim)?;

    let size = |p: &std::path::Path| std::fs::metadata(p).map(|m| m.len()).unwrap_or(0);
    println!("checkpoint {} bytes, export {} bytes", size(&full), size(&slim));
    let embedding_tensors = CheckpointFile::read(&slim)?
        .names()
        .filter(|n| n.starts_with("embedding/"))
        .count();
    println!("embedding tensors in export: {embedding_tensors}");

    let exported = load_model(&slim)?;
    let (x, _) = val.gather(&(0..val.len()).collect::<Vec<_>>());
    let same = state.model.forward(&x) == exported.forward(&x);
    println!("logits identical: {same}; fingerprint {}", exported.fingerprint());
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join("morel-export-example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    dir
}
