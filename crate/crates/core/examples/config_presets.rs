//! Merges a preset, a config document and overrides, then prints the
//! effective configuration.

use morel::config::{parse_document, parse_override, EffectiveConfig, Preset};

fn main() -> morel::Result<()> {
    let mut c = EffectiveConfig::new();
    c.apply_preset(Preset::MorelM)?;
    c.merge(&parse_document(
        "[data]\ndataset = \"synthetic\"\n[train]\nepochs = 5\nlr_milestones = [3]\n",
    )?)?;
    c.merge(&[parse_override("train_attack.epsilon=4/255")?])?;
    let run = c.resolve()?;
    println!("# preset {}, objective {}", run.preset, run.train.objective);
    print!("{}", c.to_toml());

    if let Err(e) = c.merge(&[parse_override("train.learning_rate=0.1")?]) {
        println!("# rejected: {e}");
    }
    Ok(())
}
