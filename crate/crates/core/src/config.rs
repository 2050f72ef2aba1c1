//! Declarative run configuration.
//!
//! Configs are TOML documents whose keys are dotted paths (`train.lr`,
//! `train_attack.epsilon`, ...); nested tables and dotted keys are
//! equivalent. A run's effective configuration is assembled in layers:
//! built-in defaults, then a named preset, then the config file, then
//! `--set key=value` overrides. Unknown keys are rejected. Real-valued keys
//! also accept fractions written as strings, e.g. `"8/255"`.
//!
//! [`EffectiveConfig::to_toml`] prints every key in sorted `key = value`
//! form, which is itself a valid config file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use toml::Value;

use crate::attacks::{AttackFamily, AttackSpec, InnerLoss};
use crate::data::{self, DatasetName, DatasetSource, LabeledImages, Split, SyntheticSpec};
use crate::error::{Error, Result};
use crate::evaluation::EvalMode;
use crate::losses::{ContrastiveInputs, KlDirection, L2Variant, LossParams};
use crate::nn::{Architecture, SgdConfig};
use crate::scalarization::ScalarizationParams;
use crate::training::{Objective, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    MorelT,
    MorelM,
    Trades,
    Mart,
    Natural,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::MorelT,
        Preset::MorelM,
        Preset::Trades,
        Preset::Mart,
        Preset::Natural,
    ];

    /// Keys a preset sets on top of the shared defaults.
    fn overrides(self) -> Vec<(&'static str, Value)> {
        let s = |v: &str| Value::String(v.to_string());
        match self {
            Preset::MorelT => vec![
                ("train.objective", s("morel")),
                ("loss.l2_variant", s("trades")),
                ("train_attack.inner_loss", s("kl")),
            ],
            Preset::MorelM => vec![
                ("train.objective", s("morel")),
                ("loss.l2_variant", s("mart")),
                ("train_attack.inner_loss", s("ce")),
            ],
            Preset::Trades => vec![
                ("train.objective", s("adversarial")),
                ("loss.l2_variant", s("trades")),
                ("train_attack.inner_loss", s("kl")),
            ],
            Preset::Mart => vec![
                ("train.objective", s("adversarial")),
                ("loss.l2_variant", s("mart")),
                ("train_attack.inner_loss", s("ce")),
            ],
            Preset::Natural => vec![("train.objective", s("natural"))],
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "morel-t" => Ok(Preset::MorelT),
            "morel-m" => Ok(Preset::MorelM),
            "trades" => Ok(Preset::Trades),
            "mart" => Ok(Preset::Mart),
            "natural" => Ok(Preset::Natural),
            other => Err(Error::config(
                "preset",
                format!("unknown preset `{other}` (expected morel-t, morel-m, trades, mart or natural)"),
            )),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::MorelT => "morel-t",
            Preset::MorelM => "morel-m",
            Preset::Trades => "trades",
            Preset::Mart => "mart",
            Preset::Natural => "natural",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Real,
    Int,
    Bool,
    Text,
    IntList,
    TextList,
}

/// Every accepted key with its type and default.
fn schema() -> Vec<(&'static str, Kind, Value)> {
    use Kind::*;
    let r = Value::Float;
    let i = Value::Integer;
    let s = |v: &str| Value::String(v.to_string());
    let eps = || s("8/255");
    let mut keys = vec![
        ("preset", Text, s("morel-t")),
        ("data.dataset", Text, s("cifar10")),
        ("data.root", Text, s("data")),
        ("data.train_limit", Int, i(0)),
        ("data.test_limit", Int, i(0)),
        ("data.subsample_seed", Int, i(0)),
        ("data.val_source", Text, s("test")),
        ("data.holdout_fraction", Real, r(0.1)),
        ("data.synthetic.classes", Int, i(10)),
        ("data.synthetic.per_class", Int, i(100)),
        ("data.synthetic.test_per_class", Int, i(20)),
        ("data.synthetic.channels", Int, i(3)),
        ("data.synthetic.height", Int, i(16)),
        ("data.synthetic.width", Int, i(16)),
        ("data.synthetic.signal", Real, r(0.15)),
        ("data.synthetic.noise", Real, r(0.1)),
        ("data.synthetic.seed", Int, i(0)),
        ("model.arch", Text, s("toy-cnn")),
        ("model.width", Int, i(16)),
        ("model.hidden", Int, i(256)),
        ("train.objective", Text, s("morel")),
        ("train.epochs", Int, i(100)),
        ("train.batch_size", Int, i(8)),
        ("train.lr", Real, r(0.01)),
        ("train.momentum", Real, r(0.9)),
        ("train.weight_decay", Real, r(1e-4)),
        ("train.lr_milestones", IntList, Value::Array(vec![i(75), i(90)])),
        ("train.lr_factor", Real, r(0.01)),
        ("train.augment", Bool, Value::Boolean(true)),
        ("train.eval_subsample", Int, i(0)),
        ("train.seed", Int, i(0)),
        ("loss.alpha", Real, r(1e-5)),
        ("loss.tau", Real, r(0.1)),
        ("loss.inv_lambda", Real, r(6.0)),
        ("loss.l2_variant", Text, s("trades")),
        ("loss.kl_direction", Text, s("natural_adversarial")),
        ("loss.contrastive_inputs", Text, s("concatenated")),
        ("scalarization.k1", Real, r(0.1)),
        ("scalarization.k2", Real, r(0.9)),
        ("scalarization.gamma", Real, r(2e-5)),
        ("scalarization.a1", Real, r(0.0)),
        ("scalarization.a2", Real, r(0.0)),
        ("scalarization.abs_mode", Bool, Value::Boolean(false)),
        ("embedding.dim", Int, i(128)),
        ("embedding.heads", Int, i(2)),
        ("eval.suite", TextList, Value::Array(vec![s("fgsm"), s("pgd-20"), s("pgd-100"), s("cw-inf")])),
        ("eval.epsilon", Real, eps()),
        ("eval.step_fraction", Real, r(0.1)),
        ("eval.cw_confidence", Real, r(1.0)),
        ("eval.cw_c", Real, r(15.0)),
        ("eval.cw_iterations", Int, i(10)),
        ("eval.cw_lr", Real, r(1e-2)),
        ("eval.mode", Text, s("whitebox")),
        ("eval.surrogate", Text, s("")),
        ("eval.limit", Int, i(0)),
    ];
    for (prefix, iterations, step, random_start, inner) in [
        ("train_attack", 10, "2/255", true, "kl"),
        ("eval_attack", 20, "0.8/255", false, "ce"),
    ] {
        let k = |name: &str| -> &'static str { Box::leak(format!("{prefix}.{name}").into_boxed_str()) };
        keys.extend([
            (k("family"), Text, s("pgd")),
            (k("epsilon"), Real, eps()),
            (k("step_size"), Real, s(step)),
            (k("iterations"), Int, i(iterations)),
            (k("random_start"), Bool, Value::Boolean(random_start)),
            (k("inner_loss"), Text, s(inner)),
            (k("confidence"), Real, r(1.0)),
            (k("c_const"), Real, r(15.0)),
            (k("lr"), Real, r(1e-2)),
        ]);
    }
    keys
}

fn parse_fraction(text: &str) -> Option<f64> {
    match text.split_once('/') {
        Some((a, b)) => {
            let (a, b): (f64, f64) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
            (b != 0.0).then_some(a / b)
        }
        None => text.trim().parse().ok(),
    }
}

/// Checks `value` against `kind` and normalizes it (fractions become floats,
/// integers in real-valued slots become floats).
fn coerce(key: &str, kind: Kind, value: Value) -> Result<Value> {
    let wrong = |what: &str| Error::config(key, format!("expected {what}, got `{value}`"));
    Ok(match (kind, &value) {
        (Kind::Real, Value::Float(f)) => Value::Float(*f),
        (Kind::Real, Value::Integer(n)) => Value::Float(*n as f64),
        (Kind::Real, Value::String(t)) => Value::Float(parse_fraction(t).ok_or_else(|| wrong("a number or fraction"))?),
        (Kind::Int, Value::Integer(n)) if *n >= 0 => value,
        (Kind::Bool, Value::Boolean(_)) => value,
        (Kind::Text, Value::String(_)) => value,
        (Kind::IntList, Value::Array(items)) if items.iter().all(|v| matches!(v, Value::Integer(n) if *n >= 0)) => value,
        (Kind::TextList, Value::Array(items)) if items.iter().all(Value::is_str) => value,
        (Kind::Real, _) => return Err(wrong("a number")),
        (Kind::Int, _) => return Err(wrong("a non-negative integer")),
        (Kind::Bool, _) => return Err(wrong("true or false")),
        (Kind::Text, _) => return Err(wrong("a string")),
        (Kind::IntList, _) => return Err(wrong("a list of non-negative integers")),
        (Kind::TextList, _) => return Err(wrong("a list of strings")),
    })
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => out.push((key, other.clone())),
        }
    }
}

/// Flat key-value pairs from a TOML document.
pub fn parse_document(text: &str) -> Result<Vec<(String, Value)>> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::config("<file>", e.to_string()))?;
    let mut out = Vec::new();
    flatten("", &table, &mut out);
    Ok(out)
}

/// Parses one `key=value` override. The value is read as a TOML value and
/// falls back to a bare string (`--set data.dataset=synthetic`).
pub fn parse_override(text: &str) -> Result<(String, Value)> {
    let (key, raw) = text
        .split_once('=')
        .ok_or_else(|| Error::Usage(format!("override `{text}` is not of the form key=value")))?;
    let key = key.trim().to_string();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    Ok((key, value))
}

/// The merged flat configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveConfig {
    values: BTreeMap<String, Value>,
    kinds: BTreeMap<String, Kind>,
}

impl EffectiveConfig {
    /// Built-in defaults with the default preset applied.
    pub fn new() -> Self {
        let mut values = BTreeMap::new();
        let mut kinds = BTreeMap::new();
        for (k, kind, v) in schema() {
            let v = coerce(k, kind, v).expect("schema defaults are well-typed");
            values.insert(k.to_string(), v);
            kinds.insert(k.to_string(), kind);
        }
        let mut c = Self { values, kinds };
        c.apply_preset(Preset::MorelT).expect("built-in preset");
        c
    }

    pub fn set(&mut self, key: &str, value: Value) -> Result<()> {
        let kind = *self
            .kinds
            .get(key)
            .ok_or_else(|| Error::config(key, "unknown configuration key"))?;
        let v = coerce(key, kind, value)?;
        if key == "preset" {
            let preset: Preset = v.as_str().expect("text").parse()?;
            self.apply_preset(preset)?;
        }
        self.values.insert(key.to_string(), v);
        Ok(())
    }

    pub fn apply_preset(&mut self, preset: Preset) -> Result<()> {
        self.values
            .insert("preset".into(), Value::String(preset.to_string()));
        for (k, v) in preset.overrides() {
            self.values.insert(k.to_string(), v);
        }
        Ok(())
    }

    /// Applies pairs in order. A `preset` key in the batch is applied first so
    /// that explicit keys next to it win.
    pub fn merge(&mut self, pairs: &[(String, Value)]) -> Result<()> {
        if let Some((_, v)) = pairs.iter().find(|(k, _)| k == "preset") {
            self.set("preset", v.clone())?;
        }
        for (k, v) in pairs.iter().filter(|(k, _)| k != "preset") {
            self.set(k, v.clone())?;
        }
        Ok(())
    }

    pub fn merge_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let pairs = parse_document(&text).map_err(|e| match e {
            Error::Config { message, .. } => Error::config(path.display().to_string(), message),
            other => other,
        })?;
        self.merge(&pairs)
    }

    pub fn get(&self, key: &str) -> Option<&Value> {
        self.values.get(key)
    }

    fn real(&self, key: &str) -> f64 {
        self.values[key].as_float().expect("coerced to float")
    }

    fn int(&self, key: &str) -> usize {
        self.values[key].as_integer().expect("coerced to integer") as usize
    }

    fn flag(&self, key: &str) -> bool {
        self.values[key].as_bool().expect("boolean")
    }

    fn text(&self, key: &str) -> &str {
        self.values[key].as_str().expect("string")
    }

    fn parsed<T: FromStr<Err = Error>>(&self, key: &str) -> Result<T> {
        self.text(key).parse().map_err(|e| match e {
            Error::Config { message, .. } => Error::config(key, message),
            other => other,
        })
    }

    /// Sorted `key = value` lines; parseable as a config file.
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    fn attack(&self, prefix: &str) -> Result<AttackSpec> {
        let k = |name: &str| format!("{prefix}.{name}");
        let spec = AttackSpec {
            family: self.parsed::<AttackFamily>(&k("family"))?,
            epsilon: self.real(&k("epsilon")),
            step_size: self.real(&k("step_size")),
            iterations: self.int(&k("iterations")),
            random_start: self.flag(&k("random_start")),
            inner_loss: self.parsed::<InnerLoss>(&k("inner_loss"))?,
            confidence: self.real(&k("confidence")),
            c_const: self.real(&k("c_const")),
            lr: self.real(&k("lr")),
        };
        spec.validate().map_err(|e| match e {
            Error::Config { field, message } => Error::config(k(&field), message),
            other => other,
        })?;
        Ok(spec)
    }

    fn suite(&self) -> Result<Vec<AttackSpec>> {
        let eps = self.real("eval.epsilon");
        let step = eps * self.real("eval.step_fraction");
        let names = self.values["eval.suite"].as_array().expect("list");
        if names.is_empty() {
            return Err(Error::config("eval.suite", "attack suite is empty"));
        }
        names
            .iter()
            .map(|n| {
                let name = n.as_str().expect("string").to_ascii_lowercase();
                if name == "fgsm" {
                    Ok(AttackSpec::fgsm(eps))
                } else if name == "cw-inf" || name == "cw" {
                    Ok(AttackSpec {
                        confidence: self.real("eval.cw_confidence"),
                        c_const: self.real("eval.cw_c"),
                        iterations: self.int("eval.cw_iterations"),
                        lr: self.real("eval.cw_lr"),
                        ..AttackSpec::cw_linf(eps)
                    })
                } else if let Some(n) = name.strip_prefix("pgd-").and_then(|n| n.parse().ok()) {
                    Ok(AttackSpec::pgd(eps, step, n, false))
                } else {
                    Err(Error::config(
                        "eval.suite",
                        format!("unknown attack `{name}` (expected fgsm, pgd-N or cw-inf)"),
                    ))
                }
            })
            .collect()
    }

    /// Typed view of the configuration; validates every section.
    pub fn resolve(&self) -> Result<RunConfig> {
        let preset: Preset = self.parsed("preset")?;
        let name: DatasetName = self.text("data.dataset").parse()?;
        let root = PathBuf::from(self.text("data.root"));
        let source = match name {
            DatasetName::Cifar10 => DatasetSource::Cifar10 { root },
            DatasetName::Cifar100 => DatasetSource::Cifar100 { root },
            DatasetName::Synthetic => DatasetSource::Synthetic(SyntheticSpec {
                classes: self.int("data.synthetic.classes"),
                per_class: self.int("data.synthetic.per_class"),
                test_per_class: self.int("data.synthetic.test_per_class"),
                channels: self.int("data.synthetic.channels"),
                height: self.int("data.synthetic.height"),
                width: self.int("data.synthetic.width"),
                signal: self.real("data.synthetic.signal"),
                noise: self.real("data.synthetic.noise"),
                seed: self.int("data.synthetic.seed") as u64,
            }),
        };
        let val_source = match self.text("data.val_source") {
            "test" => ValSource::Test,
            "holdout" => {
                let f = self.real("data.holdout_fraction");
                if !(f > 0.0 && f < 1.0) {
                    return Err(Error::config("data.holdout_fraction", "must be in (0, 1)"));
                }
                ValSource::Holdout(f)
            }
            other => {
                return Err(Error::config(
                    "data.val_source",
                    format!("expected test or holdout, got `{other}`"),
                ))
            }
        };
        let data = DataConfig {
            source,
            train_limit: self.int("data.train_limit"),
            test_limit: self.int("data.test_limit"),
            subsample_seed: self.int("data.subsample_seed") as u64,
            val_source,
        };

        let arch = match self.text("model.arch") {
            "toy-cnn" => Architecture::ToyCnn {
                width: self.int("model.width"),
            },
            "mlp" => Architecture::Mlp {
                hidden: self.int("model.hidden"),
            },
            "linear" => Architecture::Linear,
            other => {
                return Err(Error::config(
                    "model.arch",
                    format!("unknown architecture `{other}` (expected toy-cnn, mlp or linear)"),
                ))
            }
        };

        let train = TrainConfig {
            objective: self.parsed::<Objective>("train.objective")?,
            epochs: self.int("train.epochs"),
            batch_size: self.int("train.batch_size"),
            optimizer: SgdConfig {
                lr: self.real("train.lr"),
                momentum: self.real("train.momentum"),
                weight_decay: self.real("train.weight_decay"),
            },
            lr_milestones: self.values["train.lr_milestones"]
                .as_array()
                .expect("list")
                .iter()
                .map(|v| v.as_integer().expect("integer") as usize)
                .collect(),
            lr_factor: self.real("train.lr_factor"),
            train_attack: self.attack("train_attack")?,
            eval_attack: self.attack("eval_attack")?,
            loss: LossParams {
                alpha: self.real("loss.alpha"),
                tau: self.real("loss.tau"),
                inv_lambda: self.real("loss.inv_lambda"),
                l2_variant: self.parsed::<L2Variant>("loss.l2_variant")?,
                kl_direction: self.parsed::<KlDirection>("loss.kl_direction")?,
                contrastive_inputs: self.parsed::<ContrastiveInputs>("loss.contrastive_inputs")?,
            },
            scalarization: ScalarizationParams {
                k1: self.real("scalarization.k1"),
                k2: self.real("scalarization.k2"),
                gamma: self.real("scalarization.gamma"),
                a1: self.real("scalarization.a1"),
                a2: self.real("scalarization.a2"),
                abs_mode: self.flag("scalarization.abs_mode"),
            },
            embed_dim: self.int("embedding.dim"),
            heads: self.int("embedding.heads"),
            augment: self.flag("train.augment"),
            eval_subsample: self.int("train.eval_subsample"),
            seed: self.int("train.seed") as u64,
        };
        train.validate()?;

        let surrogate = self.text("eval.surrogate");
        let eval = EvalConfig {
            suite: self.suite()?,
            mode: self.parsed("eval.mode")?,
            surrogate: (!surrogate.is_empty()).then(|| PathBuf::from(surrogate)),
            limit: self.int("eval.limit"),
        };
        Ok(RunConfig {
            preset,
            data,
            arch,
            train,
            eval,
        })
    }
}

impl Default for EffectiveConfig {
    fn default() -> Self {
        Self::new()
    }
}

/// Which split drives per-epoch model selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ValSource {
    Test,
    /// A seeded fraction of the training set, removed from training.
    Holdout(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub source: DatasetSource,
    /// 0 keeps the full split.
    pub train_limit: usize,
    pub test_limit: usize,
    pub subsample_seed: u64,
    pub val_source: ValSource,
}

impl DataConfig {
    /// Training and validation sets after subsampling.
    pub fn load_train_val(&self) -> Result<(LabeledImages, LabeledImages)> {
        let train = data::load_dataset(&self.source, Split::Train)?.subsample(self.train_limit, self.subsample_seed);
        match self.val_source {
            ValSource::Test => Ok((train, self.load_test()?)),
            ValSource::Holdout(f) => Ok(train.holdout(f, self.subsample_seed)),
        }
    }

    pub fn load_test(&self) -> Result<LabeledImages> {
        Ok(data::load_dataset(&self.source, Split::Test)?.subsample(self.test_limit, self.subsample_seed))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub suite: Vec<AttackSpec>,
    pub mode: EvalMode,
    pub surrogate: Option<PathBuf>,
    /// Evaluate on at most this many test samples (0 = all).
    pub limit: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    pub data: DataConfig,
    pub arch: Architecture,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::CIFAR_EPSILON;

    fn resolved(pairs: &[&str]) -> Result<RunConfig> {
        let mut c = EffectiveConfig::new();
        let pairs: Vec<_> = pairs.iter().map(|p| parse_override(p).unwrap()).collect();
        c.merge(&pairs)?;
        c.resolve()
    }

    #[test]
    fn morel_t_preset_values() {
        let r = resolved(&[]).unwrap();
        let t = &r.train;
        assert_eq!(r.preset, Preset::MorelT);
        assert_eq!(t.objective, Objective::Morel);
        assert_eq!((t.epochs, t.batch_size), (100, 8));
        assert_eq!((t.optimizer.lr, t.optimizer.momentum, t.optimizer.weight_decay), (0.01, 0.9, 1e-4));
        assert_eq!(t.lr_milestones, vec![75, 90]);
        let s = &t.scalarization;
        assert_eq!((s.k1, s.k2, s.gamma, s.a1, s.a2), (0.1, 0.9, 2e-5, 0.0, 0.0));
        assert_eq!((t.loss.alpha, t.loss.inv_lambda), (1e-5, 6.0));
        assert_eq!((t.embed_dim, t.heads), (128, 2));
        assert_eq!(t.loss.l2_variant, L2Variant::Trades);
        let a = &t.train_attack;
        assert_eq!((a.family, a.iterations, a.random_start), (AttackFamily::Pgd, 10, true));
        assert_eq!(a.epsilon, CIFAR_EPSILON);
        assert!((a.step_size - CIFAR_EPSILON / 4.0).abs() < 1e-15);
        assert_eq!(t.eval_attack.iterations, 20);
        assert!((t.eval_attack.step_size - CIFAR_EPSILON / 10.0).abs() < 1e-15);
        let names: Vec<String> = r.eval.suite.iter().map(AttackSpec::name).collect();
        assert_eq!(names, ["FGSM", "PGD-20", "PGD-100", "CW-inf"]);
        let cw = r.eval.suite[3];
        assert_eq!((cw.confidence, cw.c_const, cw.iterations, cw.lr), (1.0, 15.0, 10, 1e-2));
    }

    #[test]
    fn presets_select_objective_and_losses() {
        let m = resolved(&["preset=\"morel-m\""]).unwrap();
        assert_eq!(m.train.loss.l2_variant, L2Variant::Mart);
        assert_eq!(m.train.train_attack.inner_loss, InnerLoss::Ce);
        let n = resolved(&["preset=natural"]).unwrap();
        assert_eq!(n.train.objective, Objective::Natural);
        let t = resolved(&["preset=trades"]).unwrap();
        assert_eq!(t.train.objective, Objective::Adversarial);
        // explicit keys beat the preset regardless of order
        let o = resolved(&["loss.l2_variant=mart", "preset=morel-t"]).unwrap();
        assert_eq!(o.train.loss.l2_variant, L2Variant::Mart);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let e = resolved(&["train.learning_rate=0.1"]).unwrap_err();
        assert!(matches!(e, Error::Config { ref field, .. } if field == "train.learning_rate"));
        assert!(resolved(&["train.lr=fast"]).is_err());
        assert!(resolved(&["scalarization.gamma=0.5"]).is_err());
        assert!(resolved(&["train.epochs=10"]).is_err());
        assert!(resolved(&["train.epochs=10", "train.lr_milestones=[]"]).is_ok());
        assert!(resolved(&["data.dataset=imagenet"]).is_err());
        assert!(resolved(&["eval.suite=[\"pgd-x\"]"]).is_err());
    }

    #[test]
    fn fractions_and_nested_tables() {
        let doc = "preset = \"mart\"\n[train_attack]\nepsilon = \"4/255\"\n[train]\nepochs = 3\nlr_milestones = [2]\n";
        let mut c = EffectiveConfig::new();
        c.merge(&parse_document(doc).unwrap()).unwrap();
        let r = c.resolve().unwrap();
        assert!((r.train.train_attack.epsilon - 4.0 / 255.0).abs() < 1e-15);
        assert_eq!(r.train.epochs, 3);
        assert_eq!(r.preset, Preset::Mart);
    }

    #[test]
    fn echo_round_trips() {
        let mut c = EffectiveConfig::new();
        c.merge(&[parse_override("train.lr=0.05").unwrap(), parse_override("preset=morel-m").unwrap()])
            .unwrap();
        let text = c.to_toml();
        let mut back = EffectiveConfig::new();
        back.merge(&parse_document(&text).unwrap()).unwrap();
        assert_eq!(back, c);
        let keys: Vec<&str> = text.lines().map(|l| l.split(" = ").next().unwrap()).collect();
        let mut sorted = keys.clone();
        sorted.sort_unstable();
        assert_eq!(keys, sorted);
    }
}
