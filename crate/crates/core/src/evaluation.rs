//! Clean, white-box and transfer (black-box) accuracy, plus report output.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use indexmap::IndexMap;
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::attacks::{self, AttackSpec, CIFAR_EPSILON};
use crate::data::LabeledImages;
use crate::error::{Error, Result};
use crate::nn::{DifferentiableClassifier, Network, Parameterized};
use crate::seed;

/// Images per forward pass during evaluation.
pub const EVAL_BATCH: usize = 250;

fn argmax_rows(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .axis_iter(Axis(0))
        .map(|r| {
            let mut best = 0;
            for (j, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn percent(correct: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * correct as f64 / total as f64
    }
}

fn chunks(n: usize) -> impl Iterator<Item = Vec<usize>> {
    (0..n)
        .step_by(EVAL_BATCH)
        .map(move |s| (s..(s + EVAL_BATCH).min(n)).collect())
}

/// Percentage of samples whose arg-max logit equals the label.
pub fn accuracy(model: &dyn DifferentiableClassifier, data: &LabeledImages) -> f64 {
    let mut correct = 0;
    for idx in chunks(data.len()) {
        let (x, y) = data.gather(&idx);
        correct += argmax_rows(&model.logits(&x))
            .iter()
            .zip(&y)
            .filter(|(p, t)| p == t)
            .count();
    }
    percent(correct, data.len())
}

/// Accuracy of `target` on adversarial examples crafted against `source`.
fn attacked_accuracy(
    source: &dyn DifferentiableClassifier,
    target: &dyn DifferentiableClassifier,
    data: &LabeledImages,
    spec: &AttackSpec,
    seed: u64,
) -> Result<f64> {
    spec.validate()?;
    let mut correct = 0;
    for (b, idx) in chunks(data.len()).enumerate() {
        let (x, y) = data.gather(&idx);
        let mut rng = seed::rng(seed, "eval-attack", b as u64, 0);
        let x_adv = attacks::generate(source, &x, &y, spec, &mut rng);
        correct += argmax_rows(&target.logits(&x_adv))
            .iter()
            .zip(&y)
            .filter(|(p, t)| p == t)
            .count();
    }
    Ok(percent(correct, data.len()))
}

/// White-box robust accuracy under `spec`.
pub fn robust_accuracy(
    model: &dyn DifferentiableClassifier,
    data: &LabeledImages,
    spec: &AttackSpec,
    seed: u64,
) -> Result<f64> {
    attacked_accuracy(model, model, data, spec, seed)
}

/// Transfer attack: examples are generated on `surrogate` and scored on
/// `target`. Rejects a surrogate with the same weights as the target.
pub fn black_box_eval(
    target: &Network,
    surrogate: &Network,
    data: &LabeledImages,
    specs: &[AttackSpec],
    seed: u64,
) -> Result<IndexMap<String, f64>> {
    if target.fingerprint() == surrogate.fingerprint() {
        return Err(Error::SurrogateIsTarget);
    }
    let mut out = IndexMap::new();
    for spec in specs {
        out.insert(spec.name(), attacked_accuracy(surrogate, target, data, spec, seed)?);
    }
    Ok(out)
}

/// `{FGSM, PGD-20, PGD-100, CW-inf}` at `ε`, PGD step `ε/10`.
pub fn default_suite(epsilon: f64) -> Vec<AttackSpec> {
    vec![
        AttackSpec::fgsm(epsilon),
        AttackSpec::pgd(epsilon, epsilon / 10.0, 20, false),
        AttackSpec::pgd(epsilon, epsilon / 10.0, 100, false),
        AttackSpec::cw_linf(epsilon),
    ]
}

pub fn cifar_suite() -> Vec<AttackSpec> {
    default_suite(CIFAR_EPSILON)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    Whitebox,
    Blackbox,
}

impl FromStr for EvalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whitebox" | "white-box" => Ok(EvalMode::Whitebox),
            "blackbox" | "black-box" => Ok(EvalMode::Blackbox),
            other => Err(Error::config("eval.mode", format!("unknown mode `{other}`"))),
        }
    }
}

impl fmt::Display for EvalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalMode::Whitebox => "whitebox",
            EvalMode::Blackbox => "blackbox",
        })
    }
}

/// Which checkpoint of a run a report describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Best,
    Last,
    Export,
}

impl FromStr for CheckpointKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "best" => Ok(CheckpointKind::Best),
            "last" => Ok(CheckpointKind::Last),
            "export" => Ok(CheckpointKind::Export),
            other => Err(Error::config("checkpoint_kind", format!("unknown kind `{other}`"))),
        }
    }
}

impl fmt::Display for CheckpointKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CheckpointKind::Best => "best",
            CheckpointKind::Last => "last",
            CheckpointKind::Export => "export",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub model_id: String,
    pub checkpoint_kind: CheckpointKind,
    pub mode: EvalMode,
    pub dataset: String,
    pub samples: usize,
    pub clean_acc: f64,
    pub per_attack: IndexMap<String, f64>,
    pub avg_robust: f64,
    pub attack_specs: IndexMap<String, AttackSpec>,
    /// Fingerprint of the surrogate in black-box mode.
    pub surrogate: Option<String>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl RobustnessReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Identifies the evaluated artifact in a report.
#[derive(Debug, Clone)]
pub struct ReportMeta {
    pub model_id: String,
    pub checkpoint_kind: CheckpointKind,
    pub dataset: String,
    pub seed: u64,
}

pub fn build_report(
    model: &Network,
    data: &LabeledImages,
    suite: &[AttackSpec],
    mode: EvalMode,
    surrogate: Option<&Network>,
    meta: &ReportMeta,
) -> Result<RobustnessReport> {
    if suite.is_empty() {
        return Err(Error::config("eval.suite", "attack suite is empty"));
    }
    let per_attack = match (mode, surrogate) {
        (EvalMode::Whitebox, _) => {
            let mut m = IndexMap::new();
            for spec in suite {
                m.insert(spec.name(), robust_accuracy(model, data, spec, meta.seed)?);
            }
            m
        }
        (EvalMode::Blackbox, Some(s)) => black_box_eval(model, s, data, suite, meta.seed)?,
        (EvalMode::Blackbox, None) => {
            return Err(Error::Usage("black-box evaluation needs a surrogate checkpoint".into()))
        }
    };
    let attack_specs = suite.iter().map(|s| (s.name(), *s)).collect();
    let timestamp = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    Ok(RobustnessReport {
        model_id: meta.model_id.clone(),
        checkpoint_kind: meta.checkpoint_kind,
        mode,
        dataset: meta.dataset.clone(),
        samples: data.len(),
        clean_acc: accuracy(model, data),
        avg_robust: mean(per_attack.values().copied()),
        per_attack,
        attack_specs,
        surrogate: surrogate.map(|s| s.fingerprint()),
        timestamp,
    })
}

/// One table row: a method with its best and (optionally) last report.
pub struct TableRow<'a> {
    pub method: String,
    pub best: &'a RobustnessReport,
    pub last: Option<&'a RobustnessReport>,
}

/// Writes rows = methods, column pairs = best/last for Clean, each attack
/// and Avg-Robust. Missing cells are left empty.
pub fn write_table(path: &Path, rows: &[TableRow<'_>]) -> Result<()> {
    let mut attacks: Vec<String> = Vec::new();
    for r in rows {
        for name in r.best.per_attack.keys() {
            if !attacks.contains(name) {
                attacks.push(name.clone());
            }
        }
    }
    let mut columns = vec!["Clean".to_string()];
    columns.extend(attacks.iter().cloned());
    columns.push("Avg-Robust".to_string());

    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["Method".to_string()];
    for c in &columns {
        header.push(format!("{c} (best)"));
        header.push(format!("{c} (last)"));
    }
    w.write_record(&header)?;
    let cell = |r: Option<&RobustnessReport>, col: &str| -> String {
        let v = r.and_then(|r| match col {
            "Clean" => Some(r.clean_acc),
            "Avg-Robust" => Some(r.avg_robust),
            name => r.per_attack.get(name).copied(),
        });
        v.map(|v| format!("{v:.2}")).unwrap_or_default()
    };
    for r in rows {
        let mut record = vec![r.method.clone()];
        for c in &columns {
            record.push(cell(Some(r.best), c));
            record.push(cell(r.last, c));
        }
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// A static SVG bar chart of clean, per-attack and average accuracy.
pub fn bar_chart_svg(report: &RobustnessReport) -> String {
    let mut bars = vec![("Clean".to_string(), report.clean_acc)];
    bars.extend(report.per_attack.iter().map(|(k, v)| (k.clone(), *v)));
    bars.push(("Avg-Robust".to_string(), report.avg_robust));
    let (bar_w, gap, height, top, bottom) = (60.0, 20.0, 200.0, 30.0, 40.0);
    let width = bars.len() as f64 * (bar_w + gap) + gap;
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"11\">\n",
        height + top + bottom
    );
    svg.push_str(&format!(
        "<text x=\"{gap}\" y=\"18\">{} ({}, {})</text>\n",
        report.model_id, report.checkpoint_kind, report.mode
    ));
    for (i, (name, v)) in bars.iter().enumerate() {
        let x = gap + i as f64 * (bar_w + gap);
        let h = height * v.clamp(0.0, 100.0) / 100.0;
        let y = top + height - h;
        svg.push_str(&format!(
            "<rect x=\"{x}\" y=\"{y:.1}\" width=\"{bar_w}\" height=\"{h:.1}\" fill=\"#4a78b5\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{v:.1}</text>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{name}</text>\n",
            x + bar_w / 2.0,
            y - 4.0,
            x + bar_w / 2.0,
            top + height + 16.0
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
