//! The training loop.
//!
//! One step: craft adversarial inputs against the current (frozen) model,
//! encode both batches, send the features through the embedding space, compute
//! the robustness loss L1 and the accuracy loss L2, scalarize, and take one SGD
//! step over model and embedding parameters together.
//!
//! Every random draw comes from a stream derived from `(seed, epoch, step)`,
//! so a run resumed from an epoch checkpoint continues exactly like an
//! uninterrupted one.

mod checkpoint;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::Array4;
use serde::{Deserialize, Serialize};

use crate::attacks::{self, AttackSpec, InnerLoss, CIFAR_EPSILON};
use crate::data::{self, BatchPlan, LabeledImages};
use crate::embedding::{EmbeddingConfig, EmbeddingSpace};
use crate::error::{Error, Result};
use crate::evaluation;
use crate::losses::{self, LossParams};
use crate::nn::{Gradients, Network, Parameterized, Sgd, SgdConfig};
use crate::scalarization::{conic_scalarize, scalarization_weights, ScalarizationParams};
use crate::seed;

pub use checkpoint::{
    export_model, load_checkpoint, load_model, save_checkpoint, CheckpointFile, CheckpointHeader, FileKind,
    FORMAT_VERSION,
};

/// What a run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    /// Cross-entropy on clean inputs only.
    Natural,
    /// L2 (TRADES or MART) on natural/adversarial pairs, no embedding space.
    Adversarial,
    /// Conic scalarization of L1 and L2.
    Morel,
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "natural" => Ok(Objective::Natural),
            "adversarial" => Ok(Objective::Adversarial),
            "morel" => Ok(Objective::Morel),
            other => Err(Error::config("train.objective", format!("unknown objective `{other}`"))),
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::Natural => "natural",
            Objective::Adversarial => "adversarial",
            Objective::Morel => "morel",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: SgdConfig,
    /// 1-based epochs at which the learning rate is multiplied by `lr_factor`.
    pub lr_milestones: Vec<usize>,
    pub lr_factor: f64,
    pub train_attack: AttackSpec,
    /// Attack used for per-epoch model selection.
    pub eval_attack: AttackSpec,
    pub loss: LossParams,
    pub scalarization: ScalarizationParams,
    pub embed_dim: usize,
    pub heads: usize,
    pub augment: bool,
    /// Evaluate on at most this many validation samples per epoch (0 = all).
    pub eval_subsample: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let eps = CIFAR_EPSILON;
        Self {
            objective: Objective::Morel,
            epochs: 100,
            batch_size: 8,
            optimizer: SgdConfig {
                lr: 0.01,
                momentum: 0.9,
                weight_decay: 1e-4,
            },
            lr_milestones: vec![75, 90],
            lr_factor: 0.01,
            train_attack: AttackSpec::pgd(eps, eps / 4.0, 10, true).with_inner_loss(InnerLoss::Kl),
            eval_attack: AttackSpec::pgd(eps, eps / 10.0, 20, false),
            loss: LossParams::default(),
            scalarization: ScalarizationParams::default(),
            embed_dim: 128,
            heads: 2,
            augment: true,
            eval_subsample: 0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("train.epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be >= 1"));
        }
        let o = &self.optimizer;
        if !(o.lr >= 0.0 && o.lr.is_finite()) {
            return Err(Error::config("train.lr", "must be finite and >= 0"));
        }
        if !(0.0..1.0).contains(&o.momentum) {
            return Err(Error::config("train.momentum", "must be in [0, 1)"));
        }
        if !(o.weight_decay >= 0.0) {
            return Err(Error::config("train.weight_decay", "must be >= 0"));
        }
        if !(self.lr_factor > 0.0) {
            return Err(Error::config("train.lr_factor", "must be > 0"));
        }
        let ms = &self.lr_milestones;
        if ms.windows(2).any(|w| w[0] >= w[1]) || ms.first() == Some(&0) {
            return Err(Error::config(
                "train.lr_milestones",
                "must be strictly increasing and >= 1",
            ));
        }
        if let Some(&m) = ms.iter().find(|&&m| m >= self.epochs) {
            return Err(Error::config(
                "train.lr_milestones",
                format!("milestone {m} is not below train.epochs = {}", self.epochs),
            ));
        }
        self.train_attack.validate()?;
        self.eval_attack.validate()?;
        if self.objective != Objective::Natural {
            self.loss.validate()?;
        }
        if self.objective == Objective::Morel {
            self.scalarization.validate()?;
            EmbeddingConfig::new(1, self.embed_dim, self.heads)?;
        }
        Ok(())
    }
}

/// Learning rate for a 0-based `epoch`: the initial rate times `lr_factor`
/// for every milestone `m` with `epoch + 1 >= m`.
pub fn lr_at_epoch(epoch: usize, config: &TrainConfig) -> f64 {
    let passed = config.lr_milestones.iter().filter(|&&m| epoch + 1 >= m).count();
    config.optimizer.lr * config.lr_factor.powi(passed as i32)
}

/// One row of the per-step history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub l1: f64,
    pub l2: f64,
    pub scalarized: f64,
    pub lr: f64,
}

/// One row of the per-epoch history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l1: f64,
    pub l2: f64,
    pub scalarized: f64,
    pub clean_acc: f64,
    pub robust_acc: f64,
    pub eval_samples: usize,
    pub subsampled: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    pub model: Network,
    pub embedding: Option<EmbeddingSpace>,
    pub optimizer: Sgd,
    /// Highest per-epoch robust accuracy so far.
    pub best_metric: Option<f64>,
    pub best_epoch: Option<usize>,
    pub best_checkpoint: Option<PathBuf>,
    pub history: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
}

impl TrainState {
    /// Fresh state around `model`; the embedding space is created (seeded
    /// from `config.seed`) only for the MOREL objective.
    pub fn new(model: Network, config: &TrainConfig) -> Result<Self> {
        let embedding = if config.objective == Objective::Morel {
            let cfg = EmbeddingConfig::new(model.feature_dim(), config.embed_dim, config.heads)?;
            Some(EmbeddingSpace::new(cfg, &mut seed::rng(config.seed, "embedding-init", 0, 0))?)
        } else {
            None
        };
        Ok(Self {
            epoch: 0,
            model,
            embedding,
            optimizer: Sgd::new(config.optimizer),
            best_metric: None,
            best_epoch: None,
            best_checkpoint: None,
            history: Vec::new(),
            steps: Vec::new(),
        })
    }
}

/// Losses of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub l1: f64,
    pub l2: f64,
    pub scalarized: f64,
    /// False when the reference point is not below both losses.
    pub reference_ok: bool,
}

/// Losses and full parameter gradients (model first, then embedding) for
/// one batch. `x_adv` is required for every objective except natural.
pub fn loss_and_gradients(
    model: &Network,
    embedding: Option<&EmbeddingSpace>,
    config: &TrainConfig,
    x: &Array4<f64>,
    x_adv: Option<&Array4<f64>>,
    y: &[usize],
) -> Result<(StepMetrics, Gradients)> {
    let (z, tape) = model.encode_with_tape(x);
    let logits = model.classify(&z);
    let need_adv = || x_adv.ok_or_else(|| Error::InvalidData("adversarial batch missing".into()));
    match config.objective {
        Objective::Natural => {
            let l2 = losses::cross_entropy(&logits, y);
            let grads = model.backward(&tape, &z, &losses::cross_entropy_grad(&logits, y), None);
            let metrics = StepMetrics {
                l1: 0.0,
                l2,
                scalarized: l2,
                reference_ok: true,
            };
            Ok((metrics, grads))
        }
        Objective::Adversarial => {
            let (za, tape_a) = model.encode_with_tape(need_adv()?);
            let logits_a = model.classify(&za);
            let acc = losses::accuracy_loss(&logits, &logits_a, y, &config.loss);
            let mut grads = model.backward(&tape, &z, &acc.grad_nat, None);
            grads.add_assign(&model.backward(&tape_a, &za, &acc.grad_adv, None));
            let metrics = StepMetrics {
                l1: 0.0,
                l2: acc.value,
                scalarized: acc.value,
                reference_ok: true,
            };
            Ok((metrics, grads))
        }
        Objective::Morel => {
            let emb = embedding.ok_or_else(|| Error::InvalidData("MOREL training needs an embedding space".into()))?;
            let (za, tape_a) = model.encode_with_tape(need_adv()?);
            let logits_a = model.classify(&za);

            let (t, path) = emb.forward_path(&z, y)?;
            let (ta, path_a) = emb.forward_path(&za, y)?;
            let rob = losses::robustness_loss(&t, &ta, y, &config.loss)?;
            let acc = losses::accuracy_loss(&logits, &logits_a, y, &config.loss);
            let sc = &config.scalarization;
            let scalarized = conic_scalarize(rob.value, acc.value, sc);
            let (w1, w2) = scalarization_weights(rob.value, acc.value, sc);

            let mut emb_grads = Gradients::zeros_like(emb);
            let dz = emb.backward_path(&path, &(rob.grad_t * w1), &mut emb_grads);
            let dza = emb.backward_path(&path_a, &(rob.grad_t_adv * w1), &mut emb_grads);
            let mut grads = model.backward(&tape, &z, &(acc.grad_nat * w2), Some(&dz));
            grads.add_assign(&model.backward(&tape_a, &za, &(acc.grad_adv * w2), Some(&dza)));
            grads.0.extend(emb_grads.0);
            let metrics = StepMetrics {
                l1: rob.value,
                l2: acc.value,
                scalarized,
                reference_ok: sc.reference_dominated(rob.value, acc.value),
            };
            Ok((metrics, grads))
        }
    }
}

/// One optimization step on a batch; `batch` is the step index used in
/// error messages and seeds.
pub fn train_step(
    state: &mut TrainState,
    config: &TrainConfig,
    x: &Array4<f64>,
    y: &[usize],
    epoch: usize,
    batch: usize,
) -> Result<StepMetrics> {
    let x_adv = match config.objective {
        Objective::Natural => None,
        _ => {
            let mut rng = seed::rng(config.seed, "train-attack", epoch as u64, batch as u64);
            Some(attacks::pgd(&state.model, x, y, &config.train_attack, &mut rng))
        }
    };
    let (metrics, grads) = loss_and_gradients(
        &state.model,
        state.embedding.as_ref(),
        config,
        x,
        x_adv.as_ref(),
        y,
    )?;
    let finite = metrics.l1.is_finite() && metrics.l2.is_finite() && metrics.scalarized.is_finite();
    if !finite || !grads.is_finite() {
        return Err(Error::NonFiniteLoss {
            batch,
            robustness: metrics.l1,
            accuracy: metrics.l2,
            scalarized: metrics.scalarized,
        });
    }
    let lr = lr_at_epoch(epoch, config);
    let TrainState {
        model,
        embedding,
        optimizer,
        ..
    } = state;
    let mut params = model.param_slices_mut();
    if let Some(e) = embedding.as_mut() {
        params.extend(e.param_slices_mut());
    }
    optimizer.step(params, &grads, lr);
    Ok(metrics)
}

/// Runs one epoch of steps and returns its step records.
pub fn run_epoch(state: &mut TrainState, config: &TrainConfig, train: &LabeledImages) -> Result<Vec<StepRecord>> {
    let epoch = state.epoch;
    let plan = BatchPlan::new(config.batch_size, true, seed::derive(config.seed, "shuffle", epoch as u64, 0))?;
    let lr = lr_at_epoch(epoch, config);
    let mut records = Vec::new();
    let mut warned = false;
    for (step, indices) in plan.order(train.len()).into_iter().enumerate() {
        let (mut x, y) = train.gather(&indices);
        if config.augment {
            x = data::augment(&x, &mut seed::rng(config.seed, "augment", epoch as u64, step as u64));
        }
        let m = train_step(state, config, &x, &y, epoch, step)?;
        if !m.reference_ok && !warned {
            log::warn!(
                "epoch {epoch}: reference point a is not below the losses (L1 = {:.4}, L2 = {:.4})",
                m.l1,
                m.l2
            );
            warned = true;
        }
        records.push(StepRecord {
            epoch,
            step,
            l1: m.l1,
            l2: m.l2,
            scalarized: m.scalarized,
            lr,
        });
    }
    Ok(records)
}

fn epoch_means(records: &[StepRecord]) -> (f64, f64, f64) {
    let mean = |f: fn(&StepRecord) -> f64| evaluation::mean(records.iter().map(f));
    (mean(|r| r.l1), mean(|r| r.l2), mean(|r| r.scalarized))
}

/// Where `fit` writes its artifacts.
#[derive(Debug, Clone)]
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    pub fn best(&self) -> PathBuf {
        self.dir.join("best.ckpt")
    }

    pub fn last(&self) -> PathBuf {
        self.dir.join("last.ckpt")
    }

    pub fn history(&self) -> PathBuf {
        self.dir.join("history.csv")
    }

    pub fn epochs(&self) -> PathBuf {
        self.dir.join("epochs.csv")
    }
}

/// Trains from `state.epoch` up to `config.epochs`. After every epoch the
/// model is scored with `config.eval_attack` on `val`; a strictly better
/// score replaces the best checkpoint (ties keep the earlier epoch). With
/// `files`, checkpoints and history files are rewritten every epoch.
pub fn fit(
    mut state: TrainState,
    config: &TrainConfig,
    train: &LabeledImages,
    val: &LabeledImages,
    files: Option<&RunFiles>,
) -> Result<TrainState> {
    config.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidData("training and validation sets must be non-empty".into()));
    }
    let val_eval = val.subsample(config.eval_subsample, config.seed);
    let subsampled = val_eval.len() < val.len();
    while state.epoch < config.epochs {
        let epoch = state.epoch;
        let records = run_epoch(&mut state, config, train)?;
        let (l1, l2, scalarized) = epoch_means(&records);
        state.steps.extend(records);
        let clean_acc = evaluation::accuracy(&state.model, &val_eval);
        let robust_acc = evaluation::robust_accuracy(
            &state.model,
            &val_eval,
            &config.eval_attack,
            seed::derive(config.seed, "epoch-eval", epoch as u64, 0),
        )?;
        state.history.push(EpochRecord {
            epoch,
            l1,
            l2,
            scalarized,
            clean_acc,
            robust_acc,
            eval_samples: val_eval.len(),
            subsampled,
        });
        state.epoch += 1;
        log::info!(
            "epoch {}/{}: L1 {l1:.4} L2 {l2:.4} scalarized {scalarized:.4} clean {clean_acc:.2}% robust {robust_acc:.2}%",
            epoch + 1,
            config.epochs
        );
        let improved = state.best_metric.is_none_or(|b| robust_acc > b);
        if improved {
            state.best_metric = Some(robust_acc);
            state.best_epoch = Some(epoch);
        }
        if let Some(f) = files {
            if improved {
                state.best_checkpoint = Some(f.best());
                save_checkpoint(&state, Some(config), &f.best())?;
            }
            save_checkpoint(&state, Some(config), &f.last())?;
            write_history(&state, &f.history(), &f.epochs())?;
        }
    }
    Ok(state)
}

/// Writes per-step rows `(epoch, step, l1, l2, scalarized, lr)` and per-epoch
/// evaluation rows as CSV.
pub fn write_history(state: &TrainState, steps_path: &Path, epochs_path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(steps_path)?;
    for r in &state.steps {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(steps_path, e))?;
    let mut w = csv::Writer::from_path(epochs_path)?;
    for r in &state.history {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(epochs_path, e))
}

pub fn read_epoch_history(path: &Path) -> Result<Vec<EpochRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn read_step_history(path: &Path) -> Result<Vec<StepRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Robust accuracy of the current model on `data` with `config.eval_attack`.
pub fn evaluate_state(state: &TrainState, config: &TrainConfig, data: &LabeledImages) -> Result<f64> {
    evaluation::robust_accuracy(&state.model, data, &config.eval_attack, config.seed)
}
