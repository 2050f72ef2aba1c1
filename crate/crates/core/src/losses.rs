//! Robustness and accuracy objectives, each with its analytic gradient.
//!
//! The robustness loss `L1 = cosine + α·contrastive` acts on ℓ2-normalized
//! embedded features; the accuracy loss `L2` (TRADES or MART) acts on logits.
//! All softmax-type quantities are computed in the log domain with max
//! subtraction.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum L2Variant {
    Trades,
    Mart,
}

impl FromStr for L2Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "trades" => Ok(L2Variant::Trades),
            "mart" => Ok(L2Variant::Mart),
            other => Err(Error::config("loss.l2_variant", format!("unknown variant `{other}`"))),
        }
    }
}

impl fmt::Display for L2Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            L2Variant::Trades => "trades",
            L2Variant::Mart => "mart",
        })
    }
}

/// Direction of the TRADES divergence term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// `KL(natural || adversarial)`
    NaturalAdversarial,
    /// `KL(adversarial || natural)`
    AdversarialNatural,
}

impl FromStr for KlDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "natural_adversarial" | "nat_adv" => Ok(KlDirection::NaturalAdversarial),
            "adversarial_natural" | "adv_nat" => Ok(KlDirection::AdversarialNatural),
            other => Err(Error::config("loss.kl_direction", format!("unknown direction `{other}`"))),
        }
    }
}

impl fmt::Display for KlDirection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KlDirection::NaturalAdversarial => "natural_adversarial",
            KlDirection::AdversarialNatural => "adversarial_natural",
        })
    }
}

/// Which features feed the contrastive term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveInputs {
    /// Natural and adversarial features stacked (`2n` anchors); every anchor
    /// has at least its own twin as a positive.
    Concatenated,
    /// Natural features only; anchors without a same-class partner in the
    /// batch are skipped.
    NaturalOnly,
}

impl FromStr for ContrastiveInputs {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concatenated" => Ok(ContrastiveInputs::Concatenated),
            "natural_only" | "natural" => Ok(ContrastiveInputs::NaturalOnly),
            other => Err(Error::config("loss.contrastive_inputs", format!("unknown mode `{other}`"))),
        }
    }
}

impl fmt::Display for ContrastiveInputs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ContrastiveInputs::Concatenated => "concatenated",
            ContrastiveInputs::NaturalOnly => "natural_only",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    /// Weight of the contrastive term inside L1, `0 < α < 1`.
    pub alpha: f64,
    /// Contrastive temperature, `τ > 0`.
    pub tau: f64,
    /// Weight `1/λ` of the divergence term in L2.
    pub inv_lambda: f64,
    pub l2_variant: L2Variant,
    pub kl_direction: KlDirection,
    pub contrastive_inputs: ContrastiveInputs,
}

impl Default for LossParams {
    fn default() -> Self {
        Self {
            alpha: 1e-5,
            tau: 0.1,
            inv_lambda: 6.0,
            l2_variant: L2Variant::Trades,
            kl_direction: KlDirection::NaturalAdversarial,
            contrastive_inputs: ContrastiveInputs::Concatenated,
        }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config("loss.alpha", "must satisfy 0 < alpha < 1"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config("loss.tau", "must be > 0"));
        }
        if !(self.inv_lambda > 0.0 && self.inv_lambda.is_finite()) {
            return Err(Error::config("loss.inv_lambda", "must be > 0"));
        }
        Ok(())
    }
}

fn logsumexp(row: ArrayView1<f64>) -> f64 {
    let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn log_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let lse = logsumexp(row.view());
        row.mapv_inplace(|v| v - lse);
    }
    out
}

pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    log_softmax(logits).mapv(f64::exp)
}

/// Batch-mean cross-entropy.
pub fn cross_entropy(logits: &Array2<f64>, y: &[usize]) -> f64 {
    let lp = log_softmax(logits);
    -y.iter().enumerate().map(|(i, &c)| lp[[i, c]]).sum::<f64>() / y.len() as f64
}

pub fn cross_entropy_grad(logits: &Array2<f64>, y: &[usize]) -> Array2<f64> {
    let n = y.len() as f64;
    let mut g = softmax(logits);
    for (i, &c) in y.iter().enumerate() {
        g[[i, c]] -= 1.0;
    }
    g / n
}

fn per_row_kl(p_logits: &Array2<f64>, q_logits: &Array2<f64>) -> (Array1<f64>, Array2<f64>, Array2<f64>, Array2<f64>) {
    let lp = log_softmax(p_logits);
    let lq = log_softmax(q_logits);
    let p = lp.mapv(f64::exp);
    let diff = &lp - &lq;
    let rows = (&p * &diff).sum_axis(Axis(1));
    (rows, p, lq.mapv(f64::exp), diff)
}

/// Batch-mean `Σ_k p_k (log p_k - log q_k)` with `p = softmax(p_logits)`.
pub fn kl_divergence(p_logits: &Array2<f64>, q_logits: &Array2<f64>) -> f64 {
    per_row_kl(p_logits, q_logits).0.mean().unwrap_or(0.0)
}

/// Gradients of [`kl_divergence`] with respect to `p_logits` and `q_logits`.
pub fn kl_divergence_grads(p_logits: &Array2<f64>, q_logits: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let n = p_logits.nrows() as f64;
    let (rows, p, q, diff) = per_row_kl(p_logits, q_logits);
    let mut dp = &p * &(diff - &rows.insert_axis(Axis(1)));
    dp /= n;
    let dq = (&q - &p) / n;
    (dp, dq)
}

fn runner_up(row: ArrayView1<f64>, y: usize) -> usize {
    let mut best = usize::MAX;
    for (j, &v) in row.iter().enumerate() {
        if j != y && (best == usize::MAX || v > row[best]) {
            best = j;
        }
    }
    best
}

/// Gradient of the per-sample sum of `max_{j≠y} z_j - z_y`.
pub fn logit_margin_grad(logits: &Array2<f64>, y: &[usize]) -> Array2<f64> {
    let mut g = Array2::zeros(logits.dim());
    for (i, &c) in y.iter().enumerate() {
        let j = runner_up(logits.row(i), c);
        g[[i, j]] += 1.0;
        g[[i, c]] -= 1.0;
    }
    g
}

/// Per-sample `max(z_y - max_{j≠y} z_j + κ, 0)`.
pub fn cw_hinge(logits: &Array2<f64>, y: &[usize], confidence: f64) -> Array1<f64> {
    Array1::from_iter(y.iter().enumerate().map(|(i, &c)| {
        let row = logits.row(i);
        (row[c] - row[runner_up(row, c)] + confidence).max(0.0)
    }))
}

/// Gradient of the summed [`cw_hinge`].
pub fn cw_hinge_grad(logits: &Array2<f64>, y: &[usize], confidence: f64) -> Array2<f64> {
    let mut g = Array2::zeros(logits.dim());
    for (i, &c) in y.iter().enumerate() {
        let row = logits.row(i);
        let j = runner_up(row, c);
        if row[c] - row[j] + confidence > 0.0 {
            g[[i, c]] += 1.0;
            g[[i, j]] -= 1.0;
        }
    }
    g
}

/// `1 - mean_i cos(t_i, t'_i)` and its gradients.
#[derive(Debug, Clone)]
pub struct PairLoss {
    pub value: f64,
    pub grad_a: Array2<f64>,
    pub grad_b: Array2<f64>,
}

pub fn cosine_alignment(t: &Array2<f64>, t_adv: &Array2<f64>) -> Result<PairLoss> {
    if t.dim() != t_adv.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", t.dim(), t_adv.dim())));
    }
    let n = t.nrows();
    let mut grad_a = Array2::zeros(t.dim());
    let mut grad_b = Array2::zeros(t.dim());
    let mut total = 0.0;
    for i in 0..n {
        let (a, b) = (t.row(i), t_adv.row(i));
        let (na, nb) = (a.dot(&a).sqrt(), b.dot(&b).sqrt());
        for (row, norm) in [(i, na), (i, nb)] {
            if norm < 1e-12 {
                return Err(Error::DegenerateEmbedding { row, norm });
            }
        }
        let cos = a.dot(&b) / (na * nb);
        total += cos;
        let scale = -1.0 / n as f64;
        grad_a
            .row_mut(i)
            .assign(&((&b / (na * nb) - &a * (cos / (na * na))) * scale));
        grad_b
            .row_mut(i)
            .assign(&((&a / (na * nb) - &b * (cos / (nb * nb))) * scale));
    }
    Ok(PairLoss {
        value: 1.0 - total / n as f64,
        grad_a,
        grad_b,
    })
}

pub fn cosine_alignment_loss(t: &Array2<f64>, t_adv: &Array2<f64>) -> Result<f64> {
    cosine_alignment(t, t_adv).map(|l| l.value)
}

#[derive(Debug, Clone)]
pub struct SingleLoss {
    pub value: f64,
    pub grad: Array2<f64>,
}

/// Multi-positive contrastive loss summed over anchors:
/// `Σ_j -1/|P(j)| Σ_{p∈P(j)} log(exp(t_j·t_p/τ) / Σ_{q≠j} exp(t_j·t_q/τ))`.
///
/// With `skip_unpaired`, anchors with no same-label partner contribute
/// nothing; otherwise they are an error.
pub fn multi_positive_contrastive(
    t: &Array2<f64>,
    y: &[usize],
    tau: f64,
    skip_unpaired: bool,
) -> Result<SingleLoss> {
    let n = t.nrows();
    if y.len() != n {
        return Err(Error::Shape(format!("{n} rows but {} labels", y.len())));
    }
    let sim = t.dot(&t.t()) / tau;
    let mut g = Array2::<f64>::zeros((n, n));
    let mut total = 0.0;
    for j in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&p| p != j && y[p] == y[j]).collect();
        if positives.is_empty() {
            if skip_unpaired {
                continue;
            }
            return Err(Error::EmptyPositiveSet { anchor: j });
        }
        let row = sim.row(j);
        let m = (0..n).filter(|&q| q != j).map(|q| row[q]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n).filter(|&q| q != j).map(|q| (row[q] - m).exp()).sum();
        let lse = m + denom.ln();
        let inv_p = 1.0 / positives.len() as f64;
        total += lse - inv_p * positives.iter().map(|&p| row[p]).sum::<f64>();
        for q in (0..n).filter(|&q| q != j) {
            g[[j, q]] += (row[q] - lse).exp();
        }
        for &p in &positives {
            g[[j, p]] -= inv_p;
        }
    }
    let grad = (&g + &g.t()).dot(t) / tau;
    Ok(SingleLoss { value: total, grad })
}

pub fn multi_positive_contrastive_loss(t_cat: &Array2<f64>, y_cat: &[usize], tau: f64) -> Result<f64> {
    multi_positive_contrastive(t_cat, y_cat, tau, false).map(|l| l.value)
}

/// Robustness objective `L1 = cosine + α·contrastive` with its parts.
#[derive(Debug, Clone)]
pub struct RobustnessLoss {
    pub value: f64,
    pub cosine: f64,
    pub contrastive: f64,
    pub grad_t: Array2<f64>,
    pub grad_t_adv: Array2<f64>,
}

pub fn robustness_loss(
    t: &Array2<f64>,
    t_adv: &Array2<f64>,
    y: &[usize],
    params: &LossParams,
) -> Result<RobustnessLoss> {
    let cos = cosine_alignment(t, t_adv)?;
    let n = t.nrows();
    let (contrastive, grad_ctr_nat, grad_ctr_adv) = match params.contrastive_inputs {
        ContrastiveInputs::Concatenated => {
            let stacked = ndarray::concatenate(Axis(0), &[t.view(), t_adv.view()])
                .map_err(|e| Error::Shape(e.to_string()))?;
            let labels: Vec<usize> = y.iter().chain(y).copied().collect();
            let c = multi_positive_contrastive(&stacked, &labels, params.tau, false)?;
            let nat = c.grad.slice(ndarray::s![..n, ..]).to_owned();
            let adv = c.grad.slice(ndarray::s![n.., ..]).to_owned();
            (c.value, nat, adv)
        }
        ContrastiveInputs::NaturalOnly => {
            let c = multi_positive_contrastive(t, y, params.tau, true)?;
            (c.value, c.grad, Array2::zeros(t_adv.dim()))
        }
    };
    Ok(RobustnessLoss {
        value: cos.value + params.alpha * contrastive,
        cosine: cos.value,
        contrastive,
        grad_t: cos.grad_a + &(grad_ctr_nat * params.alpha),
        grad_t_adv: cos.grad_b + &(grad_ctr_adv * params.alpha),
    })
}

/// An accuracy objective on natural and adversarial logits.
#[derive(Debug, Clone)]
pub struct AccuracyLoss {
    pub value: f64,
    pub grad_nat: Array2<f64>,
    pub grad_adv: Array2<f64>,
}

/// `CE(nat, y) + (1/λ)·KL`, KL direction per `direction`.
pub fn trades(
    logits_nat: &Array2<f64>,
    logits_adv: &Array2<f64>,
    y: &[usize],
    inv_lambda: f64,
    direction: KlDirection,
) -> AccuracyLoss {
    let ce = cross_entropy(logits_nat, y);
    let mut grad_nat = cross_entropy_grad(logits_nat, y);
    let (kl, d_nat, d_adv) = match direction {
        KlDirection::NaturalAdversarial => {
            let (dp, dq) = kl_divergence_grads(logits_nat, logits_adv);
            (kl_divergence(logits_nat, logits_adv), dp, dq)
        }
        KlDirection::AdversarialNatural => {
            let (dp, dq) = kl_divergence_grads(logits_adv, logits_nat);
            (kl_divergence(logits_adv, logits_nat), dq, dp)
        }
    };
    grad_nat += &(d_nat * inv_lambda);
    AccuracyLoss {
        value: ce + inv_lambda * kl,
        grad_nat,
        grad_adv: d_adv * inv_lambda,
    }
}

pub fn trades_loss(logits_nat: &Array2<f64>, logits_adv: &Array2<f64>, y: &[usize], inv_lambda: f64) -> f64 {
    trades(logits_nat, logits_adv, y, inv_lambda, KlDirection::NaturalAdversarial).value
}

/// Misclassification-aware loss:
/// `mean[CE(adv, y) - log(1 - max_{k≠y} p'_k)] + (1/λ)·mean[KL_i(nat || adv)·(1 - p_y)]`.
///
/// `log(1 - p'_k)` is evaluated as a log-sum-exp over the other classes, so
/// it stays finite even when `p'_k` rounds to 1.
pub fn mart(logits_nat: &Array2<f64>, logits_adv: &Array2<f64>, y: &[usize], inv_lambda: f64) -> AccuracyLoss {
    let (n, c) = logits_adv.dim();
    assert!(c >= 2, "the margin term needs at least two classes");
    let nf = n as f64;
    let lq = log_softmax(logits_adv);
    let q = lq.mapv(f64::exp);
    let lp = log_softmax(logits_nat);
    let p = lp.mapv(f64::exp);

    let mut value = 0.0;
    let mut grad_adv = Array2::<f64>::zeros((n, c));
    let mut grad_nat = Array2::<f64>::zeros((n, c));
    for (i, &label) in y.iter().enumerate() {
        let row = logits_adv.row(i);
        // boosted cross-entropy on the adversarial logits
        let k = runner_up(q.row(i), label);
        let full = logsumexp(row);
        let others: Vec<f64> = (0..c).filter(|&j| j != k).map(|j| row[j]).collect();
        let rest = logsumexp(ArrayView1::from(&others));
        value += -lq[[i, label]] + (full - rest);
        for j in 0..c {
            let sm = q[[i, j]];
            let ce = sm - if j == label { 1.0 } else { 0.0 };
            let excl = if j == k { 0.0 } else { (row[j] - rest).exp() };
            grad_adv[[i, j]] += (ce + sm - excl) / nf;
        }

        // misclassification-weighted divergence
        let diff: Vec<f64> = (0..c).map(|j| lp[[i, j]] - lq[[i, j]]).collect();
        let kl: f64 = (0..c).map(|j| p[[i, j]] * diff[j]).sum();
        let py = p[[i, label]];
        let w = 1.0 - py;
        value += inv_lambda * kl * w;
        let s = inv_lambda / nf;
        for j in 0..c {
            grad_adv[[i, j]] += s * w * (q[[i, j]] - p[[i, j]]);
            let d_kl = p[[i, j]] * (diff[j] - kl);
            let d_w = -py * ((if j == label { 1.0 } else { 0.0 }) - p[[i, j]]);
            grad_nat[[i, j]] += s * (w * d_kl + kl * d_w);
        }
    }
    AccuracyLoss {
        value: value / nf,
        grad_nat,
        grad_adv,
    }
}

pub fn mart_loss(logits_nat: &Array2<f64>, logits_adv: &Array2<f64>, y: &[usize], inv_lambda: f64) -> f64 {
    mart(logits_nat, logits_adv, y, inv_lambda).value
}

pub fn accuracy_loss(
    logits_nat: &Array2<f64>,
    logits_adv: &Array2<f64>,
    y: &[usize],
    params: &LossParams,
) -> AccuracyLoss {
    match params.l2_variant {
        L2Variant::Trades => trades(logits_nat, logits_adv, y, params.inv_lambda, params.kl_direction),
        L2Variant::Mart => mart(logits_nat, logits_adv, y, params.inv_lambda),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array};
    use proptest::prelude::*;
    use rand::Rng as _;

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = crate::seed::rng(seed, "losses-test", 0, 0);
        Array::from_shape_simple_fn((rows, cols), || rng.random_range(-2.0..2.0))
    }

    fn unit_rows(mut a: Array2<f64>) -> Array2<f64> {
        for mut r in a.axis_iter_mut(Axis(0)) {
            let n = r.dot(&r).sqrt();
            r /= n;
        }
        a
    }

    #[test]
    fn cosine_examples() {
        let t = unit_rows(random(4, 5, 1));
        assert!(cosine_alignment_loss(&t, &t).unwrap().abs() < 1e-15);
        assert!((cosine_alignment_loss(&t, &(-&t)).unwrap() - 2.0).abs() < 1e-15);
        let a = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
        let b = arr2(&[[0.0, 1.0], [-1.0, 0.0]]);
        assert!((cosine_alignment_loss(&a, &b).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cosine_rejects_zero_rows() {
        let a = arr2(&[[0.0, 0.0]]);
        let b = arr2(&[[1.0, 0.0]]);
        assert!(matches!(
            cosine_alignment_loss(&a, &b),
            Err(Error::DegenerateEmbedding { .. })
        ));
    }

    #[test]
    fn contrastive_identical_rows() {
        let t = Array2::from_elem((4, 3), 1.0 / 3f64.sqrt());
        let v = multi_positive_contrastive_loss(&t, &[0, 0, 0, 0], 0.5).unwrap();
        assert!((v - 4.0 * 3f64.ln()).abs() < 1e-12);
        assert!((v - 4.3944).abs() < 1e-4);
    }

    #[test]
    fn contrastive_two_class_fixture() {
        let t = arr2(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]);
        let v = multi_positive_contrastive_loss(&t, &[0, 0, 1, 1], 1.0).unwrap();
        // each anchor: positive score 1, negatives 0 and 0
        let per = -(1f64.exp() / (1f64.exp() + 2.0)).ln();
        assert!((v - 4.0 * per).abs() < 1e-12);
    }

    #[test]
    fn lower_temperature_sharpens_separation_gradient() {
        let t = arr2(&[[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]);
        let y = [0, 0, 1, 1];
        let grad_norm = |tau: f64| {
            let g = multi_positive_contrastive(&t, &y, tau, false).unwrap().grad;
            g.iter().map(|v| v * v).sum::<f64>().sqrt()
        };
        assert!(grad_norm(0.5) > grad_norm(1.0));
    }

    #[test]
    fn contrastive_requires_positive_unless_skipping() {
        let t = unit_rows(random(3, 2, 2));
        assert!(matches!(
            multi_positive_contrastive_loss(&t, &[0, 1, 1], 1.0),
            Err(Error::EmptyPositiveSet { anchor: 0 })
        ));
        let skipped = multi_positive_contrastive(&t, &[0, 1, 1], 1.0, true).unwrap();
        assert!(skipped.value.is_finite());
        assert!(skipped.grad.row(0).iter().any(|v| *v != 0.0));
    }

    #[test]
    fn kl_examples() {
        let p = random(3, 4, 3);
        assert!(kl_divergence(&p, &p).abs() < 1e-15);
        let uniform = arr2(&[[0.0, 0.0]]);
        let q = arr2(&[[3f64.ln(), 0.0]]);
        let expected = 0.5 * (0.5f64 / 0.75).ln() + 0.5 * (0.5f64 / 0.25).ln();
        assert!((kl_divergence(&uniform, &q) - expected).abs() < 1e-15);
        assert!((expected - 0.14384).abs() < 1e-5);
    }

    #[test]
    fn trades_reduces_to_ce_without_divergence() {
        let l = random(4, 3, 4);
        let y = [0, 2, 1, 1];
        assert!((trades_loss(&l, &l, &y, 6.0) - cross_entropy(&l, &y)).abs() < 1e-15);
    }

    #[test]
    fn trades_composes_ce_and_kl() {
        let nat = arr2(&[[0.0, 0.0]]);
        let adv = arr2(&[[3f64.ln(), 0.0]]);
        let y = [0];
        let expected = 2f64.ln() + 6.0 * kl_divergence(&nat, &adv);
        assert!((trades_loss(&nat, &adv, &y, 6.0) - expected).abs() < 1e-15);
    }

    #[test]
    fn mart_without_divergence_is_boosted_ce() {
        let l = arr2(&[[2.0, 0.5, -1.0]]);
        let y = [1];
        let p = softmax(&l);
        let bce = -p[[0, 1]].ln() - (1.0 - p[[0, 0]]).ln();
        assert!((mart_loss(&l, &l, &y, 6.0) - bce).abs() < 1e-12);
    }

    #[test]
    fn mart_confident_natural_prediction_drops_regularizer() {
        let nat = arr2(&[[800.0, 0.0, 0.0]]);
        let adv = arr2(&[[0.3, 0.1, -0.2]]);
        let y = [0];
        let q = softmax(&adv);
        let bce = -q[[0, 0]].ln() - (1.0 - q[[0, 1]]).ln();
        assert!((mart_loss(&nat, &adv, &y, 6.0) - bce).abs() < 1e-12);
    }

    #[test]
    fn loss_params_validation() {
        assert!(LossParams::default().validate().is_ok());
        for bad in [0.0, 1.0] {
            let p = LossParams {
                alpha: bad,
                ..Default::default()
            };
            assert!(p.validate().is_err());
        }
        let p = LossParams {
            tau: 0.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }

    fn fd_check(x: &Array2<f64>, analytic: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) {
        let h = 1e-6;
        for idx in ndarray::indices(x.dim()) {
            let (mut up, mut down) = (x.clone(), x.clone());
            up[idx] += h;
            down[idx] -= h;
            let numeric = (f(&up) - f(&down)) / (2.0 * h);
            let a = analytic[idx];
            assert!(
                (numeric - a).abs() <= 1e-6 * (1.0 + numeric.abs()),
                "at {idx:?}: analytic {a}, numeric {numeric}"
            );
        }
    }

    #[test]
    fn cosine_gradients() {
        let a = random(3, 4, 11);
        let b = random(3, 4, 12);
        let l = cosine_alignment(&a, &b).unwrap();
        fd_check(&a, &l.grad_a, |v| cosine_alignment_loss(v, &b).unwrap());
        fd_check(&b, &l.grad_b, |v| cosine_alignment_loss(&a, v).unwrap());
    }

    #[test]
    fn contrastive_gradients() {
        let t = unit_rows(random(6, 3, 13));
        let y = [0, 1, 0, 1, 2, 2];
        let l = multi_positive_contrastive(&t, &y, 0.3, false).unwrap();
        fd_check(&t, &l.grad, |v| multi_positive_contrastive_loss(v, &y, 0.3).unwrap());
        let y_sparse = [0, 1, 0, 3, 2, 2];
        let l = multi_positive_contrastive(&t, &y_sparse, 0.3, true).unwrap();
        fd_check(&t, &l.grad, |v| {
            multi_positive_contrastive(v, &y_sparse, 0.3, true).unwrap().value
        });
    }

    #[test]
    fn robustness_gradients_both_modes() {
        let t = unit_rows(random(4, 3, 14));
        let ta = unit_rows(random(4, 3, 15));
        let y = [0, 1, 1, 2];
        for mode in [ContrastiveInputs::Concatenated, ContrastiveInputs::NaturalOnly] {
            let params = LossParams {
                alpha: 0.3,
                contrastive_inputs: mode,
                ..Default::default()
            };
            let l = robustness_loss(&t, &ta, &y, &params).unwrap();
            assert!((l.value - (l.cosine + 0.3 * l.contrastive)).abs() < 1e-12);
            fd_check(&t, &l.grad_t, |v| robustness_loss(v, &ta, &y, &params).unwrap().value);
            fd_check(&ta, &l.grad_t_adv, |v| robustness_loss(&t, v, &y, &params).unwrap().value);
        }
    }

    #[test]
    fn ce_and_kl_gradients() {
        let p = random(3, 4, 16);
        let q = random(3, 4, 17);
        let y = [1, 0, 3];
        fd_check(&p, &cross_entropy_grad(&p, &y), |v| cross_entropy(v, &y));
        let (dp, dq) = kl_divergence_grads(&p, &q);
        fd_check(&p, &dp, |v| kl_divergence(v, &q));
        fd_check(&q, &dq, |v| kl_divergence(&p, v));
    }

    #[test]
    fn trades_gradients_both_directions() {
        let nat = random(3, 4, 18);
        let adv = random(3, 4, 19);
        let y = [2, 0, 1];
        for dir in [KlDirection::NaturalAdversarial, KlDirection::AdversarialNatural] {
            let l = trades(&nat, &adv, &y, 6.0, dir);
            fd_check(&nat, &l.grad_nat, |v| trades(v, &adv, &y, 6.0, dir).value);
            fd_check(&adv, &l.grad_adv, |v| trades(&nat, v, &y, 6.0, dir).value);
        }
    }

    #[test]
    fn mart_gradients() {
        let nat = random(3, 4, 20);
        let adv = random(3, 4, 21);
        let y = [2, 0, 1];
        let l = mart(&nat, &adv, &y, 6.0);
        fd_check(&nat, &l.grad_nat, |v| mart_loss(v, &adv, &y, 6.0));
        fd_check(&adv, &l.grad_adv, |v| mart_loss(&nat, v, &y, 6.0));
    }

    #[test]
    fn cw_hinge_gradient_matches_definition() {
        let z = arr2(&[[2.0, 1.5, 0.0], [0.0, 3.0, 1.0]]);
        let y = [0, 0];
        assert_eq!(cw_hinge(&z, &y, 1.0).to_vec(), vec![1.5, 0.0]);
        let g = cw_hinge_grad(&z, &y, 1.0);
        assert_eq!(g, arr2(&[[1.0, -1.0, 0.0], [0.0, 0.0, 0.0]]));
        let m = logit_margin_grad(&z, &y);
        assert_eq!(m, arr2(&[[-1.0, 1.0, 0.0], [-1.0, 1.0, 0.0]]));
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative(seed in 0u64..1000) {
            let p = random(2, 5, seed) * 3.0;
            let q = random(2, 5, seed + 7919) * 3.0;
            prop_assert!(kl_divergence(&p, &q) >= -1e-15);
        }

        #[test]
        fn kl_vanishes_under_row_shift(seed in 0u64..500, shift in -5.0f64..5.0) {
            let p = random(3, 4, seed);
            prop_assert!(kl_divergence(&p, &(&p + shift)).abs() < 1e-12);
        }

        #[test]
        fn cosine_is_bounded(seed in 0u64..500) {
            let a = random(4, 3, seed);
            let b = random(4, 3, seed + 1);
            let v = cosine_alignment_loss(&a, &b).unwrap();
            prop_assert!((-1e-12..=2.0 + 1e-12).contains(&v));
        }

        #[test]
        fn contrastive_permutation_invariant(seed in 0u64..200) {
            let t = unit_rows(random(6, 4, seed));
            let y = [0, 1, 0, 2, 1, 2];
            let perm = [3, 0, 5, 1, 4, 2];
            let tp = t.select(Axis(0), &perm);
            let yp: Vec<usize> = perm.iter().map(|&i| y[i]).collect();
            let a = multi_positive_contrastive_loss(&t, &y, 0.2).unwrap();
            let b = multi_positive_contrastive_loss(&tp, &yp, 0.2).unwrap();
            prop_assert!((a - b).abs() < 1e-10);
        }

        #[test]
        fn accuracy_losses_nonnegative(seed in 0u64..500) {
            let nat = random(3, 4, seed) * 2.0;
            let adv = random(3, 4, seed + 3) * 2.0;
            let y = [0, 3, 1];
            prop_assert!(trades_loss(&nat, &adv, &y, 6.0) >= 0.0);
            prop_assert!(mart_loss(&nat, &adv, &y, 6.0) >= 0.0);
        }
    }
}
