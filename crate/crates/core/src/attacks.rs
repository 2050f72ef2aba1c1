//! ℓ∞-bounded gradient attacks: FGSM, PGD and a Carlini-Wagner margin attack.
//!
//! All attacks work in pixel units on `[0, 1]` images and are non-targeted.
//! Every output satisfies `max |x_adv - x| <= ε` and `x_adv ∈ [0, 1]`.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array, Array2, Array4, Dimension, Zip};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses;
use crate::nn::DifferentiableClassifier;
use crate::seed::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackFamily {
    Fgsm,
    Pgd,
    CwLinf,
}

impl FromStr for AttackFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fgsm" => Ok(AttackFamily::Fgsm),
            "pgd" => Ok(AttackFamily::Pgd),
            "cw_linf" | "cw" => Ok(AttackFamily::CwLinf),
            other => Err(Error::config("family", format!("unknown attack family `{other}`"))),
        }
    }
}

impl fmt::Display for AttackFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackFamily::Fgsm => "fgsm",
            AttackFamily::Pgd => "pgd",
            AttackFamily::CwLinf => "cw_linf",
        })
    }
}

/// The loss an attack ascends (FGSM/PGD) to find adversarial inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerLoss {
    /// Cross-entropy against the true label.
    Ce,
    /// `KL(softmax(f(x)) || softmax(f(x')))` against the clean prediction.
    Kl,
    /// `max_{j != y} z_j - z_y` on logits.
    Margin,
}

impl FromStr for InnerLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(InnerLoss::Ce),
            "kl" => Ok(InnerLoss::Kl),
            "margin" => Ok(InnerLoss::Margin),
            other => Err(Error::config("inner_loss", format!("unknown inner loss `{other}`"))),
        }
    }
}

impl fmt::Display for InnerLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InnerLoss::Ce => "ce",
            InnerLoss::Kl => "kl",
            InnerLoss::Margin => "margin",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub family: AttackFamily,
    /// ℓ∞ radius in pixel units.
    pub epsilon: f64,
    pub step_size: f64,
    /// Ignored by FGSM.
    pub iterations: usize,
    pub random_start: bool,
    pub inner_loss: InnerLoss,
    /// CW confidence κ.
    pub confidence: f64,
    /// CW trade-off constant c.
    pub c_const: f64,
    /// CW gradient-descent step.
    pub lr: f64,
}

pub const CIFAR_EPSILON: f64 = 8.0 / 255.0;

impl AttackSpec {
    pub fn fgsm(epsilon: f64) -> Self {
        Self {
            family: AttackFamily::Fgsm,
            epsilon,
            step_size: epsilon,
            iterations: 1,
            random_start: false,
            inner_loss: InnerLoss::Ce,
            confidence: 1.0,
            c_const: 15.0,
            lr: 1e-2,
        }
    }

    pub fn pgd(epsilon: f64, step_size: f64, iterations: usize, random_start: bool) -> Self {
        Self {
            family: AttackFamily::Pgd,
            step_size,
            iterations,
            random_start,
            ..Self::fgsm(epsilon)
        }
    }

    /// Evaluation CW∞ attack: 10 iterations, step 1e-2, κ = 1, c = 15.
    pub fn cw_linf(epsilon: f64) -> Self {
        Self {
            family: AttackFamily::CwLinf,
            iterations: 10,
            inner_loss: InnerLoss::Margin,
            ..Self::fgsm(epsilon)
        }
    }

    pub fn with_inner_loss(mut self, loss: InnerLoss) -> Self {
        self.inner_loss = loss;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::config("epsilon", "must be finite and >= 0"));
        }
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::config("step_size", "must be finite and >= 0"));
        }
        if !(self.confidence >= 0.0) {
            return Err(Error::config("confidence", "must be >= 0"));
        }
        if !(self.c_const > 0.0) {
            return Err(Error::config("c_const", "must be > 0"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("lr", "must be > 0"));
        }
        Ok(())
    }

    /// Display name used in reports, e.g. `FGSM`, `PGD-20`, `CW-inf`.
    pub fn name(&self) -> String {
        match self.family {
            AttackFamily::Fgsm => "FGSM".to_string(),
            AttackFamily::Pgd => format!("PGD-{}", self.iterations),
            AttackFamily::CwLinf => "CW-inf".to_string(),
        }
    }
}

/// `sign` with `sign(0) = 0`.
fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Clips `x_adv` into the ε-ball around `x_ref`, then into `[0, 1]`.
pub fn project_linf<D: Dimension>(
    x_adv: &Array<f64, D>,
    x_ref: &Array<f64, D>,
    epsilon: f64,
) -> Result<Array<f64, D>> {
    if x_adv.shape() != x_ref.shape() {
        return Err(Error::Shape(format!(
            "projection of {:?} onto ball around {:?}",
            x_adv.shape(),
            x_ref.shape()
        )));
    }
    Ok(project_unchecked(x_adv, x_ref, epsilon))
}

fn project_unchecked<D: Dimension>(x_adv: &Array<f64, D>, x_ref: &Array<f64, D>, epsilon: f64) -> Array<f64, D> {
    Zip::from(x_adv)
        .and(x_ref)
        .map_collect(|&a, &r| a.clamp(r - epsilon, r + epsilon).clamp(0.0, 1.0))
}

fn debug_check_ball(out: &Array4<f64>, x: &Array4<f64>, epsilon: f64) {
    if cfg!(debug_assertions) {
        Zip::from(out).and(x).for_each(|&o, &r| {
            debug_assert!((o - r).abs() <= epsilon + 1e-6, "left the ε-ball: {o} vs {r}");
            debug_assert!((0.0..=1.0).contains(&o), "left the pixel domain: {o}");
        });
    }
}

/// Gradient of the inner loss with respect to the input, summed over the
/// batch (each sample's gradient only depends on its own loss term).
fn inner_gradient(
    model: &dyn DifferentiableClassifier,
    x: &Array4<f64>,
    y: &[usize],
    loss: InnerLoss,
    reference: Option<&Array2<f64>>,
) -> Array4<f64> {
    let n = y.len() as f64;
    let mut grad_fn = |logits: &Array2<f64>| -> Array2<f64> {
        match loss {
            InnerLoss::Ce => losses::cross_entropy_grad(logits, y) * n,
            InnerLoss::Kl => {
                let nat = reference.expect("KL inner loss needs reference logits");
                losses::kl_divergence_grads(nat, logits).1 * n
            }
            InnerLoss::Margin => losses::logit_margin_grad(logits, y),
        }
    };
    model.input_gradient(x, &mut grad_fn).1
}

fn signed_step(x_cur: &Array4<f64>, x_ref: &Array4<f64>, grad: &Array4<f64>, step: f64, epsilon: f64) -> Array4<f64> {
    let moved = Zip::from(x_cur)
        .and(grad)
        .map_collect(|&x, &g| x + step * sign(g));
    project_unchecked(&moved, x_ref, epsilon)
}

/// One signed-gradient step of size ε: `clamp(x + ε·sign(∇x L))`.
pub fn fgsm(
    model: &dyn DifferentiableClassifier,
    x: &Array4<f64>,
    y: &[usize],
    epsilon: f64,
    inner_loss: InnerLoss,
) -> Array4<f64> {
    let reference = (inner_loss == InnerLoss::Kl).then(|| model.logits(x));
    let grad = inner_gradient(model, x, y, inner_loss, reference.as_ref());
    let out = signed_step(x, x, &grad, epsilon, epsilon);
    debug_check_ball(&out, x, epsilon);
    out
}

/// Projected gradient ascent with signed steps, optionally from a uniform
/// random start inside the ball.
pub fn pgd(
    model: &dyn DifferentiableClassifier,
    x: &Array4<f64>,
    y: &[usize],
    spec: &AttackSpec,
    rng: &mut Rng,
) -> Array4<f64> {
    let eps = spec.epsilon;
    let mut x_adv = if spec.random_start && eps > 0.0 {
        let noisy = x.mapv(|v| v + rng.random_range(-eps..=eps));
        project_unchecked(&noisy, x, eps)
    } else {
        x.clone()
    };
    let reference = (spec.inner_loss == InnerLoss::Kl).then(|| model.logits(x));
    for _ in 0..spec.iterations {
        let grad = inner_gradient(model, &x_adv, y, spec.inner_loss, reference.as_ref());
        x_adv = signed_step(&x_adv, x, &grad, spec.step_size, eps);
        debug_check_ball(&x_adv, x, eps);
    }
    debug_check_ball(&x_adv, x, eps);
    x_adv
}

/// Gradient descent on `c · max(z_y - max_{j≠y} z_j + κ, 0)` with iterates
/// projected into the ε-ball and the pixel domain.
pub fn cw_linf(model: &dyn DifferentiableClassifier, x: &Array4<f64>, y: &[usize], spec: &AttackSpec) -> Array4<f64> {
    let eps = spec.epsilon;
    let mut x_adv = x.clone();
    for _ in 0..spec.iterations {
        let mut grad_fn = |logits: &Array2<f64>| {
            losses::cw_hinge_grad(logits, y, spec.confidence) * spec.c_const
        };
        let (_, grad) = model.input_gradient(&x_adv, &mut grad_fn);
        let moved = Zip::from(&x_adv)
            .and(&grad)
            .map_collect(|&v, &g| v - spec.lr * g);
        x_adv = project_unchecked(&moved, x, eps);
        debug_check_ball(&x_adv, x, eps);
    }
    x_adv
}

/// Runs whichever attack `spec` names.
pub fn generate(
    model: &dyn DifferentiableClassifier,
    x: &Array4<f64>,
    y: &[usize],
    spec: &AttackSpec,
    rng: &mut Rng,
) -> Array4<f64> {
    match spec.family {
        AttackFamily::Fgsm => fgsm(model, x, y, spec.epsilon, spec.inner_loss),
        AttackFamily::Pgd => pgd(model, x, y, spec, rng),
        AttackFamily::CwLinf => cw_linf(model, x, y, spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Architecture, Layer, Linear, Network};
    use crate::seed;
    use ndarray::{arr1, arr2};

    /// Two-class linear model on a 1x1x2 "image" with weight rows (1, -1) and
    /// (-1, 1): class 0 prefers the first pixel.
    fn two_class() -> Network {
        let head = Linear {
            weight: arr2(&[[1.0, -1.0], [-1.0, 1.0]]),
            bias: arr1(&[0.0, 0.0]),
        };
        Network::from_layers(vec![Layer::Flatten, Layer::Linear(head)], (1, 1, 2)).unwrap()
    }

    fn pair(a: f64, b: f64) -> Array4<f64> {
        Array4::from_shape_vec((1, 1, 1, 2), vec![a, b]).unwrap()
    }

    #[test]
    fn projection_examples() {
        let r = ndarray::arr1(&[0.5]);
        assert_eq!(project_linf(&r, &r, 0.1).unwrap(), r);
        let out = project_linf(&arr1(&[0.9]), &arr1(&[0.5]), 8.0 / 255.0).unwrap();
        assert!((out[0] - (0.5 + 8.0 / 255.0)).abs() < 1e-15);
        assert!((out[0] - 0.53137).abs() < 1e-5);
        let out = project_linf(&arr1(&[-0.5]), &arr1(&[0.01]), 0.1).unwrap();
        assert_eq!(out[0], 0.0);
        assert!(project_linf(&arr1(&[0.1, 0.2]), &arr1(&[0.1]), 0.1).is_err());
    }

    #[test]
    fn sign_of_zero_is_zero() {
        assert_eq!(sign(0.0), 0.0);
        assert_eq!(sign(-0.0), 0.0);
        assert_eq!(sign(3.0), 1.0);
    }

    #[test]
    fn fgsm_zero_epsilon_is_identity() {
        let net = two_class();
        let x = pair(0.3, 0.6);
        assert_eq!(fgsm(&net, &x, &[0], 0.0, InnerLoss::Ce), x);
    }

    #[test]
    fn fgsm_zero_gradient_is_identity() {
        let zero = Linear::zeros(2, 2);
        let net = Network::from_layers(vec![Layer::Flatten, Layer::Linear(zero)], (1, 1, 2)).unwrap();
        let x = pair(0.3, 0.6);
        assert_eq!(fgsm(&net, &x, &[1], 0.1, InnerLoss::Ce), x);
    }

    #[test]
    fn fgsm_follows_finite_difference_sign() {
        let net = two_class();
        let x = pair(0.4, 0.45);
        let y = [0usize];
        let ce = |x: &Array4<f64>| losses::cross_entropy(&net.forward(x), &y);
        let h = 1e-6;
        let mut expected = x.clone();
        for k in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[[0, 0, 0, k]] += h;
            xm[[0, 0, 0, k]] -= h;
            let g = (ce(&xp) - ce(&xm)) / (2.0 * h);
            expected[[0, 0, 0, k]] = (x[[0, 0, 0, k]] + 0.05 * sign(g)).clamp(0.0, 1.0);
        }
        let out = fgsm(&net, &x, &y, 0.05, InnerLoss::Ce);
        assert_eq!(out, expected);
        // class 0 is pushed down: first pixel decreases, second increases
        assert!(out[[0, 0, 0, 0]] < 0.4 && out[[0, 0, 0, 1]] > 0.45);
    }

    #[test]
    fn pgd_zero_iterations_is_identity() {
        let net = two_class();
        let x = pair(0.2, 0.7);
        let spec = AttackSpec::pgd(0.1, 0.025, 0, false);
        assert_eq!(pgd(&net, &x, &[1], &spec, &mut seed::rng(0, "a", 0, 0)), x);
    }

    #[test]
    fn pgd_single_full_step_equals_fgsm() {
        let mut rng = seed::rng(11, "init", 0, 0);
        let net = Architecture::Mlp { hidden: 6 }.build((1, 3, 3), 3, &mut rng).unwrap();
        let x = Array4::from_shape_fn((4, 1, 3, 3), |(a, _, b, c)| ((a * 5 + b * 3 + c) % 9) as f64 / 9.0);
        let y = [0, 1, 2, 1];
        for loss in [InnerLoss::Ce, InnerLoss::Margin] {
            let spec = AttackSpec::pgd(0.1, 0.1, 1, false).with_inner_loss(loss);
            let a = pgd(&net, &x, &y, &spec, &mut seed::rng(0, "a", 0, 0));
            let b = fgsm(&net, &x, &y, 0.1, loss);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn pgd_random_start_is_seeded() {
        let mut rng = seed::rng(12, "init", 0, 0);
        let net = Architecture::Mlp { hidden: 6 }.build((1, 3, 3), 3, &mut rng).unwrap();
        let x = Array4::from_elem((2, 1, 3, 3), 0.5);
        let spec = AttackSpec::pgd(0.1, 0.025, 3, true).with_inner_loss(InnerLoss::Kl);
        let a = pgd(&net, &x, &[0, 1], &spec, &mut seed::rng(5, "a", 0, 0));
        let b = pgd(&net, &x, &[0, 1], &spec, &mut seed::rng(5, "a", 0, 0));
        assert_eq!(a, b);
        assert_ne!(a, x);
    }

    #[test]
    fn cw_leaves_confidently_misclassified_input() {
        let net = two_class();
        // true label 1, but class 0 wins by a wide margin
        let x = pair(0.9, 0.1);
        let spec = AttackSpec {
            confidence: 0.0,
            ..AttackSpec::cw_linf(0.1)
        };
        assert_eq!(cw_linf(&net, &x, &[1], &spec), x);
    }

    #[test]
    fn cw_reduces_margin_on_linear_model() {
        let net = two_class();
        let x = pair(0.7, 0.3);
        let margin = |x: &Array4<f64>| {
            let z = net.forward(x);
            z[[0, 0]] - z[[0, 1]]
        };
        let out = cw_linf(&net, &x, &[0], &AttackSpec::cw_linf(CIFAR_EPSILON));
        assert!(margin(&out) < margin(&x));
        assert!((&out - &x).iter().all(|d| d.abs() <= CIFAR_EPSILON + 1e-12));
    }

    #[test]
    fn default_cw_constants() {
        let s = AttackSpec::cw_linf(CIFAR_EPSILON);
        assert_eq!((s.confidence, s.c_const, s.iterations, s.lr), (1.0, 15.0, 10, 1e-2));
        assert_eq!(s.name(), "CW-inf");
        assert_eq!(AttackSpec::pgd(0.1, 0.01, 20, false).name(), "PGD-20");
    }

    #[test]
    fn validation_rejects_bad_specs() {
        assert!(AttackSpec::fgsm(-0.1).validate().is_err());
        assert!(AttackSpec::pgd(0.1, -0.01, 3, false).validate().is_err());
        assert!(AttackSpec::pgd(0.1, 0.01, 3, false).validate().is_ok());
    }
}
