//! Conic scalarization of the two training objectives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarizationParams {
    pub k1: f64,
    pub k2: f64,
    pub gamma: f64,
    pub a1: f64,
    pub a2: f64,
    /// Use `γ·Σ|L_i - a_i|` instead of `γ·Σ(L_i - a_i)`.
    pub abs_mode: bool,
}

impl Default for ScalarizationParams {
    fn default() -> Self {
        Self {
            k1: 0.1,
            k2: 0.9,
            gamma: 2e-5,
            a1: 0.0,
            a2: 0.0,
            abs_mode: false,
        }
    }
}

impl ScalarizationParams {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [("scalarization.k1", self.k1), ("scalarization.k2", self.k2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be > 0"));
            }
        }
        if !(self.gamma >= 0.0 && self.gamma < self.k1.min(self.k2)) {
            return Err(Error::config(
                "scalarization.gamma",
                format!("must satisfy 0 <= gamma < min(k1, k2) = {}", self.k1.min(self.k2)),
            ));
        }
        for (field, v) in [("scalarization.a1", self.a1), ("scalarization.a2", self.a2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(field, "must be >= 0"));
            }
        }
        Ok(())
    }

    /// True when the reference point lies strictly below both losses.
    pub fn reference_dominated(&self, l1: f64, l2: f64) -> bool {
        self.a1 < l1 && self.a2 < l2
    }
}

/// `Σ k_i (L_i - a_i) + γ Σ (L_i - a_i)`, or with `|L_i - a_i|` in abs mode.
pub fn conic_scalarize(l1: f64, l2: f64, p: &ScalarizationParams) -> f64 {
    let (d1, d2) = (l1 - p.a1, l2 - p.a2);
    let aug = if p.abs_mode { d1.abs() + d2.abs() } else { d1 + d2 };
    p.k1 * d1 + p.k2 * d2 + p.gamma * aug
}

/// `(∂/∂L1, ∂/∂L2)` of [`conic_scalarize`].
pub fn scalarization_weights(l1: f64, l2: f64, p: &ScalarizationParams) -> (f64, f64) {
    if p.abs_mode {
        let sgn = |d: f64| if d < 0.0 { -1.0 } else { 1.0 };
        (p.k1 + p.gamma * sgn(l1 - p.a1), p.k2 + p.gamma * sgn(l2 - p.a2))
    } else {
        (p.k1 + p.gamma, p.k2 + p.gamma)
    }
}
