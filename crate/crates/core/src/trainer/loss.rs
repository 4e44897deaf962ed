use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::{ClassId, Scalar};

/// Lower bound applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ce,
    /// Symmetric loss: `alpha * ce + beta * rce`.
    #[default]
    Sl,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub kind: LossKind,
    pub sl_alpha: f64,
    pub sl_beta: f64,
    /// Value substituted for `log 0` in the reverse cross entropy.
    pub rce_clip_a: f64,
    /// Weight on the noisy label in the hybrid loss.
    pub gamma: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { kind: LossKind::Sl, sl_alpha: 1.0, sl_beta: 1.0, rce_clip_a: -4.0, gamma: 1.0 }
    }
}

impl LossConfig {
    pub fn ce() -> Self {
        Self { kind: LossKind::Ce, ..Self::default() }
    }

    // Negated comparisons so that NaN is rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if !(self.sl_alpha >= 0.0 && self.sl_beta >= 0.0) {
            return Err(Error::invalid("sl_alpha and sl_beta must be non-negative"));
        }
        if !(self.rce_clip_a < 0.0) {
            return Err(Error::invalid(format!("rce_clip_a must be negative, got {}", self.rce_clip_a)));
        }
        Ok(())
    }
}

/// Cross entropy `-ln p[label]`, with `p` floored at [`PROB_FLOOR`].
pub fn loss_ce<T: Scalar>(probs: &[T], label: ClassId) -> T {
    -probs[label as usize].max(T::from_f64_lossy(PROB_FLOOR)).ln()
}

/// Reverse cross entropy against a one-hot target with `log 0 := clip_a`,
/// which reduces to `-clip_a * (1 - p[label])`.
pub fn loss_rce<T: Scalar>(probs: &[T], label: ClassId, clip_a: f64) -> T {
    T::from_f64_lossy(-clip_a) * (T::one() - probs[label as usize])
}

pub fn loss_sl<T: Scalar>(probs: &[T], label: ClassId, alpha: f64, beta: f64, clip_a: f64) -> T {
    T::from_f64_lossy(alpha) * loss_ce(probs, label) + T::from_f64_lossy(beta) * loss_rce(probs, label, clip_a)
}

/// Base loss `J` selected by `cfg.kind`.
pub fn base_loss<T: Scalar>(probs: &[T], label: ClassId, cfg: &LossConfig) -> T {
    match cfg.kind {
        LossKind::Ce => loss_ce(probs, label),
        LossKind::Sl => loss_sl(probs, label, cfg.sl_alpha, cfg.sl_beta, cfg.rce_clip_a),
    }
}

/// `(1 - gamma) * J(corrected) + gamma * J(noisy)` from precomputed probabilities.
pub fn hybrid_from_probs<T: Scalar>(probs: &[T], corrected: ClassId, noisy: ClassId, cfg: &LossConfig) -> T {
    let g = T::from_f64_lossy(cfg.gamma);
    (T::one() - g) * base_loss(probs, corrected, cfg) + g * base_loss(probs, noisy, cfg)
}

/// Adds `weight * dJ/dlogits` for the base loss at `label` into `out`.
pub(crate) fn add_base_grad<T: Scalar>(probs: &[T], label: ClassId, cfg: &LossConfig, weight: T, out: &mut [T]) {
    let y = label as usize;
    let py = probs[y];
    let (ce_w, rce_w) = match cfg.kind {
        LossKind::Ce => (T::one(), T::zero()),
        LossKind::Sl => (T::from_f64_lossy(cfg.sl_alpha), T::from_f64_lossy(cfg.sl_beta)),
    };
    // ce: p - e_y (flat once the floor is active)
    if ce_w != T::zero() && py > T::from_f64_lossy(PROB_FLOOR) {
        let w = weight * ce_w;
        for (o, &p) in out.iter_mut().zip(probs) {
            *o += w * p;
        }
        out[y] -= w;
    }
    // rce: clip_a * p_y * (e_y - p)
    if rce_w != T::zero() {
        let w = weight * rce_w * T::from_f64_lossy(cfg.rce_clip_a) * py;
        for (o, &p) in out.iter_mut().zip(probs) {
            *o -= w * p;
        }
        out[y] += w;
    }
}

/// Gradient of the hybrid loss with respect to the logits.
pub(crate) fn hybrid_grad<T: Scalar>(probs: &[T], corrected: ClassId, noisy: ClassId, cfg: &LossConfig) -> Vec<T> {
    let mut g = vec![T::zero(); probs.len()];
    let gamma = T::from_f64_lossy(cfg.gamma);
    if gamma != T::one() {
        add_base_grad(probs, corrected, cfg, T::one() - gamma, &mut g);
    }
    if gamma != T::zero() {
        add_base_grad(probs, noisy, cfg, gamma, &mut g);
    }
    g
}
