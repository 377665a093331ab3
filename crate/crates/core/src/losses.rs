//! Training objectives as pure value-and-gradient functions of logits.
//!
//! Single-example losses (plain, re-weighted, smoothed, focal) and the
//! set losses over summed logits (hard: cross-entropy against the pair
//! class; soft: cross-entropy against the set's label proportions).
//! Gradients are with respect to the logits; parameter chaining lives in
//! the model module.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numcore::{log_softmax, softmax, LogitVec, NumError};
use crate::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("class index {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("class weight for class {class} must be positive, got {weight}")]
    NonPositiveWeight { class: usize, weight: f64 },
    #[error("smoothing mass {0} must lie in [0, 1)")]
    BadSmoothing(f64),
    #[error("focal exponent {0} must be non-negative")]
    BadFocal(f64),
    #[error("logit list must be non-empty")]
    Empty,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("label multiset holds {got} labels, expected {expected}")]
    BadSetSize { got: usize, expected: usize },
    #[error("loss kind {0:?} cannot be evaluated on a single example")]
    NotSingleExample(LossKind),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Which objective to train with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Vanilla,
    Weighted,
    LabelSmoothing,
    Focal,
    OkoHard,
    OkoSoft,
}

/// Loss selection plus its hyperparameters. `class_weights` carry the
/// per-class sample counts for the re-weighted loss and are filled in by
/// the trainer from the realized training split when absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "S: Serialize",
    deserialize = "S: serde::de::DeserializeOwned"
))]
pub struct LossSpec<S: Scalar> {
    pub kind: LossKind,
    /// Smoothing mass in `[0, 1)`; only read by `LabelSmoothing`.
    pub alpha: S,
    /// Focal exponent `>= 0`; only read by `Focal`.
    pub gamma: S,
    /// Per-class counts `n_c` for the re-weighted loss.
    pub class_weights: Option<Vec<S>>,
    /// Scale constant for the re-weighted loss; the trainer sets `n / C`.
    pub weight_scale: Option<S>,
}

impl<S: Scalar> LossSpec<S> {
    pub fn new(kind: LossKind) -> Self {
        Self {
            kind,
            alpha: S::c(0.1),
            gamma: S::c(2.0),
            class_weights: None,
            weight_scale: None,
        }
    }

    pub fn with_alpha(mut self, alpha: S) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_gamma(mut self, gamma: S) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn is_set_loss(&self) -> bool {
        matches!(self.kind, LossKind::OkoHard | LossKind::OkoSoft)
    }

    /// Evaluates a single-example loss at logits `z` for label `y`.
    pub fn eval_single(&self, z: &LogitVec<S>, y: usize) -> Result<(S, Vec<S>), LossError> {
        match self.kind {
            LossKind::Vanilla => vanilla_ce(z, y),
            LossKind::LabelSmoothing => smoothed_ce(z, y, self.alpha),
            LossKind::Focal => focal(z, y, self.gamma),
            LossKind::Weighted => {
                let weights = self
                    .class_weights
                    .as_deref()
                    .ok_or(LossError::NonPositiveWeight { class: 0, weight: 0.0 })?;
                let scale = self.weight_scale.unwrap_or_else(|| {
                    let n: S = weights.iter().copied().sum();
                    n / S::count(weights.len())
                });
                weighted_ce(z, y, weights, scale)
            }
            kind => Err(LossError::NotSingleExample(kind)),
        }
    }
}

fn check_label<S: Scalar>(z: &LogitVec<S>, y: usize) -> Result<(), LossError> {
    if y >= z.len() {
        return Err(LossError::ClassOutOfRange {
            class: y,
            classes: z.len(),
        });
    }
    Ok(())
}

/// Plain cross-entropy: `-log softmax(z)_y`; gradient `softmax(z) - e_y`.
pub fn vanilla_ce<S: Scalar>(z: &LogitVec<S>, y: usize) -> Result<(S, Vec<S>), LossError> {
    check_label(z, y)?;
    let log_p = log_softmax(z);
    let loss = -log_p[y];
    let mut grad: Vec<S> = log_p.as_slice().iter().map(|&l| l.exp()).collect();
    grad[y] -= S::one();
    Ok((loss, grad))
}

/// Cross-entropy re-weighted inversely to class frequency:
/// `(scale / n_y) * vanilla`. `class_counts` hold the per-class counts;
/// `scale` brings the loss back onto the plain scale (`n / C` in the
/// trainer).
pub fn weighted_ce<S: Scalar>(
    z: &LogitVec<S>,
    y: usize,
    class_counts: &[S],
    scale: S,
) -> Result<(S, Vec<S>), LossError> {
    check_label(z, y)?;
    if class_counts.len() != z.len() {
        return Err(LossError::LengthMismatch {
            left: class_counts.len(),
            right: z.len(),
        });
    }
    for (c, &w) in class_counts.iter().enumerate() {
        if !(w > S::zero()) {
            return Err(LossError::NonPositiveWeight {
                class: c,
                weight: w.as_f64(),
            });
        }
    }
    let (loss, mut grad) = vanilla_ce(z, y)?;
    let factor = scale / class_counts[y];
    for g in &mut grad {
        *g *= factor;
    }
    Ok((loss * factor, grad))
}

/// Label-smoothed cross-entropy against `e_y (1 - alpha) + alpha / C`.
pub fn smoothed_ce<S: Scalar>(
    z: &LogitVec<S>,
    y: usize,
    alpha: S,
) -> Result<(S, Vec<S>), LossError> {
    check_label(z, y)?;
    if !(alpha >= S::zero() && alpha < S::one()) {
        return Err(LossError::BadSmoothing(alpha.as_f64()));
    }
    let classes = S::count(z.len());
    let background = alpha / classes;
    let log_p = log_softmax(z);
    let mut loss = S::zero();
    let mut grad: Vec<S> = log_p.as_slice().iter().map(|&l| l.exp()).collect();
    for (i, g) in grad.iter_mut().enumerate() {
        let target = if i == y {
            S::one() - alpha + background
        } else {
            background
        };
        loss -= target * log_p[i];
        *g -= target;
    }
    Ok((loss, grad))
}

/// Focal loss `-(1 - p_y)^gamma log p_y` with `p = softmax(z)`.
pub fn focal<S: Scalar>(z: &LogitVec<S>, y: usize, gamma: S) -> Result<(S, Vec<S>), LossError> {
    check_label(z, y)?;
    if !(gamma >= S::zero()) {
        return Err(LossError::BadFocal(gamma.as_f64()));
    }
    let p = softmax(z);
    let py = p[y];
    let miss = S::one() - py;
    if miss <= S::zero() {
        // Exact hit: the loss and its gradient both vanish in the limit.
        return Ok((S::zero(), vec![S::zero(); z.len()]));
    }
    let log_py = log_softmax(z)[y];
    let loss = -miss.powf(gamma) * log_py;
    // dL/dp_y, then the softmax Jacobian row.
    let dl_dpy = gamma * miss.powf(gamma - S::one()) * log_py - miss.powf(gamma) / py;
    let mut grad = Vec::with_capacity(z.len());
    for (j, &pj) in p.as_slice().iter().enumerate() {
        let jac = if j == y { py * (S::one() - pj) } else { -py * pj };
        grad.push(dl_dpy * jac);
    }
    Ok((loss, grad))
}

/// Elementwise sum of per-example logits: the set head. Permutation
/// invariant by construction.
pub fn set_logit_sum<S: Scalar>(items: &[LogitVec<S>]) -> Result<LogitVec<S>, LossError> {
    let first = items.first().ok_or(LossError::Empty)?;
    let mut acc = first.as_slice().to_vec();
    for item in &items[1..] {
        if item.len() != acc.len() {
            return Err(LossError::LengthMismatch {
                left: item.len(),
                right: acc.len(),
            });
        }
        for (a, &v) in acc.iter_mut().zip(item.as_slice()) {
            *a += v;
        }
    }
    Ok(LogitVec::new(acc)?)
}

/// Hard set loss: cross-entropy of the summed logits against the pair
/// class.
pub fn oko_hard<S: Scalar>(
    set_logits: &LogitVec<S>,
    pair_class: usize,
) -> Result<(S, Vec<S>), LossError> {
    vanilla_ce(set_logits, pair_class)
}

/// Soft set loss: cross-entropy of the summed logits against the label
/// proportions of the set.
pub fn oko_soft<S: Scalar>(
    set_logits: &LogitVec<S>,
    labels: &[usize],
) -> Result<(S, Vec<S>), LossError> {
    if labels.is_empty() {
        return Err(LossError::Empty);
    }
    let classes = set_logits.len();
    let mut target = vec![S::zero(); classes];
    let share = S::one() / S::count(labels.len());
    for &y in labels {
        if y >= classes {
            return Err(LossError::ClassOutOfRange {
                class: y,
                classes,
            });
        }
        target[y] += share;
    }
    let log_p = log_softmax(set_logits);
    let mut loss = S::zero();
    let mut grad: Vec<S> = log_p.as_slice().iter().map(|&l| l.exp()).collect();
    for (i, g) in grad.iter_mut().enumerate() {
        loss -= target[i] * log_p[i];
        *g -= target[i];
    }
    Ok((loss, grad))
}
