//! Numerically stable probability primitives and seeded randomness.
//!
//! Everything downstream — losses, training, calibration, theory checks —
//! goes through the softmax/entropy routines here, so they are written for
//! the full logit range (max-subtraction plus `ln_1p` refinement) rather
//! than the textbook formulas.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

use crate::Scalar;

/// Errors raised by the probability primitives.
#[derive(Debug, Error, PartialEq)]
pub enum NumError {
    #[error("non-finite entry {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("vector must be non-empty")]
    Empty,
    #[error("probabilities sum to {sum}, expected 1 within {tol}")]
    NotNormalized { sum: f64, tol: f64 },
    #[error("negative probability {value} at index {index}")]
    NegativeProb { index: usize, value: f64 },
    #[error("class index {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
}

/// Vector of unnormalized log-scores, one per class. Entries are always
/// finite; the constructor rejects NaN and infinities so no downstream
/// operation has to re-check.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVec<S: Scalar>(Vec<S>);

impl<S: Scalar> LogitVec<S> {
    pub fn new(values: Vec<S>) -> Result<Self, NumError> {
        if values.is_empty() {
            return Err(NumError::Empty);
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(NumError::NonFinite {
                    index: i,
                    value: v.as_f64(),
                });
            }
        }
        Ok(Self(values))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<S> {
        self.0
    }
}

impl<S: Scalar> std::ops::Index<usize> for LogitVec<S> {
    type Output = S;
    fn index(&self, i: usize) -> &S {
        &self.0[i]
    }
}

/// Probability vector: non-negative entries summing to one.
///
/// The normalization tolerance is `1e-9` (widened for `f32` and for very
/// long vectors, where accumulated rounding exceeds it).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVec<S: Scalar>(Vec<S>);

fn norm_tol<S: Scalar>(len: usize) -> S {
    let rounding = S::epsilon() * S::count(len.max(1)) * S::c(16.0);
    S::c(1e-9).max(rounding)
}

impl<S: Scalar> ProbVec<S> {
    pub fn new(values: Vec<S>) -> Result<Self, NumError> {
        if values.is_empty() {
            return Err(NumError::Empty);
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(NumError::NonFinite {
                    index: i,
                    value: v.as_f64(),
                });
            }
            if v < S::zero() {
                return Err(NumError::NegativeProb {
                    index: i,
                    value: v.as_f64(),
                });
            }
        }
        let sum: S = values.iter().copied().sum();
        let tol = norm_tol::<S>(values.len());
        if (sum - S::one()).abs() > tol {
            return Err(NumError::NotNormalized {
                sum: sum.as_f64(),
                tol: tol.as_f64(),
            });
        }
        Ok(Self(values))
    }

    /// One-hot distribution on `class`.
    pub fn one_hot(class: usize, classes: usize) -> Result<Self, NumError> {
        if class >= classes {
            return Err(NumError::ClassOutOfRange { class, classes });
        }
        let mut v = vec![S::zero(); classes];
        v[class] = S::one();
        Ok(Self(v))
    }

    /// Uniform distribution over `classes` entries.
    pub fn uniform(classes: usize) -> Result<Self, NumError> {
        if classes == 0 {
            return Err(NumError::Empty);
        }
        Ok(Self(vec![S::one() / S::count(classes); classes]))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<S> {
        self.0
    }

    /// Index of the largest entry, ties broken toward the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for i in 1..self.0.len() {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        best
    }

    /// Largest entry (top-label confidence).
    pub fn max_prob(&self) -> S {
        self.0[self.argmax()]
    }
}

impl<S: Scalar> std::ops::Index<usize> for ProbVec<S> {
    type Output = S;
    fn index(&self, i: usize) -> &S {
        &self.0[i]
    }
}

/// Log-sum-exp of `z` split as `(max, ln_1p(sum of exp(z_i - max) over
/// i != argmax))`. Keeping the two parts separate preserves tiny tails
/// (for example `exp(-50)`) that would round away in `max + tail`.
fn log_sum_exp_parts<S: Scalar>(z: &[S]) -> (S, S) {
    let mut arg = 0;
    for i in 1..z.len() {
        if z[i] > z[arg] {
            arg = i;
        }
    }
    let m = z[arg];
    let mut rest = S::zero();
    for (i, &v) in z.iter().enumerate() {
        if i != arg {
            rest += (v - m).exp();
        }
    }
    (m, rest.ln_1p())
}

/// Softmax with max-subtraction. Invariant to adding a constant to all
/// entries, so arbitrarily large logits never overflow.
pub fn softmax<S: Scalar>(z: &LogitVec<S>) -> ProbVec<S> {
    let zs = z.as_slice();
    let m = zs.iter().copied().fold(S::neg_infinity(), S::max);
    let mut out: Vec<S> = zs.iter().map(|&v| (v - m).exp()).collect();
    let sum: S = out.iter().copied().sum();
    for v in &mut out {
        *v /= sum;
    }
    ProbVec(out)
}

/// `log(softmax(z))` computed directly via log-sum-exp, never forming the
/// softmax first. Entries are `<= 0` and their exponentials sum to one.
pub fn log_softmax<S: Scalar>(z: &LogitVec<S>) -> LogitVec<S> {
    let (m, tail) = log_sum_exp_parts(z.as_slice());
    LogitVec(
        z.as_slice()
            .iter()
            .map(|&v| ((v - m) - tail).min(S::zero()))
            .collect(),
    )
}

/// Shannon entropy in nats, with `0 * log 0 := 0`.
pub fn entropy<S: Scalar>(p: &ProbVec<S>) -> S {
    let mut h = S::zero();
    for &v in p.as_slice() {
        if v > S::zero() {
            h -= v * v.ln();
        }
    }
    h.max(S::zero())
}

/// Cross-entropy `H(p, q) = -sum p_i log q_i` in nats.
///
/// Returns `+inf` when `q` puts zero mass where `p` does not: an
/// overconfident-wrong prediction is a legitimate outcome that callers
/// count rather than an error.
pub fn cross_entropy<S: Scalar>(p: &ProbVec<S>, q: &ProbVec<S>) -> S {
    assert_eq!(p.len(), q.len(), "cross_entropy over mismatched lengths");
    let mut h = S::zero();
    for (&pi, &qi) in p.as_slice().iter().zip(q.as_slice()) {
        if pi > S::zero() {
            if qi <= S::zero() {
                return S::infinity();
            }
            h -= pi * qi.ln();
        }
    }
    h
}

/// Brier score `sum_i (q_i - [i = y])^2`; ranges over `[0, 2]`.
pub fn brier_score<S: Scalar>(y: usize, q: &ProbVec<S>) -> Result<S, NumError> {
    if y >= q.len() {
        return Err(NumError::ClassOutOfRange {
            class: y,
            classes: q.len(),
        });
    }
    let mut s = S::zero();
    for (i, &qi) in q.as_slice().iter().enumerate() {
        let t = if i == y { S::one() } else { S::zero() };
        s += (qi - t) * (qi - t);
    }
    Ok(s)
}

/// Deterministic random stream keyed by `(seed, stream id)`.
///
/// Pinned to ChaCha8: equal keys reproduce the identical draw sequence on
/// every platform, and distinct stream ids give statistically independent
/// sequences. Single-owner mutable state; concurrent work takes distinct
/// stream ids instead of sharing one.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform draw from `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.rng.random()
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// Uniform index from `0..n`. Panics if `n == 0`.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be non-empty");
        self.rng.random_range(0..n)
    }

    /// `k` distinct values from `0..n`, uniform over ordered draws
    /// without replacement (partial Fisher-Yates).
    pub fn distinct_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} distinct values from 0..{n}");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.index(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.index(i + 1);
            items.swap(i, j);
        }
    }
}
