//! Evaluation metrics: binned expected calibration error, reliability
//! bins, Brier score, relative cross-entropy, entropy partitions,
//! temperature scaling, and the gap between mean cross-entropy and mean
//! entropy.
//!
//! Relative cross-entropy `RC(P, Q) = H(P, Q) - H(Q)` scores excess
//! confidence per prediction: it is zero in expectation for a perfectly
//! calibrated predictor, non-negative whenever the true-class
//! probability is at most `1/C`, and diverges for overconfident-wrong
//! predictions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numcore::{brier_score, entropy, softmax, LogitVec, NumError, ProbVec};
use crate::Scalar;

/// Default bin count for ECE and reliability diagrams.
pub const DEFAULT_BINS: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum CalibError {
    #[error("evaluation set must be non-empty")]
    Empty,
    #[error("need at least one bin")]
    NoBins,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("confidence {value} at index {index} outside [0, 1]")]
    BadConfidence { index: usize, value: f64 },
    #[error("temperature {0} must be positive")]
    BadTemperature(f64),
    #[error("malformed reliability CSV: {0}")]
    BadCsv(String),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// One confidence bin of a reliability diagram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "S: Serialize",
    deserialize = "S: serde::de::DeserializeOwned"
))]
pub struct ReliabilityBin<S: Scalar> {
    pub lo: S,
    pub hi: S,
    pub count: usize,
    /// Mean confidence of members; zero for empty bins.
    pub mean_conf: S,
    /// Empirical accuracy of members; zero for empty bins.
    pub accuracy: S,
}

/// Equal-width confidence bins over `[0, 1]`. Empty bins carry count 0
/// and drop out of the ECE weighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "S: Serialize",
    deserialize = "S: serde::de::DeserializeOwned"
))]
pub struct ReliabilityBins<S: Scalar> {
    pub bins: Vec<ReliabilityBin<S>>,
    pub total: usize,
}

impl<S: Scalar> ReliabilityBins<S> {
    /// Recomputes binned ECE exactly from the stored statistics.
    pub fn ece(&self) -> S {
        if self.total == 0 {
            return S::zero();
        }
        let n = S::count(self.total);
        self.bins
            .iter()
            .filter(|b| b.count > 0)
            .map(|b| S::count(b.count) / n * (b.accuracy - b.mean_conf).abs())
            .sum()
    }

    /// CSV with header `bin_lo,bin_hi,count,mean_conf,accuracy`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,count,mean_conf,accuracy\n");
        for b in &self.bins {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                b.lo.as_f64(),
                b.hi.as_f64(),
                b.count,
                b.mean_conf.as_f64(),
                b.accuracy.as_f64()
            ));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, CalibError> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| CalibError::BadCsv("empty".into()))?;
        if header.trim() != "bin_lo,bin_hi,count,mean_conf,accuracy" {
            return Err(CalibError::BadCsv(format!("unexpected header {header:?}")));
        }
        let mut bins = Vec::new();
        let mut total = 0;
        for line in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(CalibError::BadCsv(format!("expected 5 fields in {line:?}")));
            }
            let f = |s: &str| -> Result<f64, CalibError> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| CalibError::BadCsv(format!("{s:?}: {e}")))
            };
            let count: usize = fields[2]
                .trim()
                .parse()
                .map_err(|e| CalibError::BadCsv(format!("{:?}: {e}", fields[2])))?;
            total += count;
            bins.push(ReliabilityBin {
                lo: S::c(f(fields[0])?),
                hi: S::c(f(fields[1])?),
                count,
                mean_conf: S::c(f(fields[3])?),
                accuracy: S::c(f(fields[4])?),
            });
        }
        Ok(Self { bins, total })
    }
}

fn bin_index(conf: f64, bins: usize) -> usize {
    ((conf * bins as f64) as usize).min(bins - 1)
}

/// Binned top-label ECE: `sum_b (n_b / n) |acc_b - conf_b|` over
/// equal-width bins.
pub fn ece<S: Scalar>(
    confidences: &[S],
    correct: &[bool],
    bins: usize,
) -> Result<S, CalibError> {
    Ok(bin_confidences(confidences, correct, bins)?.ece())
}

fn bin_confidences<S: Scalar>(
    confidences: &[S],
    correct: &[bool],
    bins: usize,
) -> Result<ReliabilityBins<S>, CalibError> {
    if confidences.is_empty() {
        return Err(CalibError::Empty);
    }
    if bins == 0 {
        return Err(CalibError::NoBins);
    }
    if confidences.len() != correct.len() {
        return Err(CalibError::LengthMismatch {
            left: confidences.len(),
            right: correct.len(),
        });
    }
    let mut counts = vec![0usize; bins];
    let mut conf_sums = vec![S::zero(); bins];
    let mut hits = vec![0usize; bins];
    for (i, (&c, &ok)) in confidences.iter().zip(correct).enumerate() {
        let cf = c.as_f64();
        if !(0.0..=1.0).contains(&cf) {
            return Err(CalibError::BadConfidence { index: i, value: cf });
        }
        let b = bin_index(cf, bins);
        counts[b] += 1;
        conf_sums[b] += c;
        hits[b] += usize::from(ok);
    }
    let width = S::one() / S::count(bins);
    let out = (0..bins)
        .map(|b| {
            let (mean_conf, accuracy) = if counts[b] > 0 {
                let n = S::count(counts[b]);
                (conf_sums[b] / n, S::count(hits[b]) / n)
            } else {
                (S::zero(), S::zero())
            };
            ReliabilityBin {
                lo: width * S::count(b),
                hi: if b + 1 == bins {
                    S::one()
                } else {
                    width * S::count(b + 1)
                },
                count: counts[b],
                mean_conf,
                accuracy,
            }
        })
        .collect();
    Ok(ReliabilityBins {
        bins: out,
        total: confidences.len(),
    })
}

/// Reliability bins of predicted distributions against labels, using
/// top-label confidence.
pub fn reliability_bins<S: Scalar>(
    probs: &[ProbVec<S>],
    labels: &[usize],
    bins: usize,
) -> Result<ReliabilityBins<S>, CalibError> {
    if probs.len() != labels.len() {
        return Err(CalibError::LengthMismatch {
            left: probs.len(),
            right: labels.len(),
        });
    }
    let confidences: Vec<S> = probs.iter().map(ProbVec::max_prob).collect();
    let correct: Vec<bool> = probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| p.argmax() == y)
        .collect();
    bin_confidences(&confidences, &correct, bins)
}

/// One-vs-all ECE: for each class, bins the predicted class probability
/// against the binary event `label == class`; classes are averaged.
/// Shares the binning core with the top-label variant.
pub fn ece_one_vs_all<S: Scalar>(
    probs: &[ProbVec<S>],
    labels: &[usize],
    bins: usize,
) -> Result<S, CalibError> {
    if probs.is_empty() {
        return Err(CalibError::Empty);
    }
    if probs.len() != labels.len() {
        return Err(CalibError::LengthMismatch {
            left: probs.len(),
            right: labels.len(),
        });
    }
    let classes = probs[0].len();
    let mut acc = S::zero();
    for c in 0..classes {
        let conf: Vec<S> = probs.iter().map(|p| p[c]).collect();
        let outcome: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        acc += bin_confidences(&conf, &outcome, bins)?.ece();
    }
    Ok(acc / S::count(classes))
}

/// Relative cross-entropy of a hard label against prediction `q`:
/// `RC = -log q_y - H(q)`. Returns `+inf` when `q_y = 0`.
pub fn rc<S: Scalar>(y: usize, q: &ProbVec<S>) -> S {
    let qy = q[y];
    if qy <= S::zero() {
        return S::infinity();
    }
    -qy.ln() - entropy(q)
}

/// Mean RC with the infinite sentinel values counted separately so they
/// do not poison the average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanRc<S> {
    /// Mean over predictions with `q_y > 0`.
    pub mean: S,
    /// Number of `+inf` sentinel values excluded from the mean.
    pub infinite: usize,
}

pub fn mean_rc<S: Scalar>(probs: &[ProbVec<S>], labels: &[usize]) -> Result<MeanRc<S>, CalibError> {
    if probs.is_empty() {
        return Err(CalibError::Empty);
    }
    if probs.len() != labels.len() {
        return Err(CalibError::LengthMismatch {
            left: probs.len(),
            right: labels.len(),
        });
    }
    let mut sum = S::zero();
    let mut finite = 0usize;
    let mut infinite = 0usize;
    for (p, &y) in probs.iter().zip(labels) {
        let v = rc(y, p);
        if v.is_finite() {
            sum += v;
            finite += 1;
        } else {
            infinite += 1;
        }
    }
    let mean = if finite > 0 {
        sum / S::count(finite)
    } else {
        S::zero()
    };
    Ok(MeanRc { mean, infinite })
}

/// Splits prediction entropies by correctness of the argmax (ties break
/// toward the lowest class index, so a tie on the true class counts as
/// correct only if no lower class matches it).
pub fn entropy_partition<S: Scalar>(
    probs: &[ProbVec<S>],
    labels: &[usize],
) -> Result<(Vec<S>, Vec<S>), CalibError> {
    if probs.is_empty() {
        return Err(CalibError::Empty);
    }
    if probs.len() != labels.len() {
        return Err(CalibError::LengthMismatch {
            left: probs.len(),
            right: labels.len(),
        });
    }
    let mut correct = Vec::new();
    let mut incorrect = Vec::new();
    for (p, &y) in probs.iter().zip(labels) {
        let h = entropy(p);
        if p.argmax() == y {
            correct.push(h);
        } else {
            incorrect.push(h);
        }
    }
    Ok((correct, incorrect))
}

/// Softmax of `z / tau`. Argmax-preserving for every `tau > 0`.
pub fn temperature_scale<S: Scalar>(z: &LogitVec<S>, tau: S) -> Result<ProbVec<S>, CalibError> {
    if !(tau > S::zero()) {
        return Err(CalibError::BadTemperature(tau.as_f64()));
    }
    let scaled: Vec<S> = z.as_slice().iter().map(|&v| v / tau).collect();
    Ok(softmax(&LogitVec::new(scaled)?))
}

/// Mean absolute gap between per-setting mean cross-entropy and mean
/// entropy: the aggregate excess-confidence statistic.
pub fn mae_entropy_vs_xent<S: Scalar>(gaps: &[(S, S)]) -> Result<S, CalibError> {
    if gaps.is_empty() {
        return Err(CalibError::Empty);
    }
    let sum: S = gaps.iter().map(|&(xent, ent)| (xent - ent).abs()).sum();
    Ok(sum / S::count(gaps.len()))
}

/// Fixed-width histogram used for the entropy distributions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "S: Serialize",
    deserialize = "S: serde::de::DeserializeOwned"
))]
pub struct Histogram<S: Scalar> {
    pub lo: S,
    pub hi: S,
    pub counts: Vec<usize>,
}

impl<S: Scalar> Histogram<S> {
    fn build(values: &[S], lo: S, hi: S, bins: usize) -> Self {
        let mut counts = vec![0usize; bins.max(1)];
        let n_bins = counts.len();
        let span = (hi - lo).max(S::epsilon());
        for &v in values {
            let frac = ((v - lo) / span).as_f64().clamp(0.0, 1.0);
            counts[bin_index(frac, n_bins)] += 1;
        }
        Self { lo, hi, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

/// Per-run evaluation bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "S: Serialize",
    deserialize = "S: serde::de::DeserializeOwned"
))]
pub struct CalibrationReport<S: Scalar> {
    pub n_eval: usize,
    pub accuracy: S,
    pub ece: S,
    pub brier_mean: S,
    /// Mean relative cross-entropy over finite values.
    pub mean_rc: S,
    /// Predictions whose RC hit the `+inf` sentinel (zero mass on the
    /// true class).
    pub rc_infinite: usize,
    /// Mean `H(e_y, q)` over predictions with finite cross-entropy.
    pub mean_cross_entropy: S,
    /// Mean `H(q)` over all predictions.
    pub mean_entropy: S,
    /// `|mean_cross_entropy - mean_entropy|`.
    pub entropy_gap: S,
    pub mean_entropy_correct: S,
    pub mean_entropy_incorrect: S,
    pub entropy_correct: Histogram<S>,
    pub entropy_incorrect: Histogram<S>,
    pub reliability: ReliabilityBins<S>,
    pub per_class_accuracy: Vec<S>,
    pub per_class_counts: Vec<usize>,
}

/// Evaluates predictions against labels with `bins` confidence bins and
/// entropy histograms over `[0, log C]`.
pub fn evaluate_predictions<S: Scalar>(
    probs: &[ProbVec<S>],
    labels: &[usize],
    bins: usize,
) -> Result<CalibrationReport<S>, CalibError> {
    if probs.is_empty() {
        return Err(CalibError::Empty);
    }
    if probs.len() != labels.len() {
        return Err(CalibError::LengthMismatch {
            left: probs.len(),
            right: labels.len(),
        });
    }
    let n = probs.len();
    let classes = probs[0].len();
    let reliability = reliability_bins(probs, labels, bins)?;

    let mut hits = 0usize;
    let mut brier_sum = S::zero();
    let mut xent_sum = S::zero();
    let mut xent_finite = 0usize;
    let mut ent_sum = S::zero();
    let mut class_hits = vec![0usize; classes];
    let mut class_counts = vec![0usize; classes];
    for (p, &y) in probs.iter().zip(labels) {
        let correct = p.argmax() == y;
        hits += usize::from(correct);
        class_counts[y] += 1;
        class_hits[y] += usize::from(correct);
        brier_sum += brier_score(y, p)?;
        let qy = p[y];
        if qy > S::zero() {
            xent_sum += -qy.ln();
            xent_finite += 1;
        }
        ent_sum += entropy(p);
    }
    let rc_stats = mean_rc(probs, labels)?;
    let (ent_correct, ent_incorrect) = entropy_partition(probs, labels)?;
    let mean_of = |v: &[S]| {
        if v.is_empty() {
            S::zero()
        } else {
            v.iter().copied().sum::<S>() / S::count(v.len())
        }
    };
    let log_c = S::count(classes).ln();
    let mean_xent = if xent_finite > 0 {
        xent_sum / S::count(xent_finite)
    } else {
        S::zero()
    };
    let mean_ent = ent_sum / S::count(n);
    Ok(CalibrationReport {
        n_eval: n,
        accuracy: S::count(hits) / S::count(n),
        ece: reliability.ece(),
        brier_mean: brier_sum / S::count(n),
        mean_rc: rc_stats.mean,
        rc_infinite: rc_stats.infinite,
        mean_cross_entropy: mean_xent,
        mean_entropy: mean_ent,
        entropy_gap: (mean_xent - mean_ent).abs(),
        mean_entropy_correct: mean_of(&ent_correct),
        mean_entropy_incorrect: mean_of(&ent_incorrect),
        entropy_correct: Histogram::build(&ent_correct, S::zero(), log_c, bins),
        entropy_incorrect: Histogram::build(&ent_incorrect, S::zero(), log_c, bins),
        reliability,
        per_class_accuracy: (0..classes)
            .map(|c| {
                if class_counts[c] > 0 {
                    S::count(class_hits[c]) / S::count(class_counts[c])
                } else {
                    S::zero()
                }
            })
            .collect(),
        per_class_counts: class_counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::RngStream;
    use approx::assert_relative_eq;

    fn pv(vals: &[f64]) -> ProbVec<f64> {
        ProbVec::new(vals.to_vec()).unwrap()
    }

    fn lv(vals: &[f64]) -> LogitVec<f64> {
        LogitVec::new(vals.to_vec()).unwrap()
    }

    #[test]
    fn ece_perfect_predictions() {
        let conf = vec![1.0; 8];
        let correct = vec![true; 8];
        assert_eq!(ece(&conf, &correct, 10).unwrap(), 0.0);
    }

    #[test]
    fn ece_two_populated_bin_fixture() {
        // Width-0.25 bins split the stream into (0.6, 0.7 | hit rates
        // 1,0) and (0.9, 0.9 | 1,1), giving
        // (2/4)|0.5-0.65| + (2/4)|1.0-0.9| = 0.125 exactly.
        let conf = [0.6, 0.7, 0.9, 0.9];
        let correct = [true, false, true, true];
        let v = ece(&conf, &correct, 4).unwrap();
        assert_relative_eq!(v, 0.125, epsilon = 1e-15);
    }

    #[test]
    fn ece_single_wrong_confident() {
        assert_eq!(ece(&[1.0], &[false], 10).unwrap(), 1.0);
    }

    #[test]
    fn ece_rejects_empty() {
        assert_eq!(ece::<f64>(&[], &[], 10), Err(CalibError::Empty));
    }

    /// Stream of predictions whose labels are drawn from the predicted
    /// distribution itself: calibrated by construction.
    fn calibrated_stream(n: usize, seed: u64) -> (Vec<ProbVec<f64>>, Vec<usize>) {
        let mut rng = RngStream::new(seed, 0);
        let mut probs = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            // Two classes, logit gap uniform on [-2, 2]: confidences
            // spread over mid bins with thousands of members each.
            let delta = rng.uniform() * 4.0 - 2.0;
            let p1 = 1.0 / (1.0 + (-delta as f64).exp());
            let q = pv(&[p1, 1.0 - p1]);
            let y = usize::from(rng.uniform() >= p1);
            probs.push(q);
            labels.push(y);
        }
        (probs, labels)
    }

    #[test]
    fn reliability_of_calibrated_stream() {
        let (probs, labels) = calibrated_stream(100_000, 13);
        let bins = reliability_bins(&probs, &labels, 10).unwrap();
        for b in bins.bins.iter().filter(|b| b.count > 0) {
            assert!(
                (b.accuracy - b.mean_conf).abs() <= 0.02,
                "bin [{}, {}) gap {}",
                b.lo,
                b.hi,
                (b.accuracy - b.mean_conf).abs()
            );
        }
        assert!(bins.ece() <= 0.02);
    }

    #[test]
    fn reliability_single_bin_holds_all() {
        let probs = vec![pv(&[0.55, 0.45]); 20];
        let labels = vec![0usize; 20];
        let bins = reliability_bins(&probs, &labels, 10).unwrap();
        let populated: Vec<_> = bins.bins.iter().filter(|b| b.count > 0).collect();
        assert_eq!(populated.len(), 1);
        assert_eq!(populated[0].count, 20);
        assert_eq!(bins.total, 20);
    }

    #[test]
    fn reliability_csv_round_trip() {
        let (probs, labels) = calibrated_stream(500, 3);
        let bins = reliability_bins(&probs, &labels, 10).unwrap();
        let csv = bins.to_csv();
        let back = ReliabilityBins::<f64>::from_csv(&csv).unwrap();
        assert_eq!(bins, back);
    }

    #[test]
    fn rc_examples() {
        // Uniform two-class prediction scores zero for either label.
        assert_relative_eq!(rc(0, &pv(&[0.5, 0.5])), 0.0, epsilon = 1e-12);
        assert_relative_eq!(rc(1, &pv(&[0.5, 0.5])), 0.0, epsilon = 1e-12);
        // At q_y = 1/C the score is non-negative.
        let q = pv(&[0.25, 0.35, 0.4]);
        assert!(rc(0, &q) >= -1e-12);
        // Overconfident wrong prediction is large positive.
        let q = pv(&[0.01, 0.99]);
        let expect = -(0.01f64).ln() - entropy(&q);
        assert_relative_eq!(rc(0, &q), expect, epsilon = 1e-12);
        assert!((rc(0, &q) - 4.549).abs() < 1e-3);
        // Zero mass on the label: the +inf sentinel.
        assert_eq!(rc(0, &pv(&[0.0, 1.0])), f64::INFINITY);
    }

    #[test]
    fn rc_nonnegative_when_label_prob_small() {
        // 10^4 random (C, y, q) with q_y <= 1/C.
        let mut rng = RngStream::new(17, 0);
        for _ in 0..10_000 {
            let c = 2 + rng.index(9);
            let mut raw: Vec<f64> = (0..c).map(|_| -rng.uniform().max(1e-12).ln()).collect();
            let sum: f64 = raw.iter().sum();
            for v in &mut raw {
                *v /= sum;
            }
            let q = pv(&raw);
            // argmin q_y guarantees q_y <= 1/C.
            let y = (0..c)
                .min_by(|&a, &b| q[a].partial_cmp(&q[b]).unwrap())
                .unwrap();
            assert!(q[y] <= 1.0 / c as f64 + 1e-12);
            assert!(rc(y, &q) >= -1e-9);
        }
    }

    #[test]
    fn mean_rc_zero_cases() {
        // Uniform predictions with any hard labels: log C - log C = 0.
        let probs = vec![pv(&[0.25; 4]); 50];
        let labels: Vec<usize> = (0..50).map(|i| i % 4).collect();
        let m = mean_rc(&probs, &labels).unwrap();
        assert_relative_eq!(m.mean, 0.0, epsilon = 1e-12);
        assert_eq!(m.infinite, 0);

        // Hard-confident correct predictions: both terms almost zero.
        let q = pv(&[1.0 - 1e-9, 1e-9]);
        let probs = vec![q; 10];
        let labels = vec![0usize; 10];
        let m = mean_rc(&probs, &labels).unwrap();
        assert!(m.mean.abs() < 1e-7);
    }

    #[test]
    fn mean_rc_is_mean_xent_minus_mean_entropy() {
        let (probs, labels) = calibrated_stream(2_000, 5);
        let m = mean_rc(&probs, &labels).unwrap();
        let xent: f64 = probs
            .iter()
            .zip(&labels)
            .map(|(p, &y)| -p[y].ln())
            .sum::<f64>()
            / probs.len() as f64;
        let ent: f64 = probs.iter().map(entropy).sum::<f64>() / probs.len() as f64;
        assert_relative_eq!(m.mean, xent - ent, epsilon = 1e-12);
    }

    #[test]
    fn mean_rc_calibrated_within_three_standard_errors() {
        let n = 1_000_000;
        let c = 5;
        let mut rng = RngStream::new(31, 0);
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            let z: Vec<f64> = (0..c).map(|_| rng.normal()).collect();
            let q = softmax(&lv(&z));
            // Draw the label from q itself.
            let u = rng.uniform();
            let mut acc = 0.0;
            let mut y = c - 1;
            for i in 0..c {
                acc += q[i];
                if u < acc {
                    y = i;
                    break;
                }
            }
            values.push(rc(y, &q));
        }
        let mean: f64 = values.iter().sum::<f64>() / n as f64;
        let var: f64 =
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!(
            mean.abs() <= 3.0 * se,
            "mean RC {mean} exceeds 3 standard errors {se}"
        );
    }

    #[test]
    fn entropy_partition_cases() {
        let probs = vec![pv(&[0.9, 0.1]), pv(&[0.2, 0.8])];
        let (correct, incorrect) = entropy_partition(&probs, &[0, 1]).unwrap();
        assert_eq!(correct.len(), 2);
        assert!(incorrect.is_empty());

        // Tie [0.5, 0.5] resolves to class 0.
        let probs = vec![pv(&[0.5, 0.5])];
        let (correct, incorrect) = entropy_partition(&probs, &[0]).unwrap();
        assert_eq!(correct.len(), 1);
        assert!(incorrect.is_empty());
        let (correct, incorrect) = entropy_partition(&probs, &[1]).unwrap();
        assert!(correct.is_empty());
        assert_eq!(incorrect.len(), 1);

        // Entropies stay within [0, log C].
        let (c2, i2) = entropy_partition(&[pv(&[0.7, 0.2, 0.1])], &[2]).unwrap();
        for h in c2.iter().chain(&i2) {
            assert!(*h >= 0.0 && *h <= (3.0f64).ln() + 1e-12);
        }
    }

    #[test]
    fn temperature_scale_examples() {
        let z = lv(&[3.0, 0.0]);
        let p1 = temperature_scale(&z, 1.0).unwrap();
        let direct = softmax(&z);
        assert_relative_eq!(p1[0], direct[0], epsilon = 1e-15);

        let p_inf = temperature_scale(&z, 1e6).unwrap();
        assert!((p_inf[0] - 0.5).abs() < 1e-5);

        assert!(temperature_scale(&z, 0.0).is_err());
        assert!(temperature_scale(&z, -1.0).is_err());
    }

    #[test]
    fn temperature_preserves_argmax() {
        let mut rng = RngStream::new(23, 0);
        for _ in 0..10_000 {
            let c = 2 + rng.index(6);
            let z: Vec<f64> = (0..c).map(|_| rng.normal() * 3.0).collect();
            let tau = rng.uniform() * 9.9 + 0.1;
            let zl = lv(&z);
            let before = softmax(&zl).argmax();
            let after = temperature_scale(&zl, tau).unwrap().argmax();
            assert_eq!(before, after);
        }
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae_entropy_vs_xent(&[(0.7, 0.7)]).unwrap(), 0.0);
        let v = mae_entropy_vs_xent(&[(0.5, 0.4), (0.9, 0.6)]).unwrap();
        assert_relative_eq!(v, 0.2, epsilon = 1e-15);
        assert!(mae_entropy_vs_xent::<f64>(&[]).is_err());
    }

    #[test]
    fn mae_calibrated_stream_small() {
        let (probs, labels) = calibrated_stream(100_000, 41);
        let report = evaluate_predictions(&probs, &labels, 10).unwrap();
        assert!(
            report.entropy_gap <= 0.02,
            "entropy gap {}",
            report.entropy_gap
        );
    }

    #[test]
    fn oracle_predictor_scores_zero() {
        // One-hot predictions that are always right: ECE and Brier = 0.
        let labels: Vec<usize> = (0..64).map(|i| i % 3).collect();
        let probs: Vec<ProbVec<f64>> = labels
            .iter()
            .map(|&y| ProbVec::one_hot(y, 3).unwrap())
            .collect();
        let report = evaluate_predictions(&probs, &labels, 10).unwrap();
        assert_eq!(report.ece, 0.0);
        assert_eq!(report.brier_mean, 0.0);
        assert_eq!(report.accuracy, 1.0);
        assert_eq!(report.rc_infinite, 0);
    }

    #[test]
    fn report_partitions_and_counts() {
        let probs = vec![
            pv(&[0.8, 0.1, 0.1]),
            pv(&[0.1, 0.8, 0.1]),
            pv(&[0.1, 0.1, 0.8]),
            pv(&[0.4, 0.5, 0.1]),
        ];
        let labels = vec![0, 1, 0, 0];
        let r = evaluate_predictions(&probs, &labels, 5).unwrap();
        assert_eq!(r.n_eval, 4);
        assert_relative_eq!(r.accuracy, 0.5, epsilon = 1e-15);
        assert_eq!(
            r.entropy_correct.total() + r.entropy_incorrect.total(),
            r.n_eval
        );
        assert_eq!(r.per_class_counts, vec![3, 1, 0]);
        assert_relative_eq!(r.per_class_accuracy[0], 1.0 / 3.0, epsilon = 1e-12);
        assert_eq!(r.per_class_accuracy[2], 0.0);
        // ECE recomputable from the exported bins.
        assert_relative_eq!(r.ece, r.reliability.ece(), epsilon = 1e-15);
    }

    #[test]
    fn one_vs_all_matches_top_label_for_binary_symmetric() {
        let (probs, labels) = calibrated_stream(20_000, 8);
        let ova = ece_one_vs_all(&probs, &labels, 10).unwrap();
        // Calibrated stream: both variants are near zero.
        assert!(ova <= 0.02, "one-vs-all ECE {ova}");
    }
}
