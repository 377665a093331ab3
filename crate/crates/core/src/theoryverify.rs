//! Numerical verification of the set-loss theory: the three-point
//! minimizer limits, the exact expected-loss objective and its
//! sampler-enumeration twin, coordinate convexity and the divergence
//! path of the memorized-logit risks, the re-weighting/batch-balancing
//! equivalence, the calibration lemmas, and the entropic-regularization
//! gap. Every check runs against an independent oracle (exact
//! enumeration, finite differences, or Monte-Carlo) and reports a
//! machine-readable verdict.
//!
//! This module is pinned to `f64`: its tolerances are meaningful only at
//! 64-bit precision.

use serde::Serialize;
use thiserror::Error;

use crate::calibration::rc;
use crate::datasets::LabeledDataset;
use crate::losses::{LossError, LossSpec};
use crate::numcore::{softmax, LogitVec, NumError, RngStream};
use crate::sampling::{
    enumerate_set_distribution, three_point_table, ClassFeatureTable, SamplingError, WeightedSet,
};

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(
        "optimizer failed to converge: gradient norm {grad_norm} after {iterations} iterations"
    )]
    ConvergenceFailure {
        iterations: usize,
        grad_norm: f64,
        /// Objective values along the tail of the run.
        trace: Vec<f64>,
    },
    #[error("property violated: {0}")]
    PropertyFailure(String),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Num(#[from] NumError),
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------------
// The exact expected hard loss of the three-point two-class population.
// ---------------------------------------------------------------------

/// One enumerated outcome of the three-point population: its probability
/// mass, the feature-count vector `w` (how many set members carry
/// feature 0, 1, 2), and whether the pair class is the second class.
#[derive(Debug, Clone, Copy)]
struct QRow {
    mass: f64,
    w: [f64; 3],
    pair_second: bool,
}

/// The expected hard set loss `Q_eps(a)` of the three-point population,
/// as an explicit 16-row sum. Logits are normalized to `f(x) = [0, a_x]`
/// (first coordinate pinned to zero), so the objective is a function of
/// three reals.
#[derive(Debug, Clone)]
pub struct QEpsilonObjective {
    eps: f64,
    rows: Vec<QRow>,
}

impl QEpsilonObjective {
    /// Builds the 16-row objective. Masses: the all-shared rows carry
    /// `(1-eps)^3/2`, one rare member `eps(1-eps)^2/2`, two rare members
    /// `eps^2(1-eps)/2`, all rare `eps^3/2`; they sum to one for every
    /// `eps` (checked at construction).
    pub fn new(eps: f64) -> Result<Self, TheoryError> {
        if !(0.0 < eps && eps < 1.0) {
            return Err(TheoryError::InvalidArgument(format!(
                "eps {eps} must lie in (0, 1)"
            )));
        }
        let g0 = (1.0 - eps).powi(3) / 2.0;
        let g1 = eps * (1.0 - eps).powi(2) / 2.0;
        let g2 = eps * eps * (1.0 - eps) / 2.0;
        let g3 = eps.powi(3) / 2.0;
        let row = |mass: f64, w: [f64; 3], pair_second: bool| QRow {
            mass,
            w,
            pair_second,
        };
        let rows = vec![
            row(g0, [3.0, 0.0, 0.0], false),
            row(g0, [3.0, 0.0, 0.0], true),
            row(g1, [2.0, 0.0, 1.0], false),
            row(g1, [2.0, 1.0, 0.0], false),
            row(g1, [2.0, 1.0, 0.0], false),
            row(g1, [2.0, 1.0, 0.0], true),
            row(g1, [2.0, 0.0, 1.0], true),
            row(g1, [2.0, 0.0, 1.0], true),
            row(g2, [1.0, 2.0, 0.0], false),
            row(g2, [1.0, 1.0, 1.0], false),
            row(g2, [1.0, 1.0, 1.0], false),
            row(g2, [1.0, 0.0, 2.0], true),
            row(g2, [1.0, 1.0, 1.0], true),
            row(g2, [1.0, 1.0, 1.0], true),
            row(g3, [0.0, 2.0, 1.0], false),
            row(g3, [0.0, 1.0, 2.0], true),
        ];
        let total: f64 = rows.iter().map(|r| r.mass).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(TheoryError::InvalidArgument(format!(
                "row masses sum to {total}"
            )));
        }
        Ok(Self { eps, rows })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn masses(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.mass).collect()
    }

    /// The per-row correct-class probabilities `V_i(a)`.
    pub fn terms(&self, a: [f64; 3]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| {
                let s = r.w[0] * a[0] + r.w[1] * a[1] + r.w[2] * a[2];
                if r.pair_second {
                    sigmoid(s)
                } else {
                    sigmoid(-s)
                }
            })
            .collect()
    }

    pub fn value(&self, a: [f64; 3]) -> f64 {
        self.rows
            .iter()
            .map(|r| {
                let s = r.w[0] * a[0] + r.w[1] * a[1] + r.w[2] * a[2];
                // -mass * log V: softplus(s) when the pair class is the
                // first class, softplus(-s) otherwise.
                r.mass * if r.pair_second { softplus(-s) } else { softplus(s) }
            })
            .sum()
    }

    pub fn gradient(&self, a: [f64; 3]) -> [f64; 3] {
        let mut g = [0.0; 3];
        for r in &self.rows {
            let s = r.w[0] * a[0] + r.w[1] * a[1] + r.w[2] * a[2];
            let coeff = if r.pair_second {
                -r.mass * sigmoid(-s)
            } else {
                r.mass * sigmoid(s)
            };
            for (gi, wi) in g.iter_mut().zip(&r.w) {
                *gi += coeff * wi;
            }
        }
        g
    }
}

/// Builds the same objective through the generic sampler enumerator,
/// for the two-path oracle.
pub fn q_epsilon_from_enumeration(eps: f64) -> Result<Vec<WeightedSet<f64>>, TheoryError> {
    let table = three_point_table(eps)?;
    Ok(enumerate_set_distribution(&table, 1, 1_000)?)
}

/// Expected hard loss of enumerated rows under logits `f(x) = [0, a_x]`.
pub fn q_value_from_rows(rows: &[WeightedSet<f64>], a: [f64; 3]) -> f64 {
    rows.iter()
        .map(|r| {
            let s: f64 = r.features.iter().map(|&f| a[f]).sum();
            r.mass * if r.pair_class == 1 { softplus(-s) } else { softplus(s) }
        })
        .sum()
}

// ---------------------------------------------------------------------
// Gradient descent with Armijo backtracking.
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct GdResult {
    pub point: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

/// Gradient descent with Armijo backtracking (sufficient decrease 1e-4,
/// halving, step carried between iterations) while objective decreases
/// are resolvable in `f64`, then fixed-step descent below that scale.
///
/// The switch matters for tight tolerances: near a minimum the per-step
/// decrease is of order `t * |g|^2`, which drops under the objective's
/// floating-point resolution long before the gradient norm reaches
/// `1e-10`, so value-based acceptance stalls. Pure gradient steps need
/// no value comparison; a growing gradient norm halves the step instead.
fn gd_minimize(
    start: &[f64],
    value: &dyn Fn(&[f64]) -> f64,
    gradient: &dyn Fn(&[f64]) -> Vec<f64>,
    tol: f64,
    max_iters: usize,
) -> Result<GdResult, TheoryError> {
    let mut x = start.to_vec();
    let mut v = value(&x);
    let mut g = gradient(&x);
    let mut gnorm = norm(&g);
    let mut t = 1.0f64;
    let mut fixed_mode = false;
    let mut trace = Vec::new();
    for iter in 0..max_iters {
        if gnorm <= tol {
            let value_final = if fixed_mode { value(&x) } else { v };
            return Ok(GdResult {
                point: x,
                value: value_final,
                grad_norm: gnorm,
                iterations: iter,
            });
        }
        if !fixed_mode {
            // Armijo decreases below ~|v| * eps are not certifiable.
            let resolvable = 1e-4 * t * gnorm * gnorm > v.abs() * 1e-14;
            if !resolvable {
                fixed_mode = true;
                t = t.min(0.5);
            }
        }
        if fixed_mode {
            for (xi, gi) in x.iter_mut().zip(&g) {
                *xi -= t * gi;
            }
            g = gradient(&x);
            let new_norm = norm(&g);
            if new_norm > gnorm {
                // Overshooting the local curvature; shrink the step.
                t *= 0.5;
                if t < 1e-20 {
                    return Err(TheoryError::ConvergenceFailure {
                        iterations: iter,
                        grad_norm: new_norm,
                        trace,
                    });
                }
            }
            gnorm = new_norm;
            continue;
        }
        t = (t * 2.0).min(1.0);
        let g2 = gnorm * gnorm;
        loop {
            let candidate: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - t * gi).collect();
            let cv = value(&candidate);
            if cv <= v - 1e-4 * t * g2 {
                x = candidate;
                v = cv;
                break;
            }
            t *= 0.5;
            if t < 1e-20 {
                return Err(TheoryError::ConvergenceFailure {
                    iterations: iter,
                    grad_norm: gnorm,
                    trace,
                });
            }
        }
        if trace.len() < 32 {
            trace.push(v);
        }
        g = gradient(&x);
        gnorm = norm(&g);
    }
    Err(TheoryError::ConvergenceFailure {
        iterations: max_iters,
        grad_norm: gnorm,
        trace,
    })
}

fn norm(g: &[f64]) -> f64 {
    g.iter().map(|gi| gi * gi).sum::<f64>().sqrt()
}

/// Minimizer of `Q_eps` found by gradient descent from the origin, to
/// gradient norm `tol`.
#[derive(Debug, Clone)]
pub struct QMinimum {
    pub a: [f64; 3],
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

pub const Q_MAX_ITERS: usize = 1_000_000;

pub fn minimize_q_epsilon(
    obj: &QEpsilonObjective,
    tol: f64,
) -> Result<QMinimum, TheoryError> {
    if !(tol > 0.0) {
        return Err(TheoryError::InvalidArgument(format!(
            "tolerance {tol} must be positive"
        )));
    }
    let r = gd_minimize(
        &[0.0; 3],
        &|x| obj.value([x[0], x[1], x[2]]),
        &|x| obj.gradient([x[0], x[1], x[2]]).to_vec(),
        tol,
        Q_MAX_ITERS,
    )?;
    Ok(QMinimum {
        a: [r.point[0], r.point[1], r.point[2]],
        value: r.value,
        grad_norm: r.grad_norm,
        iterations: r.iterations,
    })
}

/// Softmax of the two-logit pair `[0, a]`.
pub fn softmax_pair(a: f64) -> [f64; 2] {
    let p1 = sigmoid(-a);
    [p1, 1.0 - p1]
}

/// The limiting prediction triple: uniform at the shared feature,
/// two-thirds toward the matching class at each rare feature.
pub fn limit_probabilities() -> [[f64; 2]; 3] {
    [
        [0.5, 0.5],
        [2.0 / 3.0, 1.0 / 3.0],
        [1.0 / 3.0, 2.0 / 3.0],
    ]
}

/// Max deviation of the minimizer's three softmax pairs from the limits.
pub fn limit_deviation(a: [f64; 3]) -> f64 {
    let limits = limit_probabilities();
    let mut worst: f64 = 0.0;
    for (ai, lim) in a.iter().zip(&limits) {
        let p = softmax_pair(*ai);
        worst = worst.max((p[0] - lim[0]).abs()).max((p[1] - lim[1]).abs());
    }
    worst
}

// ---------------------------------------------------------------------
// Memorized-logit risks over the full label-set enumeration.
// ---------------------------------------------------------------------

/// Memorized-logit matrix: `F[i][j]` is the logit for class `j` when the
/// true label is `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FMatrix {
    classes: usize,
    vals: Vec<f64>,
}

impl FMatrix {
    pub fn new(classes: usize, vals: Vec<f64>) -> Result<Self, TheoryError> {
        if classes == 0 || vals.len() != classes * classes {
            return Err(TheoryError::InvalidArgument(format!(
                "need {classes}x{classes} values, got {}",
                vals.len()
            )));
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(TheoryError::InvalidArgument("non-finite logit".into()));
        }
        Ok(Self { classes, vals })
    }

    /// Matrix with `diag` on the diagonal and `off` elsewhere.
    pub fn symmetric(classes: usize, diag: f64, off: f64) -> Result<Self, TheoryError> {
        let mut vals = vec![off; classes * classes];
        for i in 0..classes {
            vals[i * classes + i] = diag;
        }
        Self::new(classes, vals)
    }

    pub fn random(classes: usize, scale: f64, rng: &mut RngStream) -> Self {
        let vals = (0..classes * classes)
            .map(|_| (rng.uniform() * 2.0 - 1.0) * scale)
            .collect();
        Self {
            classes,
            vals,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.vals[i * self.classes + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.vals[i * self.classes + j] = v;
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.vals[i * self.classes..(i + 1) * self.classes]
    }
}

fn for_each_label_set(classes: usize, k: usize, mut visit: impl FnMut(usize, &[usize])) {
    fn rec(
        others: &[usize],
        k: usize,
        start: usize,
        current: &mut Vec<usize>,
        pair: usize,
        visit: &mut impl FnMut(usize, &[usize]),
    ) {
        if current.len() == k {
            visit(pair, current);
            return;
        }
        for i in start..others.len() {
            current.push(others[i]);
            rec(others, k, i + 1, current, pair, visit);
            current.pop();
        }
    }
    for pair in 0..classes {
        let others: Vec<usize> = (0..classes).filter(|&c| c != pair).collect();
        let mut current = Vec::with_capacity(k);
        rec(&others, k, 0, &mut current, pair, &mut visit);
    }
}

fn set_sum_logits(f: &FMatrix, pair: usize, odd: &[usize]) -> Vec<f64> {
    let c = f.classes();
    let mut sum = vec![0.0; c];
    for (s, &v) in sum.iter_mut().zip(f.row(pair)) {
        *s += 2.0 * v;
    }
    for &o in odd {
        for (s, &v) in sum.iter_mut().zip(f.row(o)) {
            *s += v;
        }
    }
    sum
}

fn log_sum_exp_slice(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let rest: f64 = z.iter().map(|&v| (v - m).exp()).sum();
    m + rest.ln()
}

/// Hard risk over the full label-set enumeration: for every pair class
/// and odd-class subset, cross-entropy of the summed logits against the
/// pair class.
pub fn risk_hard(f: &FMatrix, k: usize) -> f64 {
    let mut total = 0.0;
    for_each_label_set(f.classes(), k, |pair, odd| {
        let sum = set_sum_logits(f, pair, odd);
        total += log_sum_exp_slice(&sum) - sum[pair];
    });
    total
}

/// Soft risk: each member's label contributes its own cross-entropy
/// term (the pair class twice).
pub fn risk_soft(f: &FMatrix, k: usize) -> f64 {
    let mut total = 0.0;
    for_each_label_set(f.classes(), k, |pair, odd| {
        let sum = set_sum_logits(f, pair, odd);
        let lse = log_sum_exp_slice(&sum);
        total += 2.0 * (lse - sum[pair]);
        for &o in odd {
            total += lse - sum[o];
        }
    });
    total
}

fn accumulate_risk_grad(
    f: &FMatrix,
    pair: usize,
    odd: &[usize],
    delta: &[f64],
    grad: &mut [f64],
) {
    let c = f.classes();
    for (m, &d) in delta.iter().enumerate() {
        grad[pair * c + m] += 2.0 * d;
        for &o in odd {
            grad[o * c + m] += d;
        }
    }
}

/// Gradient of the hard risk with respect to every logit entry.
pub fn risk_hard_grad(f: &FMatrix, k: usize) -> Vec<f64> {
    let c = f.classes();
    let mut grad = vec![0.0; c * c];
    for_each_label_set(c, k, |pair, odd| {
        let sum = set_sum_logits(f, pair, odd);
        let p = softmax_slice(&sum);
        let mut delta = p;
        delta[pair] -= 1.0;
        accumulate_risk_grad(f, pair, odd, &delta, &mut grad);
    });
    grad
}

/// Gradient of the soft risk.
pub fn risk_soft_grad(f: &FMatrix, k: usize) -> Vec<f64> {
    let c = f.classes();
    let mut grad = vec![0.0; c * c];
    for_each_label_set(c, k, |pair, odd| {
        let sum = set_sum_logits(f, pair, odd);
        let p = softmax_slice(&sum);
        let members = (k + 2) as f64;
        let mut delta: Vec<f64> = p.iter().map(|&v| members * v).collect();
        delta[pair] -= 2.0;
        for &o in odd {
            delta[o] -= 1.0;
        }
        accumulate_risk_grad(f, pair, odd, &delta, &mut grad);
    });
    grad
}

fn softmax_slice(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|&v| (v - m).exp()).collect();
    let s: f64 = out.iter().sum();
    for v in &mut out {
        *v /= s;
    }
    out
}

/// Closed-form hard risk restricted to the symmetric subspace `F(a, b)`:
/// every label-set summand collapses to the same three-group term.
pub fn symmetric_risk_hard(a: f64, b: f64, classes: usize, k: usize) -> f64 {
    let count = (classes * binomial(classes - 1, k)) as f64;
    let top = 2.0 * a + k as f64 * b;
    let mid = a + (k + 1) as f64 * b;
    let low = (k + 2) as f64 * b;
    let m = top.max(mid).max(low);
    let q = (top - m).exp()
        + k as f64 * (mid - m).exp()
        + (classes - k - 1) as f64 * (low - m).exp();
    count * (m + q.ln() - top)
}

/// Analytic partials of the closed-form symmetric risk in `(a, b)`.
pub fn symmetric_risk_hard_partials(a: f64, b: f64, classes: usize, k: usize) -> (f64, f64) {
    let count = (classes * binomial(classes - 1, k)) as f64;
    let top = 2.0 * a + k as f64 * b;
    let mid = a + (k + 1) as f64 * b;
    let low = (k + 2) as f64 * b;
    let m = top.max(mid).max(low);
    let e_top = (top - m).exp();
    let e_mid = k as f64 * (mid - m).exp();
    let e_low = (classes - k - 1) as f64 * (low - m).exp();
    let q = e_top + e_mid + e_low;
    let (p_top, p_mid, p_low) = (e_top / q, e_mid / q, e_low / q);
    let da = 2.0 * p_top + p_mid - 2.0;
    let db = k as f64 * p_top + (k + 1) as f64 * p_mid + (k + 2) as f64 * p_low - k as f64;
    (count * da, count * db)
}

fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut out: usize = 1;
    for i in 0..k {
        out = out * (n - i) / (i + 1);
    }
    out
}

// ---------------------------------------------------------------------
// Coordinate convexity (one logit entry swept, the rest frozen).
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct ConvexitySweep {
    /// Smallest second central difference along the grid.
    pub min_second_difference: f64,
    /// Analytic derivative at the two grid ends.
    pub derivative_at_lo: f64,
    pub derivative_at_hi: f64,
    /// Sign changes of the analytic derivative along the grid.
    pub sign_changes: usize,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvexityReport {
    pub hard: ConvexitySweep,
    pub soft: ConvexitySweep,
}

/// Sweeps `F[i][j]` along `grid` and checks both risks for strictly
/// positive curvature and a single bracketed minimum.
pub fn check_coordinate_convexity(
    f: &FMatrix,
    i: usize,
    j: usize,
    grid: &[f64],
    k: usize,
) -> Result<ConvexityReport, TheoryError> {
    if grid.len() < 3 {
        return Err(TheoryError::InvalidArgument(
            "grid needs at least 3 points".into(),
        ));
    }
    if i >= f.classes() || j >= f.classes() {
        return Err(TheoryError::InvalidArgument(format!(
            "entry ({i}, {j}) out of range"
        )));
    }
    let c = f.classes();
    let sweep = |hard: bool| -> ConvexitySweep {
        let mut probe = f.clone();
        let mut values = Vec::with_capacity(grid.len());
        let mut derivs = Vec::with_capacity(grid.len());
        for &g in grid {
            probe.set(i, j, g);
            if hard {
                values.push(risk_hard(&probe, k));
                derivs.push(risk_hard_grad(&probe, k)[i * c + j]);
            } else {
                values.push(risk_soft(&probe, k));
                derivs.push(risk_soft_grad(&probe, k)[i * c + j]);
            }
        }
        let mut min_dd = f64::INFINITY;
        for t in 1..grid.len() - 1 {
            min_dd = min_dd.min(values[t + 1] - 2.0 * values[t] + values[t - 1]);
        }
        let sign_changes = derivs
            .windows(2)
            .filter(|w| (w[0] < 0.0) != (w[1] < 0.0))
            .count();
        let ok = min_dd > 0.0
            && sign_changes == 1
            && derivs[0] < 0.0
            && *derivs.last().unwrap() > 0.0;
        ConvexitySweep {
            min_second_difference: min_dd,
            derivative_at_lo: derivs[0],
            derivative_at_hi: *derivs.last().unwrap(),
            sign_changes,
            ok,
        }
    };
    Ok(ConvexityReport {
        hard: sweep(true),
        soft: sweep(false),
    })
}

// ---------------------------------------------------------------------
// Divergence path on the symmetric subspace.
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct DivergenceTrace {
    pub a_path: Vec<f64>,
    pub b_path: Vec<f64>,
    /// Largest deviation from the symmetric subspace along the path.
    pub max_subspace_residual: f64,
    /// Worst sign margin over the random (a, b) probes: min of
    /// (-dR/da) and (dR/db), which must stay positive.
    pub min_sign_margin: f64,
}

/// Fixed-step gradient descent on the hard risk over the full logit
/// matrix from `F(0, 0)`. Asserts the diagonal strictly rises, the
/// off-diagonal strictly falls, and the iterates stay in the symmetric
/// subspace; also spot-checks the partial-derivative signs at random
/// `(a, b)`.
pub fn check_divergence_path(
    classes: usize,
    k: usize,
    steps: usize,
    step_size: f64,
    rng: &mut RngStream,
) -> Result<DivergenceTrace, TheoryError> {
    if classes < k + 2 {
        return Err(TheoryError::InvalidArgument(format!(
            "need C >= k + 2, got C = {classes}, k = {k}"
        )));
    }
    if !(step_size > 0.0) {
        return Err(TheoryError::InvalidArgument("step size must be positive".into()));
    }
    let c = classes;
    let mut f = FMatrix::symmetric(c, 0.0, 0.0)?;
    let mut a_path = Vec::with_capacity(steps + 1);
    let mut b_path = Vec::with_capacity(steps + 1);
    a_path.push(0.0);
    b_path.push(0.0);
    let mut max_residual: f64 = 0.0;
    for step in 0..steps {
        let grad = risk_hard_grad(&f, k);
        for i in 0..c {
            for j in 0..c {
                let v = f.get(i, j) - step_size * grad[i * c + j];
                f.set(i, j, v);
            }
        }
        // Subspace residual: spread of diagonal and off-diagonal entries.
        let diag0 = f.get(0, 0);
        let off0 = f.get(0, 1);
        for i in 0..c {
            for j in 0..c {
                let v = f.get(i, j);
                let reference = if i == j { diag0 } else { off0 };
                max_residual = max_residual.max((v - reference).abs());
            }
        }
        let a = f.get(0, 0);
        let b = f.get(0, 1);
        if a <= *a_path.last().unwrap() {
            return Err(TheoryError::PropertyFailure(format!(
                "diagonal failed to increase at step {step}: {} -> {a}",
                a_path.last().unwrap()
            )));
        }
        if b >= *b_path.last().unwrap() {
            return Err(TheoryError::PropertyFailure(format!(
                "off-diagonal failed to decrease at step {step}: {} -> {b}",
                b_path.last().unwrap()
            )));
        }
        a_path.push(a);
        b_path.push(b);
    }

    // Sign conditions at random (a, b): the hard risk always pulls the
    // diagonal up and the off-diagonal down.
    let mut min_margin = f64::INFINITY;
    for _ in 0..100 {
        let a = rng.uniform() * 6.0 - 3.0;
        let b = rng.uniform() * 6.0 - 3.0;
        let sym = FMatrix::symmetric(c, a, b)?;
        let grad = risk_hard_grad(&sym, k);
        let da: f64 = (0..c).map(|i| grad[i * c + i]).sum();
        let db: f64 = (0..c)
            .flat_map(|i| (0..c).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j)
            .map(|(i, j)| grad[i * c + j])
            .sum();
        // Cross-check against the closed-form partials.
        let (cf_da, cf_db) = symmetric_risk_hard_partials(a, b, c, k);
        if (da - cf_da).abs() > 1e-9 * (1.0 + cf_da.abs())
            || (db - cf_db).abs() > 1e-9 * (1.0 + cf_db.abs())
        {
            return Err(TheoryError::PropertyFailure(format!(
                "matrix gradient disagrees with closed form at ({a}, {b}): \
                 ({da}, {db}) vs ({cf_da}, {cf_db})"
            )));
        }
        if da >= 0.0 || db <= 0.0 {
            return Err(TheoryError::PropertyFailure(format!(
                "sign condition violated at ({a}, {b}): dR/da = {da}, dR/db = {db}"
            )));
        }
        min_margin = min_margin.min(-da).min(db);
    }
    Ok(DivergenceTrace {
        a_path,
        b_path,
        max_subspace_residual: max_residual,
        min_sign_margin: min_margin,
    })
}

// ---------------------------------------------------------------------
// Re-weighting vs batch balancing (exact expectation equivalence).
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct BalanceReport {
    /// Recovered proportionality constant.
    pub lambda: f64,
    /// Analytic value `n / (a C)` under the `a = n / C` convention.
    pub expected_lambda: f64,
    /// Worst deviation of `lambda * E_uniform - E_balanced` over the
    /// probe logit tables.
    pub max_residual: f64,
}

/// Enumerates both batch expectations exactly on a small dataset: the
/// re-weighted loss under uniform sampling against the plain loss under
/// batch balancing, over random per-sample logit tables. A single
/// `lambda` must reconcile them for every table.
pub fn check_balance_equivalence(
    ds: &LabeledDataset<f64>,
    base_loss: &LossSpec<f64>,
    probes: usize,
    rng: &mut RngStream,
) -> Result<BalanceReport, TheoryError> {
    let n = ds.len();
    let classes = ds.classes();
    if classes < 2 {
        return Err(TheoryError::InvalidArgument(
            "need at least 2 classes for the balanced class draw".into(),
        ));
    }
    if base_loss.is_set_loss() {
        return Err(TheoryError::InvalidArgument(
            "base loss must be a single-example loss".into(),
        ));
    }
    let part = crate::datasets::partition_by_class(ds);
    let counts = part.class_counts();
    if let Some(empty) = counts.iter().position(|&c| c == 0) {
        return Err(TheoryError::InvalidArgument(format!(
            "class {empty} has no members"
        )));
    }
    if probes < 2 {
        return Err(TheoryError::InvalidArgument("need at least 2 probe tables".into()));
    }

    let scale_a = n as f64 / classes as f64;
    let expected_lambda = n as f64 / (scale_a * classes as f64);

    let mut lambda = None;
    let mut max_residual: f64 = 0.0;
    for _ in 0..probes {
        let table: Vec<LogitVec<f64>> = (0..n)
            .map(|_| {
                LogitVec::new((0..classes).map(|_| rng.normal() * 2.0).collect())
                    .expect("finite logits")
            })
            .collect();
        let losses: Vec<f64> = (0..n)
            .map(|i| Ok(base_loss.eval_single(&table[i], ds.label(i))?.0))
            .collect::<Result<_, TheoryError>>()?;
        // E under uniform single draws of the re-weighted loss.
        let e_uniform: f64 = (0..n)
            .map(|i| (scale_a / counts[ds.label(i)] as f64) * losses[i])
            .sum::<f64>()
            / n as f64;
        // E under batch balancing of the plain loss.
        let e_balanced: f64 = (0..classes)
            .map(|c| {
                part.class(c).iter().map(|&i| losses[i]).sum::<f64>() / counts[c] as f64
            })
            .sum::<f64>()
            / classes as f64;
        match lambda {
            None => lambda = Some(e_balanced / e_uniform),
            Some(l) => max_residual = max_residual.max((l * e_uniform - e_balanced).abs()),
        }
    }
    Ok(BalanceReport {
        lambda: lambda.unwrap(),
        expected_lambda,
        max_residual,
    })
}

// ---------------------------------------------------------------------
// Entropic-regularization gap.
// ---------------------------------------------------------------------

/// Per-feature logit table for the exact expected loss: one logit
/// vector per distinct feature value.
pub type FeatureLogits = Vec<Vec<f64>>;

/// Exact expected hard set loss of enumerated rows under a per-feature
/// logit table.
pub fn expected_hard_loss(rows: &[WeightedSet<f64>], logits: &FeatureLogits) -> f64 {
    let classes = logits.first().map(Vec::len).unwrap_or(0);
    let mut sum = vec![0.0; classes];
    let mut total = 0.0;
    for r in rows {
        sum.iter_mut().for_each(|v| *v = 0.0);
        for &f in &r.features {
            for (s, &v) in sum.iter_mut().zip(&logits[f]) {
                *s += v;
            }
        }
        total += r.mass * (log_sum_exp_slice(&sum) - sum[r.pair_class]);
    }
    total
}

fn expected_hard_loss_grad(rows: &[WeightedSet<f64>], logits: &FeatureLogits) -> FeatureLogits {
    let classes = logits.first().map(Vec::len).unwrap_or(0);
    let mut grad: FeatureLogits = logits.iter().map(|r| vec![0.0; r.len()]).collect();
    let mut sum = vec![0.0; classes];
    for r in rows {
        sum.iter_mut().for_each(|v| *v = 0.0);
        for &f in &r.features {
            for (s, &v) in sum.iter_mut().zip(&logits[f]) {
                *s += v;
            }
        }
        let mut delta = softmax_slice(&sum);
        delta[r.pair_class] -= 1.0;
        for &f in &r.features {
            for (g, &d) in grad[f].iter_mut().zip(&delta) {
                *g += r.mass * d;
            }
        }
    }
    grad
}

#[derive(Debug, Clone, Serialize)]
pub struct GapEntry {
    pub eps: f64,
    /// Exact expected loss of the maximal-entropy logit table.
    pub loss_uniform: f64,
    /// Numerically minimized expected loss over per-feature logits.
    pub loss_min: f64,
    pub gap: f64,
    pub iterations: usize,
}

/// The noisy-population construction: one feature shared by every class
/// with conditional probability `1 - eps`, plus one class-specific
/// feature with probability `eps`. Feature 0 is the shared one; feature
/// `c + 1` belongs to class `c`.
pub fn noisy_population_table(
    classes: usize,
    eps: f64,
) -> Result<ClassFeatureTable<f64>, TheoryError> {
    if classes < 2 {
        return Err(TheoryError::InvalidArgument("need at least 2 classes".into()));
    }
    if !(0.0 < eps && eps < 1.0) {
        return Err(TheoryError::InvalidArgument(format!(
            "eps {eps} must lie in (0, 1)"
        )));
    }
    let class_mass = 1.0 / classes as f64;
    let mut rows = Vec::with_capacity(2 * classes);
    for c in 0..classes {
        rows.push((c, 0, (1.0 - eps) * class_mass));
        rows.push((c, c + 1, eps * class_mass));
    }
    Ok(ClassFeatureTable::from_joint(&rows, classes)?)
}

/// For each `eps`, computes the exact expected hard loss of the
/// maximal-entropy table (all logits zero) and of a numeric minimizer
/// over per-feature logits; the gap between them is the excess loss of
/// the maximally smoothed solution.
pub fn check_regularization_gap(
    classes: usize,
    k: usize,
    eps_list: &[f64],
    enum_budget: usize,
) -> Result<Vec<GapEntry>, TheoryError> {
    if eps_list.is_empty() {
        return Err(TheoryError::InvalidArgument("empty eps list".into()));
    }
    let features = classes + 1;
    let mut out = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let table = noisy_population_table(classes, eps)?;
        let rows = enumerate_set_distribution(&table, k, enum_budget)?;
        let theta_star: FeatureLogits = vec![vec![0.0; classes]; features];
        let loss_uniform = expected_hard_loss(&rows, &theta_star);

        let flatten = |t: &FeatureLogits| -> Vec<f64> { t.iter().flatten().copied().collect() };
        let unflatten = |v: &[f64]| -> FeatureLogits {
            v.chunks(classes).map(|c| c.to_vec()).collect()
        };
        let r = gd_minimize(
            &flatten(&theta_star),
            &|x| expected_hard_loss(&rows, &unflatten(x)),
            &|x| flatten(&expected_hard_loss_grad(&rows, &unflatten(x))),
            1e-9,
            500_000,
        )?;
        out.push(GapEntry {
            eps,
            loss_uniform,
            loss_min: r.value,
            gap: loss_uniform - r.value,
            iterations: r.iterations,
        });
    }
    Ok(out)
}

// ---------------------------------------------------------------------
// Verdicts for the verification CLI.
// ---------------------------------------------------------------------

/// Machine-readable outcome of one check.
#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub check: String,
    pub params: serde_json::Value,
    pub measured: serde_json::Value,
    pub thresholds: serde_json::Value,
    pub pass: bool,
}

/// Parameters of the full verification suite.
#[derive(Debug, Clone)]
pub struct VerifyConfig {
    /// Descending eps values for the minimizer-limit check.
    pub theorem_eps: Vec<f64>,
    pub theorem_grad_tol: f64,
    pub theorem_limit_tol: f64,
    pub two_path_eps: Vec<f64>,
    pub two_path_points: usize,
    pub lemma2_draws: usize,
    pub lemma3_draws: usize,
    pub lemma3_classes: usize,
    pub convexity_sweeps: usize,
    pub divergence_steps: usize,
    pub divergence_step_size: f64,
    pub gap_eps: Vec<f64>,
    pub enum_budget: usize,
    pub seed: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            theorem_eps: vec![0.1, 0.01, 0.001],
            theorem_grad_tol: 1e-10,
            theorem_limit_tol: 0.01,
            two_path_eps: vec![0.05, 0.2, 0.5],
            two_path_points: 5,
            lemma2_draws: 10_000,
            lemma3_draws: 1_000_000,
            lemma3_classes: 5,
            convexity_sweeps: 100,
            divergence_steps: 10_000,
            divergence_step_size: 0.1,
            gap_eps: vec![0.1, 0.05, 0.025, 0.0125],
            enum_budget: 1_000_000,
            seed: 0,
        }
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<(), TheoryError> {
        if self.theorem_eps.is_empty() {
            return Err(TheoryError::InvalidArgument(
                "minimizer-limit eps list must be non-empty".into(),
            ));
        }
        if self
            .theorem_eps
            .iter()
            .any(|&e| !(0.0 < e && e < 1.0))
        {
            return Err(TheoryError::InvalidArgument(
                "minimizer-limit eps values must lie in (0, 1)".into(),
            ));
        }
        if self.theorem_eps.windows(2).any(|w| w[0] <= w[1]) {
            return Err(TheoryError::InvalidArgument(
                "minimizer-limit eps list must be strictly decreasing".into(),
            ));
        }
        if self.gap_eps.is_empty() {
            return Err(TheoryError::InvalidArgument(
                "gap eps list must be non-empty".into(),
            ));
        }
        Ok(())
    }
}


fn error_verdict(check: &str, params: serde_json::Value, err: &TheoryError) -> Verdict {
    Verdict {
        check: check.to_string(),
        params,
        measured: serde_json::json!({ "error": err.to_string() }),
        thresholds: serde_json::Value::Null,
        pass: false,
    }
}

/// Runs the complete verification suite. Individual check failures and
/// errors land in the verdicts; the function itself only fails on
/// invalid configuration.
pub fn run_all(cfg: &VerifyConfig) -> Result<Vec<Verdict>, TheoryError> {
    cfg.validate()?;
    let mut verdicts = Vec::new();

    // Minimizer limits of the three-point objective.
    {
        let params = serde_json::json!({
            "eps": cfg.theorem_eps,
            "grad_tol": cfg.theorem_grad_tol,
            "limit_tol": cfg.theorem_limit_tol,
        });
        let run = || -> Result<(Vec<f64>, Vec<[f64; 3]>), TheoryError> {
            let mut devs = Vec::new();
            let mut minima = Vec::new();
            for &eps in &cfg.theorem_eps {
                let obj = QEpsilonObjective::new(eps)?;
                let min = minimize_q_epsilon(&obj, cfg.theorem_grad_tol)?;
                devs.push(limit_deviation(min.a));
                minima.push(min.a);
            }
            Ok((devs, minima))
        };
        match run() {
            Ok((devs, minima)) => {
                let monotone = devs.windows(2).all(|w| w[1] <= w[0] + 1e-12);
                let final_ok = *devs.last().unwrap() <= cfg.theorem_limit_tol;
                verdicts.push(Verdict {
                    check: "minimizer_limits".into(),
                    params,
                    measured: serde_json::json!({
                        "deviations": devs,
                        "minimizers": minima,
                    }),
                    thresholds: serde_json::json!({
                        "final_deviation": cfg.theorem_limit_tol,
                        "monotone_nonincreasing": true,
                    }),
                    pass: monotone && final_ok,
                });
            }
            Err(e) => verdicts.push(error_verdict("minimizer_limits", params, &e)),
        }
    }

    // Two-path objective oracle: table vs sampler enumeration.
    {
        let params = serde_json::json!({
            "eps": cfg.two_path_eps,
            "points": cfg.two_path_points,
        });
        let run = || -> Result<f64, TheoryError> {
            let mut rng = RngStream::new(cfg.seed, 101);
            let mut worst: f64 = 0.0;
            for &eps in &cfg.two_path_eps {
                let obj = QEpsilonObjective::new(eps)?;
                let rows = q_epsilon_from_enumeration(eps)?;
                for _ in 0..cfg.two_path_points {
                    let a = [
                        rng.uniform() * 4.0 - 2.0,
                        rng.uniform() * 4.0 - 2.0,
                        rng.uniform() * 4.0 - 2.0,
                    ];
                    worst = worst.max((obj.value(a) - q_value_from_rows(&rows, a)).abs());
                }
            }
            Ok(worst)
        };
        match run() {
            Ok(worst) => verdicts.push(Verdict {
                check: "objective_two_path".into(),
                params,
                measured: serde_json::json!({ "max_abs_difference": worst }),
                thresholds: serde_json::json!({ "max_abs_difference": 1e-12 }),
                pass: worst <= 1e-12,
            }),
            Err(e) => verdicts.push(error_verdict("objective_two_path", params, &e)),
        }
    }

    // Excess-confidence score is non-negative below the uniform level.
    {
        let params = serde_json::json!({ "draws": cfg.lemma2_draws });
        let mut rng = RngStream::new(cfg.seed, 102);
        let mut violations = 0usize;
        let mut worst = f64::INFINITY;
        for _ in 0..cfg.lemma2_draws {
            let c = 2 + rng.index(9);
            let mut raw: Vec<f64> = (0..c).map(|_| -rng.uniform().max(1e-12).ln()).collect();
            let sum: f64 = raw.iter().sum();
            raw.iter_mut().for_each(|v| *v /= sum);
            let q = crate::numcore::ProbVec::new(raw).expect("simplex point");
            let y = (0..c)
                .min_by(|&a, &b| q[a].partial_cmp(&q[b]).unwrap())
                .unwrap();
            let v = rc(y, &q);
            worst = worst.min(v);
            if v < -1e-9 {
                violations += 1;
            }
        }
        verdicts.push(Verdict {
            check: "rc_nonnegative_below_uniform".into(),
            params,
            measured: serde_json::json!({ "violations": violations, "min_rc": worst }),
            thresholds: serde_json::json!({ "violations": 0, "min_rc": -1e-9 }),
            pass: violations == 0,
        });
    }

    // Mean excess confidence of a calibrated predictor is zero.
    {
        let params = serde_json::json!({
            "draws": cfg.lemma3_draws,
            "classes": cfg.lemma3_classes,
        });
        let mut rng = RngStream::new(cfg.seed, 103);
        let c = cfg.lemma3_classes;
        let n = cfg.lemma3_draws;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let z: Vec<f64> = (0..c).map(|_| rng.normal()).collect();
            let q = softmax(&LogitVec::new(z).expect("finite"));
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
            let v = rc(y, &q);
            sum += v;
            sum_sq += v * v;
        }
        let mean = sum / n as f64;
        let var = (sum_sq - sum * sum / n as f64) / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        verdicts.push(Verdict {
            check: "mean_rc_calibrated".into(),
            params,
            measured: serde_json::json!({ "mean": mean, "standard_error": se }),
            thresholds: serde_json::json!({ "abs_mean_max": 3.0 * se }),
            pass: mean.abs() <= 3.0 * se,
        });
    }

    // Softmax shift invariance (the logit normalization lemma).
    {
        let params = serde_json::json!({ "draws": 1000 });
        let mut rng = RngStream::new(cfg.seed, 104);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let c = 2 + rng.index(7);
            let z: Vec<f64> = (0..c).map(|_| rng.normal() * 5.0).collect();
            let shift = rng.normal() * 50.0;
            let a = softmax(&LogitVec::new(z.clone()).expect("finite"));
            let shifted: Vec<f64> = z.iter().map(|v| v + shift).collect();
            let b = softmax(&LogitVec::new(shifted).expect("finite"));
            for i in 0..c {
                worst = worst.max((a[i] - b[i]).abs());
            }
        }
        verdicts.push(Verdict {
            check: "softmax_shift_invariance".into(),
            params,
            measured: serde_json::json!({ "max_abs_difference": worst }),
            thresholds: serde_json::json!({ "max_abs_difference": 1e-12 }),
            pass: worst <= 1e-12,
        });
    }

    // Re-weighting matches batch balancing in expectation.
    {
        let params = serde_json::json!({ "datasets": ["2x(4,2)", "3x(5,4,3)", "3x(2,2,2)"] });
        let run = || -> Result<Vec<BalanceReport>, TheoryError> {
            let mut rng = RngStream::new(cfg.seed, 105);
            let datasets = [
                balance_dataset(&[4, 2])?,
                balance_dataset(&[5, 4, 3])?,
                balance_dataset(&[2, 2, 2])?,
            ];
            let loss = LossSpec::new(crate::losses::LossKind::Vanilla);
            datasets
                .iter()
                .map(|ds| check_balance_equivalence(ds, &loss, 6, &mut rng))
                .collect()
        };
        match run() {
            Ok(reports) => {
                let worst = reports
                    .iter()
                    .map(|r| r.max_residual)
                    .fold(0.0f64, f64::max);
                let lambdas: Vec<f64> = reports.iter().map(|r| r.lambda).collect();
                verdicts.push(Verdict {
                    check: "balance_equivalence".into(),
                    params,
                    measured: serde_json::json!({
                        "lambdas": lambdas,
                        "max_residual": worst,
                    }),
                    thresholds: serde_json::json!({ "max_residual": 1e-10 }),
                    pass: worst <= 1e-10,
                });
            }
            Err(e) => verdicts.push(error_verdict("balance_equivalence", params, &e)),
        }
    }

    // Coordinate convexity of both risks.
    {
        let params = serde_json::json!({
            "sweeps": cfg.convexity_sweeps,
            "grid": { "lo": -10.0, "hi": 10.0, "step": 0.05 },
            "classes": 3,
            "k": 1,
        });
        let run = || -> Result<(usize, f64), TheoryError> {
            let mut rng = RngStream::new(cfg.seed, 106);
            let grid: Vec<f64> = grid_points(-10.0, 10.0, 0.05);
            let mut violations = 0usize;
            let mut min_dd = f64::INFINITY;
            for _ in 0..cfg.convexity_sweeps {
                let f = FMatrix::random(3, 2.0, &mut rng);
                let i = rng.index(3);
                let j = rng.index(3);
                let report = check_coordinate_convexity(&f, i, j, &grid, 1)?;
                min_dd = min_dd
                    .min(report.hard.min_second_difference)
                    .min(report.soft.min_second_difference);
                if !report.hard.ok || !report.soft.ok {
                    violations += 1;
                }
            }
            Ok((violations, min_dd))
        };
        match run() {
            Ok((violations, min_dd)) => verdicts.push(Verdict {
                check: "coordinate_convexity".into(),
                params,
                measured: serde_json::json!({
                    "violations": violations,
                    "min_second_difference": min_dd,
                }),
                thresholds: serde_json::json!({ "violations": 0 }),
                pass: violations == 0,
            }),
            Err(e) => verdicts.push(error_verdict("coordinate_convexity", params, &e)),
        }
    }

    // Divergence path on the symmetric subspace.
    {
        let params = serde_json::json!({
            "classes": 3,
            "k": 1,
            "steps": cfg.divergence_steps,
            "step_size": cfg.divergence_step_size,
        });
        let mut rng = RngStream::new(cfg.seed, 107);
        match check_divergence_path(3, 1, cfg.divergence_steps, cfg.divergence_step_size, &mut rng)
        {
            Ok(trace) => {
                let pass = trace.max_subspace_residual <= 1e-10;
                verdicts.push(Verdict {
                    check: "divergence_path".into(),
                    params,
                    measured: serde_json::json!({
                        "final_diag": trace.a_path.last(),
                        "final_off_diag": trace.b_path.last(),
                        "max_subspace_residual": trace.max_subspace_residual,
                        "min_sign_margin": trace.min_sign_margin,
                    }),
                    thresholds: serde_json::json!({
                        "max_subspace_residual": 1e-10,
                        "strictly_monotone": true,
                    }),
                    pass,
                });
            }
            Err(e) => verdicts.push(error_verdict("divergence_path", params, &e)),
        }
    }

    // Entropic-regularization gap of the noisy population.
    {
        let params = serde_json::json!({
            "classes": 3,
            "k": 1,
            "eps": cfg.gap_eps,
        });
        match check_regularization_gap(3, 1, &cfg.gap_eps, cfg.enum_budget) {
            Ok(entries) => {
                let gaps: Vec<f64> = entries.iter().map(|e| e.gap).collect();
                let all_positive = gaps.iter().all(|&g| g > 0.0);
                let halving_ok = entries
                    .windows(2)
                    .filter(|w| (w[1].eps - w[0].eps / 2.0).abs() < 1e-12)
                    .all(|w| w[1].gap <= 0.5 * w[0].gap);
                // Ratio stability anchored at the second entry of the
                // list (0.05 by default).
                let ratios: Vec<f64> = entries.iter().map(|e| e.gap / (e.eps * e.eps)).collect();
                let anchored_ok = if ratios.len() >= 2 {
                    let anchor = ratios[1];
                    ratios[1..]
                        .iter()
                        .all(|&r| r / anchor <= 4.0 && anchor / r <= 4.0)
                } else {
                    true
                };
                let list_ratio = if ratios.is_empty() {
                    1.0
                } else {
                    let max = ratios.iter().copied().fold(f64::MIN, f64::max);
                    let min = ratios.iter().copied().fold(f64::MAX, f64::min);
                    max / min
                };
                verdicts.push(Verdict {
                    check: "regularization_gap".into(),
                    params,
                    measured: serde_json::json!({
                        "gaps": gaps,
                        "gap_over_eps_squared": ratios,
                        "list_wide_ratio_spread": list_ratio,
                    }),
                    thresholds: serde_json::json!({
                        "all_positive": true,
                        "halving_factor": 0.5,
                        "anchored_ratio_spread": 4.0,
                    }),
                    pass: all_positive && halving_ok && anchored_ok,
                });
            }
            Err(e) => verdicts.push(error_verdict("regularization_gap", params, &e)),
        }
    }

    Ok(verdicts)
}

fn grid_points(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + step * i as f64).collect()
}

fn balance_dataset(counts: &[usize]) -> Result<LabeledDataset<f64>, TheoryError> {
    let mut labels = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        labels.extend(std::iter::repeat(c).take(n));
    }
    let inputs: Vec<f64> = (0..labels.len()).map(|i| i as f64).collect();
    LabeledDataset::new(inputs, labels, 1, counts.len())
        .map_err(|e| TheoryError::InvalidArgument(e.to_string()))
}
