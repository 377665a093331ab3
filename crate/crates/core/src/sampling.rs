//! Set and batch samplers for training, plus an exact enumerator over
//! the set distribution used as a theory oracle.
//!
//! A training set holds `k + 2` members: two from one *pair class* and
//! one from each of `k` distinct *odd classes*. The sampler draws the
//! pair class uniformly, the odd classes uniformly without replacement
//! from the rest, and representatives uniformly within each class (the
//! two pair representatives without replacement, so they are distinct
//! rows).

use thiserror::Error;

use crate::datasets::{ClassPartition, LabeledDataset};
use crate::numcore::RngStream;
use crate::Scalar;

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("class {class} has no samples")]
    EmptyClass { class: usize },
    #[error("pair class {class} needs at least 2 samples, found {found}")]
    PairClassTooSmall { class: usize, found: usize },
    #[error("{k} odd classes need k + 1 <= C, but C = {classes}")]
    TooManyOddClasses { k: usize, classes: usize },
    #[error("enumeration needs {required} rows, over the budget of {budget}")]
    TooLarge { required: usize, budget: usize },
    #[error("invalid feature table: {0}")]
    InvalidTable(String),
}

/// One training example of the set framework: `k + 2` dataset rows, their
/// labels, and the pair label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OkoSet {
    /// Pair label `y'`: the class of the first two members.
    pub pair_class: usize,
    /// Dataset row indices; the first two are distinct rows of the pair
    /// class, the rest one representative per odd class.
    pub indices: Vec<usize>,
    /// Labels aligned with `indices`.
    pub labels: Vec<usize>,
    /// Number of odd classes.
    pub k: usize,
}

impl OkoSet {
    /// Checks the structural invariants; used by tests and debug builds.
    pub fn validate(&self, classes: usize) -> Result<(), String> {
        if self.indices.len() != self.k + 2 || self.labels.len() != self.k + 2 {
            return Err(format!("set must hold k + 2 = {} members", self.k + 2));
        }
        if self.k + 1 > classes {
            return Err(format!("k + 1 = {} exceeds {classes} classes", self.k + 1));
        }
        if self.labels[0] != self.pair_class || self.labels[1] != self.pair_class {
            return Err("first two labels must equal the pair class".into());
        }
        if self.indices[0] == self.indices[1] {
            return Err("pair representatives must be distinct rows".into());
        }
        let mut odd = self.labels[2..].to_vec();
        odd.sort_unstable();
        let before = odd.len();
        odd.dedup();
        if odd.len() != before {
            return Err("odd classes must be pairwise distinct".into());
        }
        if odd.iter().any(|&c| c == self.pair_class || c >= classes) {
            return Err("odd classes must differ from the pair class".into());
        }
        Ok(())
    }
}

/// Draws one set: pair class uniform over `[C]`, `k` odd classes uniform
/// without replacement from the rest, representatives uniform per class
/// with the two pair rows drawn without replacement.
pub fn sample_oko_set(
    part: &ClassPartition,
    k: usize,
    rng: &mut RngStream,
) -> Result<OkoSet, SamplingError> {
    let classes = part.classes();
    if k + 1 > classes {
        return Err(SamplingError::TooManyOddClasses { k, classes });
    }
    for c in 0..classes {
        if part.class(c).is_empty() {
            return Err(SamplingError::EmptyClass { class: c });
        }
    }
    let pair_class = rng.index(classes);
    let pair_members = part.class(pair_class);
    if pair_members.len() < 2 {
        return Err(SamplingError::PairClassTooSmall {
            class: pair_class,
            found: pair_members.len(),
        });
    }

    let mut indices = Vec::with_capacity(k + 2);
    let mut labels = Vec::with_capacity(k + 2);
    for pos in rng.distinct_indices(pair_members.len(), 2) {
        indices.push(pair_members[pos]);
        labels.push(pair_class);
    }
    // Ordered draw of k odd classes from [C] \ {pair_class}.
    let others: Vec<usize> = (0..classes).filter(|&c| c != pair_class).collect();
    for pos in rng.distinct_indices(others.len(), k) {
        let c = others[pos];
        let members = part.class(c);
        indices.push(members[rng.index(members.len())]);
        labels.push(c);
    }
    Ok(OkoSet {
        pair_class,
        indices,
        labels,
        k,
    })
}

/// Batch balancing: each element drawn by picking a class uniformly,
/// then a member uniformly within it. Returns dataset row indices.
pub fn sample_balanced_batch(
    part: &ClassPartition,
    batch: usize,
    rng: &mut RngStream,
) -> Result<Vec<usize>, SamplingError> {
    let classes = part.classes();
    for c in 0..classes {
        if part.class(c).is_empty() {
            return Err(SamplingError::EmptyClass { class: c });
        }
    }
    let mut out = Vec::with_capacity(batch);
    for _ in 0..batch {
        let members = part.class(rng.index(classes));
        out.push(members[rng.index(members.len())]);
    }
    Ok(out)
}

/// Plain batching: i.i.d. uniform over all rows, with replacement.
pub fn sample_uniform_batch<S: Scalar>(
    ds: &LabeledDataset<S>,
    batch: usize,
    rng: &mut RngStream,
) -> Vec<usize> {
    (0..batch).map(|_| rng.index(ds.len())).collect()
}

/// Discrete population for the enumerator: each class carries a list of
/// `(feature id, joint probability)` pairs. Joint masses must sum to one
/// over the whole table; representative draws use the class-conditional
/// distribution, while the pair class itself is drawn uniformly over
/// classes exactly as in the sampler.
#[derive(Debug, Clone)]
pub struct ClassFeatureTable<S: Scalar> {
    /// Per class: (feature id, conditional probability given the class).
    conditional: Vec<Vec<(usize, S)>>,
}

impl<S: Scalar> ClassFeatureTable<S> {
    /// Builds from `(class, feature id, joint mass)` rows. Zero-mass
    /// entries are kept: they enumerate as rows of probability zero.
    pub fn from_joint(
        rows: &[(usize, usize, S)],
        classes: usize,
    ) -> Result<Self, SamplingError> {
        if classes == 0 {
            return Err(SamplingError::InvalidTable("no classes".into()));
        }
        let mut per_class: Vec<Vec<(usize, S)>> = vec![Vec::new(); classes];
        let mut total = S::zero();
        for &(c, f, m) in rows {
            if c >= classes {
                return Err(SamplingError::InvalidTable(format!(
                    "class {c} out of range for {classes} classes"
                )));
            }
            if m < S::zero() || !m.is_finite() {
                return Err(SamplingError::InvalidTable(format!(
                    "mass {m} for class {c}, feature {f} must be finite and non-negative"
                )));
            }
            if per_class[c].iter().any(|&(g, _)| g == f) {
                return Err(SamplingError::InvalidTable(format!(
                    "duplicate feature {f} for class {c}"
                )));
            }
            per_class[c].push((f, m));
            total += m;
        }
        if (total - S::one()).abs() > S::c(1e-9) {
            return Err(SamplingError::InvalidTable(format!(
                "joint masses sum to {total}, expected 1"
            )));
        }
        let mut conditional = Vec::with_capacity(classes);
        for (c, entries) in per_class.into_iter().enumerate() {
            let class_mass: S = entries.iter().map(|&(_, m)| m).sum();
            if !(class_mass > S::zero()) {
                return Err(SamplingError::InvalidTable(format!(
                    "class {c} carries no probability mass"
                )));
            }
            conditional.push(
                entries
                    .into_iter()
                    .map(|(f, m)| (f, m / class_mass))
                    .collect(),
            );
        }
        Ok(Self { conditional })
    }

    pub fn classes(&self) -> usize {
        self.conditional.len()
    }

    pub fn support(&self, c: usize) -> &[(usize, S)] {
        &self.conditional[c]
    }
}

/// One enumerated outcome: the label multiset, the feature assignment
/// (ordered for the two pair slots), and its exact probability under the
/// set sampler.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSet<S: Scalar> {
    pub pair_class: usize,
    /// `k + 2` labels: pair class twice, then the odd classes ascending.
    pub labels: Vec<usize>,
    /// Feature ids aligned with `labels`; slots 0 and 1 are the ordered
    /// pair draws.
    pub features: Vec<usize>,
    pub mass: S,
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

/// Enumerates every `(S_y, S_x)` outcome with its exact probability under
/// the set sampler, treating representative draws as independent
/// class-conditional draws from `table` (the population limit, where the
/// two distinct pair rows may still share a feature value).
///
/// Masses over the full enumeration sum to one.
pub fn enumerate_set_distribution<S: Scalar>(
    table: &ClassFeatureTable<S>,
    k: usize,
    max_rows: usize,
) -> Result<Vec<WeightedSet<S>>, SamplingError> {
    let classes = table.classes();
    if k + 1 > classes {
        return Err(SamplingError::TooManyOddClasses { k, classes });
    }

    // Count rows up front against the budget.
    let subsets = binomial(classes - 1, k);
    let mut required: usize = 0;
    for pair in 0..classes {
        let pair_support = table.support(pair).len();
        // Every k-subset of the other classes has the same feature-combo
        // count only when supports match, so count per subset.
        let others: Vec<usize> = (0..classes).filter(|&c| c != pair).collect();
        let mut combo_sum = 0usize;
        enumerate_subsets(&others, k, &mut |subset| {
            let mut combos = pair_support * pair_support;
            for &c in subset {
                combos = combos.saturating_mul(table.support(c).len());
            }
            combo_sum = combo_sum.saturating_add(combos);
        });
        let _ = subsets;
        required = required.saturating_add(combo_sum);
        if required > max_rows {
            return Err(SamplingError::TooLarge {
                required,
                budget: max_rows,
            });
        }
    }

    let pair_prob = S::one() / S::count(classes);
    let subset_prob = S::one() / S::count(binomial(classes - 1, k));
    let mut rows = Vec::with_capacity(required);
    for pair in 0..classes {
        let others: Vec<usize> = (0..classes).filter(|&c| c != pair).collect();
        enumerate_subsets(&others, k, &mut |subset| {
            let base = pair_prob * subset_prob;
            for &(f1, p1) in table.support(pair) {
                for &(f2, p2) in table.support(pair) {
                    // Odd-class feature combinations, depth-first.
                    let mut stack: Vec<(usize, Vec<usize>, S)> = vec![(0, Vec::new(), S::one())];
                    while let Some((depth, feats, mass)) = stack.pop() {
                        if depth == subset.len() {
                            let mut labels = vec![pair, pair];
                            labels.extend_from_slice(subset);
                            let mut features = vec![f1, f2];
                            features.extend_from_slice(&feats);
                            rows.push(WeightedSet {
                                pair_class: pair,
                                labels,
                                features,
                                mass: base * p1 * p2 * mass,
                            });
                            continue;
                        }
                        for &(f, p) in table.support(subset[depth]) {
                            let mut next = feats.clone();
                            next.push(f);
                            stack.push((depth + 1, next, mass * p));
                        }
                    }
                }
            }
        });
    }
    Ok(rows)
}

/// Calls `visit` with every ascending `k`-subset of `items`.
fn enumerate_subsets(items: &[usize], k: usize, visit: &mut impl FnMut(&[usize])) {
    fn rec(
        items: &[usize],
        k: usize,
        start: usize,
        current: &mut Vec<usize>,
        visit: &mut impl FnMut(&[usize]),
    ) {
        if current.len() == k {
            visit(current);
            return;
        }
        for i in start..items.len() {
            current.push(items[i]);
            rec(items, k, i + 1, current, visit);
            current.pop();
        }
    }
    let mut current = Vec::with_capacity(k);
    rec(items, k, 0, &mut current, visit);
}

/// The three-point two-class population behind the minimizer analysis:
/// feature 0 carries mass `(1 - eps) / 2` under each label, feature 1
/// mass `eps / 2` under label 0, feature 2 mass `eps / 2` under label 1.
pub fn three_point_table<S: Scalar>(eps: S) -> Result<ClassFeatureTable<S>, SamplingError> {
    let half = S::c(0.5);
    let shared = (S::one() - eps) * half;
    let rare = eps * half;
    ClassFeatureTable::from_joint(
        &[(0, 0, shared), (0, 1, rare), (1, 0, shared), (1, 2, rare)],
        2,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{partition_by_class, LabeledDataset};

    fn dataset(labels: &[usize], classes: usize) -> LabeledDataset<f64> {
        let inputs: Vec<f64> = (0..labels.len()).map(|i| i as f64).collect();
        LabeledDataset::new(inputs, labels.to_vec(), 1, classes).unwrap()
    }

    #[test]
    fn feasibility_bounds() {
        let part = partition_by_class(&dataset(&[0, 0, 1, 1], 2));
        let mut rng = RngStream::new(0, 0);
        // C = 2, k = 1 is the smallest valid configuration.
        assert!(sample_oko_set(&part, 1, &mut rng).is_ok());
        // C = 2, k = 2 needs three classes.
        assert_eq!(
            sample_oko_set(&part, 2, &mut rng),
            Err(SamplingError::TooManyOddClasses { k: 2, classes: 2 })
        );
    }

    #[test]
    fn pair_class_frequency_uniform() {
        let labels: Vec<usize> = (0..100).map(|i| i % 5).collect();
        let part = partition_by_class(&dataset(&labels, 5));
        let mut rng = RngStream::new(7, 0);
        let mut counts = [0usize; 5];
        let draws = 100_000;
        for _ in 0..draws {
            counts[sample_oko_set(&part, 2, &mut rng).unwrap().pair_class] += 1;
        }
        for &c in &counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.2).abs() < 0.01, "pair frequency {freq}");
        }
    }

    #[test]
    fn sampled_sets_satisfy_invariants() {
        let part = partition_by_class(&dataset(&[0, 0, 1, 1, 2, 2], 3));
        let mut rng = RngStream::new(11, 2);
        for _ in 0..10_000 {
            let set = sample_oko_set(&part, 1, &mut rng).unwrap();
            set.validate(3).unwrap();
        }
    }

    #[test]
    fn empty_class_detected() {
        let part = partition_by_class(&dataset(&[0, 0, 2, 2], 3));
        let mut rng = RngStream::new(0, 0);
        assert_eq!(
            sample_oko_set(&part, 1, &mut rng),
            Err(SamplingError::EmptyClass { class: 1 })
        );
    }

    #[test]
    fn pair_class_with_one_sample_errors() {
        // Class 1 has a single row; drawing it as the pair class must
        // fail rather than silently resampling.
        let part = partition_by_class(&dataset(&[0, 0, 1], 2));
        let mut rng = RngStream::new(1, 0);
        let mut hit = false;
        for _ in 0..64 {
            match sample_oko_set(&part, 1, &mut rng) {
                Err(SamplingError::PairClassTooSmall { class: 1, found: 1 }) => {
                    hit = true;
                    break;
                }
                Ok(_) => {}
                Err(other) => panic!("unexpected error {other}"),
            }
        }
        assert!(hit);
    }

    #[test]
    fn balanced_batch_equalizes_classes() {
        // Wildly imbalanced: 4 classes with 1, 3, 30, 66 members.
        let mut labels = vec![0];
        labels.extend(std::iter::repeat(1).take(3));
        labels.extend(std::iter::repeat(2).take(30));
        labels.extend(std::iter::repeat(3).take(66));
        let ds = dataset(&labels, 4);
        let part = partition_by_class(&ds);
        let mut rng = RngStream::new(5, 0);
        let mut counts = [0usize; 4];
        let draws = 100_000;
        for _ in 0..draws {
            let batch = sample_balanced_batch(&part, 1, &mut rng).unwrap();
            counts[ds.label(batch[0])] += 1;
        }
        for &c in &counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.25).abs() < 0.01, "class frequency {freq}");
        }
    }

    #[test]
    fn balanced_batch_edge_cases() {
        let part = partition_by_class(&dataset(&[0, 1], 2));
        let mut rng = RngStream::new(0, 0);
        assert!(sample_balanced_batch(&part, 0, &mut rng).unwrap().is_empty());
        let a = sample_balanced_batch(&part, 16, &mut RngStream::new(3, 3)).unwrap();
        let b = sample_balanced_batch(&part, 16, &mut RngStream::new(3, 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_batch_single_row() {
        let ds = dataset(&[0], 1);
        let mut rng = RngStream::new(0, 0);
        let batch = sample_uniform_batch(&ds, 8, &mut rng);
        assert_eq!(batch, vec![0; 8]);
    }

    #[test]
    fn uniform_batch_frequencies() {
        let labels: Vec<usize> = (0..10).collect();
        let ds = dataset(&labels, 10);
        let mut rng = RngStream::new(9, 0);
        let mut counts = [0usize; 10];
        let draws = 100_000;
        for i in sample_uniform_batch(&ds, draws, &mut rng) {
            counts[i] += 1;
        }
        for &c in &counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.1).abs() < 0.01, "index frequency {freq}");
        }
        let a = sample_uniform_batch(&ds, 32, &mut RngStream::new(3, 1));
        let b = sample_uniform_batch(&ds, 32, &mut RngStream::new(3, 1));
        assert_eq!(a, b);
    }

    fn row_mass(rows: &[WeightedSet<f64>], labels: &[usize], features: &[usize]) -> f64 {
        rows.iter()
            .filter(|r| r.labels == labels && r.features == features)
            .map(|r| r.mass)
            .sum()
    }

    #[test]
    fn three_point_enumeration_has_16_rows() {
        let eps = 0.3;
        let table = three_point_table(eps).unwrap();
        let rows = enumerate_set_distribution(&table, 1, 1000).unwrap();
        assert_eq!(rows.len(), 16);
        let total: f64 = rows.iter().map(|r| r.mass).sum();
        assert!((total - 1.0).abs() < 1e-12);
        // Row (y = 0,0,1; x = 0,0,0) carries (1 - eps)^3 / 2.
        let m = row_mass(&rows, &[0, 0, 1], &[0, 0, 0]);
        assert!((m - (1.0 - eps).powi(3) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn three_point_enumeration_matches_closed_forms() {
        // All 16 masses against their polynomial forms, at several eps.
        for &eps in &[0.05, 0.1, 0.3, 0.5, 0.9] {
            let rows = enumerate_set_distribution(&three_point_table(eps).unwrap(), 1, 100).unwrap();
            let p3 = |a: f64, b: f64, c: f64| a * b * c / 2.0;
            let s = 1.0 - eps;
            let cases: Vec<(Vec<usize>, Vec<usize>, f64)> = vec![
                (vec![0, 0, 1], vec![0, 0, 0], p3(s, s, s)),
                (vec![1, 1, 0], vec![0, 0, 0], p3(s, s, s)),
                (vec![0, 0, 1], vec![0, 0, 2], p3(s, s, eps)),
                (vec![0, 0, 1], vec![1, 0, 0], p3(eps, s, s)),
                (vec![0, 0, 1], vec![0, 1, 0], p3(s, eps, s)),
                (vec![1, 1, 0], vec![0, 0, 1], p3(s, s, eps)),
                (vec![1, 1, 0], vec![2, 0, 0], p3(eps, s, s)),
                (vec![1, 1, 0], vec![0, 2, 0], p3(s, eps, s)),
                (vec![0, 0, 1], vec![1, 1, 0], p3(eps, eps, s)),
                (vec![0, 0, 1], vec![1, 0, 2], p3(eps, s, eps)),
                (vec![0, 0, 1], vec![0, 1, 2], p3(s, eps, eps)),
                (vec![1, 1, 0], vec![2, 2, 0], p3(eps, eps, s)),
                (vec![1, 1, 0], vec![2, 0, 1], p3(eps, s, eps)),
                (vec![1, 1, 0], vec![0, 2, 1], p3(s, eps, eps)),
                (vec![0, 0, 1], vec![1, 1, 2], p3(eps, eps, eps)),
                (vec![1, 1, 0], vec![2, 2, 1], p3(eps, eps, eps)),
            ];
            for (labels, features, expect) in cases {
                let m = row_mass(&rows, &labels, &features);
                assert!(
                    (m - expect).abs() < 1e-12,
                    "eps {eps}: mass for y {labels:?} x {features:?} is {m}, expected {expect}"
                );
            }
        }
    }

    #[test]
    fn degenerate_eps_zero() {
        // eps = 0 keeps the zero-mass rows in the enumeration; only the
        // two all-shared rows carry mass, 1/2 each.
        let rows = enumerate_set_distribution(&three_point_table(0.0).unwrap(), 1, 100).unwrap();
        assert_eq!(rows.len(), 16);
        let mut nonzero: Vec<&WeightedSet<f64>> = rows.iter().filter(|r| r.mass > 0.0).collect();
        nonzero.sort_by_key(|r| r.pair_class);
        assert_eq!(nonzero.len(), 2);
        for r in nonzero {
            assert!((r.mass - 0.5).abs() < 1e-15);
            assert!(r.features.iter().all(|&f| f == 0));
        }
    }

    #[test]
    fn pair_slots_exchangeable() {
        // Swapping the two pair features yields an equal-mass row.
        let rows = enumerate_set_distribution(&three_point_table(0.25).unwrap(), 1, 100).unwrap();
        for r in &rows {
            let swapped: Vec<usize> =
                vec![r.features[1], r.features[0], r.features[2]];
            let m = row_mass(&rows, &r.labels, &swapped);
            assert!((m - r.mass).abs() < 1e-15);
        }
    }

    #[test]
    fn enumeration_budget() {
        let table = three_point_table(0.5).unwrap();
        assert_eq!(
            enumerate_set_distribution(&table, 1, 8),
            Err(SamplingError::TooLarge {
                required: 16,
                budget: 8
            })
        );
    }

    #[test]
    fn enumeration_three_classes_mass_sums_to_one() {
        // Three classes, two features each, k = 1 and k = 2.
        let third = 1.0 / 3.0;
        let rows_spec = [
            (0usize, 0usize, third * 0.7),
            (0, 1, third * 0.3),
            (1, 2, third * 0.4),
            (1, 3, third * 0.6),
            (2, 4, third * 0.5),
            (2, 5, third * 0.5),
        ];
        let table = ClassFeatureTable::from_joint(&rows_spec, 3).unwrap();
        for k in [1, 2] {
            let rows = enumerate_set_distribution(&table, k, 10_000).unwrap();
            let total: f64 = rows.iter().map(|r| r.mass).sum();
            assert!((total - 1.0).abs() < 1e-12, "k = {k}: total {total}");
        }
    }
}
