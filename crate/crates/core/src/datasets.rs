//! Labeled datasets: synthetic Gaussian blobs, IDX files, class
//! partitioning, and heavy-tailed resampling.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numcore::{NumError, RngStream};
use crate::Scalar;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}: bad magic number, expected 0x{expected:08x} found 0x{found:08x}")]
    BadMagic {
        path: String,
        expected: u32,
        found: u32,
    },
    #[error("{path}: truncated, needed {needed} bytes but found {found}")]
    Truncated {
        path: String,
        needed: usize,
        found: usize,
    },
    #[error("count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("class {class} holds {available} samples but the distribution needs {required}")]
    InsufficientData {
        class: usize,
        available: usize,
        required: usize,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Num(#[from] NumError),
}

/// Inputs with integer class labels; the universe every sampler draws
/// from. Immutable after construction and safe to share across tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset<S: Scalar> {
    inputs: Vec<S>, // n x d, row-major
    labels: Vec<usize>,
    n: usize,
    dim: usize,
    classes: usize,
}

impl<S: Scalar> LabeledDataset<S> {
    pub fn new(
        inputs: Vec<S>,
        labels: Vec<usize>,
        dim: usize,
        classes: usize,
    ) -> Result<Self, DataError> {
        let n = labels.len();
        if n == 0 {
            return Err(DataError::InvalidArgument("dataset must be non-empty".into()));
        }
        if dim == 0 || classes == 0 {
            return Err(DataError::InvalidArgument(
                "dimension and class count must be positive".into(),
            ));
        }
        if inputs.len() != n * dim {
            return Err(DataError::InvalidArgument(format!(
                "inputs hold {} values, expected {} ({} rows x {} features)",
                inputs.len(),
                n * dim,
                n,
                dim
            )));
        }
        for (i, &v) in inputs.iter().enumerate() {
            if !v.is_finite() {
                return Err(NumError::NonFinite {
                    index: i,
                    value: v.as_f64(),
                }
                .into());
            }
        }
        for (i, &y) in labels.iter().enumerate() {
            if y >= classes {
                return Err(DataError::InvalidArgument(format!(
                    "label {y} at row {i} out of range for {classes} classes"
                )));
            }
        }
        Ok(Self {
            inputs,
            labels,
            n,
            dim,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// New dataset holding the listed rows, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, DataError> {
        if indices.is_empty() {
            return Err(DataError::InvalidArgument("subset must be non-empty".into()));
        }
        let mut inputs = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.n {
                return Err(DataError::InvalidArgument(format!(
                    "subset index {i} out of range for {} rows",
                    self.n
                )));
            }
            inputs.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Self::new(inputs, labels, self.dim, self.classes)
    }

    /// Splits into (train, test) with `floor(n * test_fraction)` test
    /// rows chosen by shuffling under `rng`.
    pub fn split(
        &self,
        test_fraction: f64,
        rng: &mut RngStream,
    ) -> Result<(Self, Self), DataError> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(DataError::InvalidArgument(format!(
                "test fraction {test_fraction} must lie in [0, 1)"
            )));
        }
        let n_test = (self.n as f64 * test_fraction).floor() as usize;
        if n_test == 0 || n_test == self.n {
            return Err(DataError::InvalidArgument(format!(
                "test fraction {test_fraction} leaves an empty split for n = {}",
                self.n
            )));
        }
        let mut order: Vec<usize> = (0..self.n).collect();
        rng.shuffle(&mut order);
        let test = self.subset(&order[..n_test])?;
        let train = self.subset(&order[n_test..])?;
        Ok((train, test))
    }
}

/// Per-class index lists: `X_c` holds exactly the row indices labeled `c`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassPartition {
    by_class: Vec<Vec<usize>>,
}

impl ClassPartition {
    pub fn classes(&self) -> usize {
        self.by_class.len()
    }

    pub fn class(&self, c: usize) -> &[usize] {
        &self.by_class[c]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        self.by_class.iter().map(Vec::len).collect()
    }

    pub fn total(&self) -> usize {
        self.by_class.iter().map(Vec::len).sum()
    }
}

/// Groups row indices by label. Classes that never occur come out empty.
pub fn partition_by_class<S: Scalar>(ds: &LabeledDataset<S>) -> ClassPartition {
    let mut by_class = vec![Vec::new(); ds.classes()];
    for (i, &y) in ds.labels().iter().enumerate() {
        by_class[y].push(i);
    }
    ClassPartition { by_class }
}

/// Target class distribution for resampling a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistributionSpec {
    Uniform,
    /// A few head classes share probability mass `head_mass` uniformly;
    /// the remaining tail classes share the rest uniformly.
    HeavyTailed { head_mass: f64, head_classes: usize },
}

impl Default for DistributionSpec {
    fn default() -> Self {
        DistributionSpec::Uniform
    }
}

/// Integer per-class sample counts for drawing `total_n` points under
/// `spec`. Quotas are floored; the leftover goes to the lowest class
/// indices within each group (head and tail are rounded separately so
/// the head/tail mass split is preserved).
pub fn class_quotas(
    spec: &DistributionSpec,
    classes: usize,
    total_n: usize,
) -> Result<Vec<usize>, DataError> {
    if total_n == 0 {
        return Err(DataError::InvalidArgument(
            "total sample count must be positive".into(),
        ));
    }
    if classes == 0 {
        return Err(DataError::InvalidArgument("class count must be positive".into()));
    }
    let spread = |total: usize, slots: usize, out: &mut [usize]| {
        let base = total / slots;
        let rem = total % slots;
        for (i, q) in out.iter_mut().enumerate() {
            *q = base + usize::from(i < rem);
        }
    };
    match *spec {
        DistributionSpec::Uniform => {
            let mut quotas = vec![0; classes];
            spread(total_n, classes, &mut quotas);
            Ok(quotas)
        }
        DistributionSpec::HeavyTailed {
            head_mass,
            head_classes,
        } => {
            if !(0.0 < head_mass && head_mass < 1.0) {
                return Err(DataError::InvalidArgument(format!(
                    "head mass {head_mass} must lie in (0, 1)"
                )));
            }
            if head_classes == 0 || head_classes >= classes {
                return Err(DataError::InvalidArgument(format!(
                    "head class count {head_classes} must lie in 1..{classes}"
                )));
            }
            let head_total = (head_mass * total_n as f64).floor() as usize;
            let tail_total = total_n - head_total;
            let mut quotas = vec![0; classes];
            spread(head_total, head_classes, &mut quotas[..head_classes]);
            spread(tail_total, classes - head_classes, &mut quotas[head_classes..]);
            Ok(quotas)
        }
    }
}

/// Draws `total_n` samples from `ds` following `spec`, without
/// replacement within each class. Order is class-major, draw order
/// within a class.
pub fn apply_distribution<S: Scalar>(
    ds: &LabeledDataset<S>,
    spec: &DistributionSpec,
    total_n: usize,
    rng: &mut RngStream,
) -> Result<LabeledDataset<S>, DataError> {
    let quotas = class_quotas(spec, ds.classes(), total_n)?;
    let part = partition_by_class(ds);
    let mut picked = Vec::with_capacity(total_n);
    for (c, &quota) in quotas.iter().enumerate() {
        let members = part.class(c);
        if quota > members.len() {
            return Err(DataError::InsufficientData {
                class: c,
                available: members.len(),
                required: quota,
            });
        }
        for pos in rng.distinct_indices(members.len(), quota) {
            picked.push(members[pos]);
        }
    }
    ds.subset(&picked)
}

/// Synthetic classification data: `classes` isotropic unit-variance
/// Gaussian clusters in `dim` dimensions with `per_class` points each.
///
/// Cluster means sit on a fixed axis-aligned lattice with norms scaled by
/// `separation`, so any two means are at least `separation` apart and a
/// given `(classes, per_class, dim)` always yields the same geometry.
pub fn make_blobs<S: Scalar>(
    classes: usize,
    per_class: usize,
    dim: usize,
    separation: f64,
    rng: &mut RngStream,
) -> Result<LabeledDataset<S>, DataError> {
    if classes < 2 {
        return Err(DataError::InvalidArgument("need at least 2 classes".into()));
    }
    if per_class == 0 || dim == 0 {
        return Err(DataError::InvalidArgument(
            "per-class count and dimension must be positive".into(),
        ));
    }
    if !(separation > 0.0) {
        return Err(DataError::InvalidArgument(format!(
            "separation {separation} must be positive"
        )));
    }
    let n = classes * per_class;
    let mut inputs = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..classes {
        let axis = c % dim;
        let tier = (c / dim + 1) as f64;
        for _ in 0..per_class {
            for j in 0..dim {
                let mean = if j == axis { separation * tier } else { 0.0 };
                inputs.push(S::c(mean + rng.normal()));
            }
            labels.push(c);
        }
    }
    LabeledDataset::new(inputs, labels, dim, classes)
}

fn read_u32_be(buf: &[u8], offset: usize, path: &str) -> Result<u32, DataError> {
    let end = offset + 4;
    if buf.len() < end {
        return Err(DataError::Truncated {
            path: path.into(),
            needed: end,
            found: buf.len(),
        });
    }
    Ok(u32::from_be_bytes([
        buf[offset],
        buf[offset + 1],
        buf[offset + 2],
        buf[offset + 3],
    ]))
}

/// Parses a big-endian IDX image/label file pair. Pixels are scaled from
/// `0..=255` to `[0, 1]`; the label file fixes the class count as
/// `max label + 1`.
pub fn load_idx<S: Scalar>(
    images_path: &Path,
    labels_path: &Path,
) -> Result<LabeledDataset<S>, DataError> {
    let read_all = |p: &Path| -> Result<Vec<u8>, DataError> {
        let mut buf = Vec::new();
        std::fs::File::open(p)?.read_to_end(&mut buf)?;
        Ok(buf)
    };
    let images = read_all(images_path)?;
    let labels = read_all(labels_path)?;
    parse_idx(
        &images,
        &labels,
        &images_path.display().to_string(),
        &labels_path.display().to_string(),
    )
}

/// IDX parsing over in-memory bytes; `load_idx` is the file-backed wrapper.
pub fn parse_idx<S: Scalar>(
    images: &[u8],
    labels: &[u8],
    images_name: &str,
    labels_name: &str,
) -> Result<LabeledDataset<S>, DataError> {
    let magic = read_u32_be(images, 0, images_name)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            path: images_name.into(),
            expected: IDX_IMAGES_MAGIC,
            found: magic,
        });
    }
    let n_images = read_u32_be(images, 4, images_name)? as usize;
    let rows = read_u32_be(images, 8, images_name)? as usize;
    let cols = read_u32_be(images, 12, images_name)? as usize;
    let pixel_len = n_images
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| DataError::InvalidArgument("image dimensions overflow".into()))?;
    if images.len() < 16 + pixel_len {
        return Err(DataError::Truncated {
            path: images_name.into(),
            needed: 16 + pixel_len,
            found: images.len(),
        });
    }

    let magic = read_u32_be(labels, 0, labels_name)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(DataError::BadMagic {
            path: labels_name.into(),
            expected: IDX_LABELS_MAGIC,
            found: magic,
        });
    }
    let n_labels = read_u32_be(labels, 4, labels_name)? as usize;
    if labels.len() < 8 + n_labels {
        return Err(DataError::Truncated {
            path: labels_name.into(),
            needed: 8 + n_labels,
            found: labels.len(),
        });
    }
    if n_images != n_labels {
        return Err(DataError::CountMismatch {
            images: n_images,
            labels: n_labels,
        });
    }

    let scale = S::one() / S::c(255.0);
    let inputs: Vec<S> = images[16..16 + pixel_len]
        .iter()
        .map(|&b| S::count(b as usize) * scale)
        .collect();
    let label_vals: Vec<usize> = labels[8..8 + n_labels].iter().map(|&b| b as usize).collect();
    let classes = label_vals.iter().copied().max().unwrap_or(0) + 1;
    LabeledDataset::new(inputs, label_vals, rows * cols, classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ds(labels: &[usize], classes: usize) -> LabeledDataset<f64> {
        let inputs: Vec<f64> = (0..labels.len()).map(|i| i as f64).collect();
        LabeledDataset::new(inputs, labels.to_vec(), 1, classes).unwrap()
    }

    #[test]
    fn blob_counts() {
        let mut rng = RngStream::new(0, 0);
        let b = make_blobs::<f64>(2, 5, 2, 1.0, &mut rng).unwrap();
        assert_eq!(b.len(), 10);
        assert_eq!(b.labels().iter().filter(|&&y| y == 0).count(), 5);
        assert_eq!(b.labels().iter().filter(|&&y| y == 1).count(), 5);
    }

    #[test]
    fn blobs_separable_under_nearest_centroid() {
        let mut rng = RngStream::new(42, 0);
        let b = make_blobs::<f64>(3, 50, 2, 10.0, &mut rng).unwrap();
        // Nearest-centroid oracle: empirical per-class means, then assign
        // each row to the closest mean.
        let part = partition_by_class(&b);
        let mut centroids = vec![vec![0.0; b.dim()]; 3];
        for c in 0..3 {
            for &i in part.class(c) {
                for (acc, &v) in centroids[c].iter_mut().zip(b.row(i)) {
                    *acc += v;
                }
            }
            for v in &mut centroids[c] {
                *v /= part.class(c).len() as f64;
            }
        }
        let correct = (0..b.len())
            .filter(|&i| {
                let row = b.row(i);
                let nearest = (0..3)
                    .min_by(|&a, &c| {
                        let da: f64 = row
                            .iter()
                            .zip(&centroids[a])
                            .map(|(x, m)| (x - m) * (x - m))
                            .sum();
                        let dc: f64 = row
                            .iter()
                            .zip(&centroids[c])
                            .map(|(x, m)| (x - m) * (x - m))
                            .sum();
                        da.partial_cmp(&dc).unwrap()
                    })
                    .unwrap();
                nearest == b.label(i)
            })
            .count();
        assert_eq!(correct, b.len());
    }

    #[test]
    fn blobs_deterministic() {
        let a = make_blobs::<f64>(4, 3, 5, 2.0, &mut RngStream::new(9, 1)).unwrap();
        let b = make_blobs::<f64>(4, 3, 5, 2.0, &mut RngStream::new(9, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn partition_contents() {
        let d = ds(&[0, 1, 0], 2);
        let p = partition_by_class(&d);
        assert_eq!(p.class(0), &[0, 2]);
        assert_eq!(p.class(1), &[1]);
        assert_eq!(p.total(), 3);
    }

    #[test]
    fn partition_allows_empty_class() {
        let d = ds(&[0, 0], 3);
        let p = partition_by_class(&d);
        assert!(p.class(1).is_empty());
        assert!(p.class(2).is_empty());
    }

    #[test]
    fn partition_order_insensitive() {
        let a = partition_by_class(&ds(&[0, 1, 2, 1, 0], 3));
        let shuffled = ds(&[1, 0, 1, 2, 0], 3);
        let b = partition_by_class(&shuffled);
        for c in 0..3 {
            assert_eq!(a.class(c).len(), b.class(c).len());
        }
    }

    #[test]
    fn quotas_match_worked_example() {
        // 10 classes, head mass 0.9 over 3 classes, 1000 total: heads get
        // 300 each; the 7 tail classes get 14 with 2 left over for the
        // lowest tail indices.
        let q = class_quotas(
            &DistributionSpec::HeavyTailed {
                head_mass: 0.9,
                head_classes: 3,
            },
            10,
            1000,
        )
        .unwrap();
        assert_eq!(q, vec![300, 300, 300, 15, 15, 14, 14, 14, 14, 14]);
        assert_eq!(q.iter().sum::<usize>(), 1000);
    }

    #[test]
    fn quotas_uniform_one_each() {
        let q = class_quotas(&DistributionSpec::Uniform, 6, 6).unwrap();
        assert_eq!(q, vec![1; 6]);
    }

    #[test]
    fn quotas_reject_zero_total() {
        assert!(class_quotas(&DistributionSpec::Uniform, 4, 0).is_err());
    }

    #[test]
    fn apply_distribution_without_replacement() {
        let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
        let d = ds(&labels, 4);
        let mut rng = RngStream::new(3, 0);
        let out = apply_distribution(&d, &DistributionSpec::Uniform, 20, &mut rng).unwrap();
        assert_eq!(out.len(), 20);
        // Feature values are the original row indices, so duplicates in
        // the subset would show up as equal features.
        let mut feats: Vec<i64> = (0..out.len()).map(|i| out.row(i)[0] as i64).collect();
        feats.sort_unstable();
        let before = feats.len();
        feats.dedup();
        assert_eq!(feats.len(), before);
    }

    #[test]
    fn apply_distribution_head_mass() {
        let labels: Vec<usize> = std::iter::repeat(0..10).flatten().take(5000).collect();
        let d = ds(&labels, 10);
        let spec = DistributionSpec::HeavyTailed {
            head_mass: 0.9,
            head_classes: 3,
        };
        let out = apply_distribution(&d, &spec, 1000, &mut RngStream::new(1, 1)).unwrap();
        let head = out.labels().iter().filter(|&&y| y < 3).count();
        let got = head as f64 / 1000.0;
        assert!((got - 0.9).abs() <= 10.0 / 1000.0);
    }

    #[test]
    fn apply_distribution_insufficient_names_class() {
        let d = ds(&[0, 0, 0, 1], 2);
        let err = apply_distribution(
            &d,
            &DistributionSpec::Uniform,
            4,
            &mut RngStream::new(0, 0),
        )
        .unwrap_err();
        match err {
            DataError::InsufficientData {
                class,
                available,
                required,
            } => {
                assert_eq!(class, 1);
                assert_eq!(available, 1);
                assert_eq!(required, 2);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    /// Builds IDX byte images/labels for round-trip tests.
    fn idx_fixture() -> (Vec<u8>, Vec<u8>) {
        let mut images = Vec::new();
        images.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        images.extend_from_slice(&4u32.to_be_bytes());
        images.extend_from_slice(&2u32.to_be_bytes());
        images.extend_from_slice(&2u32.to_be_bytes());
        images.extend_from_slice(&[
            0, 51, 102, 153, 204, 255, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100,
        ]);
        let mut labels = Vec::new();
        labels.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        labels.extend_from_slice(&4u32.to_be_bytes());
        labels.extend_from_slice(&[0, 1, 2, 1]);
        (images, labels)
    }

    #[test]
    fn idx_parse_fixture() {
        let (images, labels) = idx_fixture();
        let d = parse_idx::<f64>(&images, &labels, "img", "lbl").unwrap();
        assert_eq!(d.len(), 4);
        assert_eq!(d.dim(), 4);
        assert_eq!(d.labels(), &[0, 1, 2, 1]);
        assert_eq!(d.row(0)[1], 51.0 / 255.0);
        assert!(d.row(1)[1] <= 1.0);
    }

    #[test]
    fn idx_round_trip_bytes() {
        let (images, labels) = idx_fixture();
        let d = parse_idx::<f64>(&images, &labels, "img", "lbl").unwrap();
        // Re-serialize: undo the [0,1] scaling and rebuild both files.
        let mut out_images = Vec::new();
        out_images.extend_from_slice(&0x0000_0803u32.to_be_bytes());
        out_images.extend_from_slice(&(d.len() as u32).to_be_bytes());
        out_images.extend_from_slice(&2u32.to_be_bytes());
        out_images.extend_from_slice(&2u32.to_be_bytes());
        for i in 0..d.len() {
            for &v in d.row(i) {
                out_images.push((v * 255.0).round() as u8);
            }
        }
        let mut out_labels = Vec::new();
        out_labels.extend_from_slice(&0x0000_0801u32.to_be_bytes());
        out_labels.extend_from_slice(&(d.len() as u32).to_be_bytes());
        out_labels.extend(d.labels().iter().map(|&y| y as u8));
        assert_eq!(out_images, images);
        assert_eq!(out_labels, labels);
    }

    #[test]
    fn idx_count_mismatch() {
        let (images, mut labels) = idx_fixture();
        labels[7] = 3; // label count header says 3
        labels.truncate(8 + 3);
        let err = parse_idx::<f64>(&images, &labels, "img", "lbl").unwrap_err();
        assert!(matches!(
            err,
            DataError::CountMismatch {
                images: 4,
                labels: 3
            }
        ));
    }

    #[test]
    fn idx_wrong_magic() {
        let (mut images, labels) = idx_fixture();
        images[3] = 0x01;
        let err = parse_idx::<f64>(&images, &labels, "img", "lbl").unwrap_err();
        assert!(matches!(err, DataError::BadMagic { .. }));
    }

    #[test]
    fn idx_truncated() {
        let (images, labels) = idx_fixture();
        let err = parse_idx::<f64>(&images[..20], &labels, "img", "lbl").unwrap_err();
        assert!(matches!(err, DataError::Truncated { .. }));
    }

    #[test]
    fn idx_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let (images, labels) = idx_fixture();
        let ip = dir.path().join("images.idx");
        let lp = dir.path().join("labels.idx");
        std::fs::write(&ip, &images).unwrap();
        std::fs::write(&lp, &labels).unwrap();
        let d = load_idx::<f64>(&ip, &lp).unwrap();
        assert_eq!(d.len(), 4);
    }

    #[test]
    fn split_fractions() {
        let labels: Vec<usize> = (0..50).map(|i| i % 5).collect();
        let d = ds(&labels, 5);
        let (train, test) = d.split(0.2, &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(test.len(), 10);
        assert_eq!(train.len(), 40);
    }
}
