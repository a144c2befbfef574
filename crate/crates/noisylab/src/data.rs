//! Data model: examples, soft labels, five-way splits, and the synthetic
//! Gaussian task generator.
//!
//! The five splits follow the labeling pipeline: `clean_label_train` trains
//! rater models, `clean_label_valid` scores them, `noisy_label_train` /
//! `noisy_label_valid` receive rater labels, and `test` keeps clean labels
//! for final evaluation.

use crate::error::{Error, Result};
use crate::seed::SeedSpec;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

/// Sum tolerance for probability vectors.
pub const PROB_SUM_TOL: f64 = 1e-9;

/// One labeled example: feature vector plus reference class.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub id: u64,
    pub features: Vec<f64>,
    pub clean_label: usize,
}

/// An immutable collection of examples with a fixed feature dimension and
/// label space.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    dim: usize,
    num_classes: usize,
}

impl Dataset {
    /// Build a dataset, checking dimension, label range, and id uniqueness.
    pub fn new(examples: Vec<Example>, dim: usize, num_classes: usize) -> Result<Self> {
        if dim < 1 {
            return Err(Error::invalid("feature dimension must be >= 1"));
        }
        if num_classes < 1 {
            return Err(Error::invalid("num_classes must be >= 1"));
        }
        let mut seen = BTreeSet::new();
        for ex in &examples {
            if ex.features.len() != dim {
                return Err(Error::invalid(format!(
                    "example {} has {} features, expected {}",
                    ex.id,
                    ex.features.len(),
                    dim
                )));
            }
            if ex.clean_label >= num_classes {
                return Err(Error::invalid(format!(
                    "example {} has label {} outside [0, {})",
                    ex.id, ex.clean_label, num_classes
                )));
            }
            if !seen.insert(ex.id) {
                return Err(Error::invalid(format!("duplicate example id {}", ex.id)));
            }
        }
        Ok(Dataset {
            examples,
            dim,
            num_classes,
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.examples.iter().map(|e| e.id)
    }

    /// Subset by id, preserving this dataset's example order.
    pub fn subset(&self, ids: &BTreeSet<u64>) -> Dataset {
        Dataset {
            examples: self
                .examples
                .iter()
                .filter(|e| ids.contains(&e.id))
                .cloned()
                .collect(),
            dim: self.dim,
            num_classes: self.num_classes,
        }
    }

    /// Replace every example's clean label (used to build noisy-label
    /// training sets). `labels[i]` applies to `examples()[i]`.
    pub fn with_labels(&self, labels: &[usize]) -> Result<Dataset> {
        if labels.len() != self.examples.len() {
            return Err(Error::invalid("label count does not match dataset size"));
        }
        let examples = self
            .examples
            .iter()
            .zip(labels)
            .map(|(ex, &lab)| Example {
                id: ex.id,
                features: ex.features.clone(),
                clean_label: lab,
            })
            .collect();
        Dataset::new(examples, self.dim, self.num_classes)
    }

    /// Write the `id,feature_0,...,feature_{d-1},clean_label` CSV layout.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str("id");
        for j in 0..self.dim {
            let _ = write!(out, ",feature_{j}");
        }
        out.push_str(",clean_label\n");
        for ex in &self.examples {
            let _ = write!(out, "{}", ex.id);
            for v in &ex.features {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{}", ex.clean_label);
        }
        out
    }

    /// Parse the CSV layout produced by [`Dataset::to_csv`].
    pub fn from_csv(text: &str, path: &Path) -> Result<Dataset> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::invalid(format!("{}: empty dataset file", path.display())))?;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 3 || cols[0] != "id" || cols[cols.len() - 1] != "clean_label" {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: 1,
                detail: "expected header id,feature_0,...,clean_label".into(),
            });
        }
        let dim = cols.len() - 2;
        let parse = |line: usize, field: &str| -> Result<f64> {
            field.parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line,
                detail: format!("bad number {field:?}"),
            })
        };
        let mut examples = Vec::new();
        let mut max_label = 0usize;
        for (idx, line) in lines {
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != dim + 2 {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: idx + 1,
                    detail: format!("expected {} fields, got {}", dim + 2, fields.len()),
                });
            }
            let id = fields[0].parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                detail: format!("bad id {:?}", fields[0]),
            })?;
            let features = fields[1..=dim]
                .iter()
                .map(|f| parse(idx + 1, f))
                .collect::<Result<Vec<f64>>>()?;
            let clean_label = fields[dim + 1].parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                detail: format!("bad label {:?}", fields[dim + 1]),
            })?;
            max_label = max_label.max(clean_label);
            examples.push(Example {
                id,
                features,
                clean_label,
            });
        }
        Dataset::new(examples, dim, max_label + 1)
    }
}

/// A probability vector over the label space.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabel {
    probs: Vec<f64>,
}

impl SoftLabel {
    /// Validate non-negativity and unit sum (within [`PROB_SUM_TOL`]).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("soft label must have at least one class"));
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::invalid("soft label entries must be finite and >= 0"));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::invalid(format!(
                "soft label sums to {sum}, expected 1 within {PROB_SUM_TOL}"
            )));
        }
        Ok(SoftLabel { probs })
    }

    pub fn one_hot(class: usize, num_classes: usize) -> Self {
        let mut probs = vec![0.0; num_classes];
        probs[class] = 1.0;
        SoftLabel { probs }
    }

    /// Empirical frequency vector from a multiset of labels.
    pub fn from_counts(labels: &[usize], num_classes: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("cannot build a soft label from zero labels"));
        }
        let mut probs = vec![0.0; num_classes];
        for &lab in labels {
            if lab >= num_classes {
                return Err(Error::invalid(format!(
                    "label {lab} outside [0, {num_classes})"
                )));
            }
            probs[lab] += 1.0;
        }
        let n = labels.len() as f64;
        for p in &mut probs {
            *p /= n;
        }
        Ok(SoftLabel { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    /// Index of the largest probability; ties break to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }

    /// Convex combination `weight * self + (1 - weight) * other`.
    pub fn blend(&self, other: &SoftLabel, weight: f64) -> SoftLabel {
        let probs = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| weight * a + (1.0 - weight) * b)
            .collect();
        SoftLabel { probs }
    }

    /// One categorical draw from this distribution.
    pub fn sample(&self, seed: &SeedSpec) -> usize {
        let mut rng = seed.rng();
        let r: f64 = rng.random();
        let mut acc = 0.0;
        for (k, &p) in self.probs.iter().enumerate() {
            acc += p;
            if r < acc {
                return k;
            }
        }
        self.probs.len() - 1
    }
}

/// Argmax with lowest-index tie-break.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// The five disjoint pipeline splits.
#[derive(Debug, Clone)]
pub struct FiveSplits {
    pub clean_label_train: Dataset,
    pub clean_label_valid: Dataset,
    pub noisy_label_train: Dataset,
    pub noisy_label_valid: Dataset,
    pub test: Dataset,
}

/// Default split ratios: half the data goes to the noisy-label training
/// split, with modest validation and test shares.
pub const DEFAULT_SPLIT_RATIOS: [f64; 5] = [0.25, 0.05, 0.5, 0.05, 0.15];

impl FiveSplits {
    pub fn splits(&self) -> [&Dataset; 5] {
        [
            &self.clean_label_train,
            &self.clean_label_valid,
            &self.noisy_label_train,
            &self.noisy_label_valid,
            &self.test,
        ]
    }
}

/// Split sizes by largest-remainder rounding: floors first, then one extra
/// item per split in order of descending fractional remainder.
pub fn largest_remainder_sizes(n: usize, ratios: &[f64; 5]) -> [usize; 5] {
    let mut sizes = [0usize; 5];
    let mut remainders = [(0.0f64, 0usize); 5];
    let mut assigned = 0usize;
    for (i, &r) in ratios.iter().enumerate() {
        let share = r * n as f64;
        let floor = share.floor() as usize;
        sizes[i] = floor;
        assigned += floor;
        remainders[i] = (share - floor as f64, i);
    }
    // Descending remainder; ties go to the lower index.
    remainders.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    for k in 0..n.saturating_sub(assigned) {
        sizes[remainders[k].1] += 1;
    }
    sizes
}

/// Seeded shuffle-then-cut into the five splits.
pub fn make_splits(dataset: &Dataset, ratios: [f64; 5], seed: &SeedSpec) -> Result<FiveSplits> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot split an empty dataset"));
    }
    if ratios.iter().any(|&r| r < 0.0) {
        return Err(Error::invalid("split ratios must be nonnegative"));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOL {
        return Err(Error::invalid(format!(
            "split ratios sum to {sum}, expected 1 within {PROB_SUM_TOL}"
        )));
    }
    let sizes = largest_remainder_sizes(dataset.len(), &ratios);
    for (i, (&size, &ratio)) in sizes.iter().zip(&ratios).enumerate() {
        if ratio > 0.0 && size == 0 {
            return Err(Error::invalid(format!(
                "split {i} has ratio {ratio} but would receive 0 of {} items",
                dataset.len()
            )));
        }
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut seed.rng());
    let mut cut = order.into_iter();
    let mut take = |count: usize| -> Dataset {
        let examples: Vec<Example> = (&mut cut)
            .take(count)
            .map(|i| dataset.examples()[i].clone())
            .collect();
        Dataset {
            examples,
            dim: dataset.dim(),
            num_classes: dataset.num_classes(),
        }
    };
    Ok(FiveSplits {
        clean_label_train: take(sizes[0]),
        clean_label_valid: take(sizes[1]),
        noisy_label_train: take(sizes[2]),
        noisy_label_valid: take(sizes[3]),
        test: take(sizes[4]),
    })
}

/// Pick one `(label, rater_id)` uniformly from a multi-rater record.
pub fn sample_single_noisy_label(
    record: &[(usize, usize)],
    seed: &SeedSpec,
) -> Result<(usize, usize)> {
    if record.is_empty() {
        return Err(Error::invalid("no rater labels to sample from"));
    }
    let idx = seed.rng().random_range(0..record.len());
    let (rater_id, label) = record[idx];
    Ok((label, rater_id))
}

/// Parameters for the synthetic Gaussian classification task.
///
/// Classes are isotropic Gaussians. By default class `k` is centered at
/// `separation * e_k` (requires `num_classes <= dim`); pass explicit
/// `centers` for anything else, e.g. clustered fine-grained classes.
/// Larger `separation` means an easier task; `separation = 0` collapses all
/// classes onto one distribution.
#[derive(Debug, Clone)]
pub struct GaussianTaskSpec {
    pub num_classes: usize,
    pub dim: usize,
    pub per_class_counts: Vec<usize>,
    pub separation: f64,
    pub covariance_scale: f64,
    pub centers: Option<Vec<Vec<f64>>>,
}

impl GaussianTaskSpec {
    /// Balanced task with default axis-aligned centers.
    pub fn balanced(num_classes: usize, dim: usize, per_class: usize, separation: f64) -> Self {
        GaussianTaskSpec {
            num_classes,
            dim,
            per_class_counts: vec![per_class; num_classes],
            separation,
            covariance_scale: 1.0,
            centers: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::invalid("gaussian task needs at least 2 classes"));
        }
        if self.per_class_counts.len() != self.num_classes {
            return Err(Error::invalid("per_class_counts length must equal num_classes"));
        }
        if self.per_class_counts.iter().any(|&c| c < 1) {
            return Err(Error::invalid("per-class counts must be >= 1"));
        }
        if !(self.covariance_scale > 0.0) {
            return Err(Error::invalid("covariance scale must be positive"));
        }
        if self.separation < 0.0 {
            return Err(Error::invalid("separation must be nonnegative"));
        }
        if let Some(centers) = &self.centers {
            if centers.len() != self.num_classes
                || centers.iter().any(|c| c.len() != self.dim)
            {
                return Err(Error::invalid(
                    "explicit centers must be num_classes vectors of length dim",
                ));
            }
        } else if self.num_classes > self.dim {
            return Err(Error::invalid(
                "default axis-aligned centers need num_classes <= dim; pass explicit centers",
            ));
        }
        Ok(())
    }

    /// The class centers this spec resolves to.
    pub fn resolved_centers(&self) -> Result<Vec<Vec<f64>>> {
        self.validate()?;
        if let Some(centers) = &self.centers {
            return Ok(centers.clone());
        }
        Ok((0..self.num_classes)
            .map(|k| {
                let mut c = vec![0.0; self.dim];
                c[k] = self.separation;
                c
            })
            .collect())
    }

    /// Signed distance to the Bayes boundary of a binary task with equal
    /// isotropic covariances (the perpendicular bisector of the centers).
    /// Positive values are on class 1's side.
    pub fn bayes_margin(&self, features: &[f64]) -> Result<f64> {
        if self.num_classes != 2 {
            return Err(Error::invalid("bayes_margin is defined for binary tasks"));
        }
        let centers = self.resolved_centers()?;
        let w: Vec<f64> = centers[1]
            .iter()
            .zip(&centers[0])
            .map(|(a, b)| a - b)
            .collect();
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        let sq = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
        let b = (sq(&centers[0]) - sq(&centers[1])) / 2.0;
        let dot: f64 = w.iter().zip(features).map(|(a, b)| a * b).sum();
        Ok((dot + b) / norm)
    }
}

/// Sample the task: per class, `count` draws from an isotropic Gaussian at
/// the class center. Ids are assigned sequentially class by class.
pub fn make_gaussian_task(spec: &GaussianTaskSpec, seed: &SeedSpec) -> Result<Dataset> {
    let centers = spec.resolved_centers()?;
    let normal = Normal::new(0.0, spec.covariance_scale).expect("validated scale");
    let mut rng = seed.rng();
    let mut examples = Vec::with_capacity(spec.per_class_counts.iter().sum());
    let mut next_id = 0u64;
    for (class, &count) in spec.per_class_counts.iter().enumerate() {
        for _ in 0..count {
            let features = centers[class]
                .iter()
                .map(|&c| c + normal.sample(&mut rng))
                .collect();
            examples.push(Example {
                id: next_id,
                features,
                clean_label: class,
            });
            next_id += 1;
        }
    }
    Dataset::new(examples, spec.dim, spec.num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(n: usize) -> Dataset {
        let examples = (0..n)
            .map(|i| Example {
                id: i as u64,
                features: vec![i as f64, -(i as f64)],
                clean_label: i % 2,
            })
            .collect();
        Dataset::new(examples, 2, 2).unwrap()
    }

    #[test]
    fn default_ratios_give_half_to_noisy_train() {
        let splits = make_splits(
            &toy_dataset(1000),
            DEFAULT_SPLIT_RATIOS,
            &SeedSpec::new(1, "split"),
        )
        .unwrap();
        assert_eq!(splits.noisy_label_train.len(), 500);
        assert_eq!(splits.clean_label_train.len(), 250);
        assert_eq!(splits.clean_label_valid.len(), 50);
        assert_eq!(splits.noisy_label_valid.len(), 50);
        assert_eq!(splits.test.len(), 150);
    }

    #[test]
    fn degenerate_ratio_puts_everything_in_clean_train() {
        let splits = make_splits(
            &toy_dataset(64),
            [1.0, 0.0, 0.0, 0.0, 0.0],
            &SeedSpec::new(1, "split"),
        )
        .unwrap();
        assert_eq!(splits.clean_label_train.len(), 64);
        assert!(splits.test.is_empty());
    }

    #[test]
    fn splits_are_deterministic() {
        let data = toy_dataset(137);
        let seed = SeedSpec::new(42, "split");
        let a = make_splits(&data, DEFAULT_SPLIT_RATIOS, &seed).unwrap();
        let b = make_splits(&data, DEFAULT_SPLIT_RATIOS, &seed).unwrap();
        for (x, y) in a.splits().iter().zip(b.splits().iter()) {
            assert_eq!(x.examples(), y.examples());
        }
    }

    #[test]
    fn splits_partition_the_source() {
        let data = toy_dataset(233);
        let splits = make_splits(&data, DEFAULT_SPLIT_RATIOS, &SeedSpec::new(9, "split")).unwrap();
        let mut seen = BTreeSet::new();
        for split in splits.splits() {
            for id in split.ids() {
                assert!(seen.insert(id), "id {id} appears in two splits");
            }
        }
        assert_eq!(seen.len(), data.len());
    }

    #[test]
    fn bad_ratios_are_rejected() {
        let data = toy_dataset(10);
        let seed = SeedSpec::new(1, "split");
        assert!(make_splits(&data, [0.5, 0.0, 0.0, 0.0, 0.4], &seed).is_err());
        assert!(make_splits(&data, [1.5, 0.0, 0.0, 0.0, -0.5], &seed).is_err());
        let empty = Dataset::new(vec![], 2, 2).unwrap();
        assert!(make_splits(&empty, DEFAULT_SPLIT_RATIOS, &seed).is_err());
    }

    #[test]
    fn positive_ratio_with_zero_share_is_an_error() {
        // Two items cannot populate five positive-ratio splits.
        let data = toy_dataset(2);
        assert!(make_splits(&data, DEFAULT_SPLIT_RATIOS, &SeedSpec::new(1, "split")).is_err());
    }

    #[test]
    fn single_rater_label_is_forced() {
        let record = [(3usize, 7usize)];
        for trial in 0..10 {
            let seed = SeedSpec::new(trial, "single");
            assert_eq!(sample_single_noisy_label(&record, &seed).unwrap(), (7, 3));
        }
    }

    #[test]
    fn rater_selection_is_uniform() {
        let record: Vec<(usize, usize)> = (0..10).map(|r| (r, r)).collect();
        let n = 100_000usize;
        let mut counts = vec![0usize; 10];
        let seed = SeedSpec::new(5, "single");
        for i in 0..n {
            let (_, rater) = sample_single_noisy_label(&record, &seed.child(format!("ex:{i}"))).unwrap();
            counts[rater] += 1;
        }
        let p = 0.1;
        let three_sigma = 3.0 * (p * (1.0 - p) / n as f64).sqrt();
        for &c in &counts {
            let freq = c as f64 / n as f64;
            assert!(
                (freq - p).abs() <= three_sigma,
                "rater frequency {freq} outside 0.1 +/- {three_sigma}"
            );
        }
    }

    #[test]
    fn sampling_is_repeatable() {
        let record: Vec<(usize, usize)> = (0..5).map(|r| (r, r + 10)).collect();
        let seed = SeedSpec::new(77, "single");
        assert_eq!(
            sample_single_noisy_label(&record, &seed).unwrap(),
            sample_single_noisy_label(&record, &seed).unwrap()
        );
    }

    #[test]
    fn empty_record_is_an_error() {
        assert!(sample_single_noisy_label(&[], &SeedSpec::new(1, "single")).is_err());
    }

    #[test]
    fn forced_class_counts() {
        let spec = GaussianTaskSpec {
            num_classes: 2,
            dim: 2,
            per_class_counts: vec![900, 100],
            separation: 3.0,
            covariance_scale: 1.0,
            centers: None,
        };
        let data = make_gaussian_task(&spec, &SeedSpec::new(3, "gen")).unwrap();
        let majority = data
            .examples()
            .iter()
            .filter(|e| e.clean_label == 0)
            .count();
        assert_eq!(majority, 900);
        assert_eq!(data.len(), 1000);
    }

    #[test]
    fn gaussian_task_rejects_bad_specs() {
        let mut spec = GaussianTaskSpec::balanced(2, 2, 10, 1.0);
        spec.covariance_scale = 0.0;
        assert!(make_gaussian_task(&spec, &SeedSpec::new(1, "gen")).is_err());
        let spec = GaussianTaskSpec::balanced(5, 2, 10, 1.0);
        assert!(make_gaussian_task(&spec, &SeedSpec::new(1, "gen")).is_err());
    }

    #[test]
    fn gaussian_task_is_deterministic() {
        let spec = GaussianTaskSpec::balanced(3, 4, 20, 2.0);
        let a = make_gaussian_task(&spec, &SeedSpec::new(8, "gen")).unwrap();
        let b = make_gaussian_task(&spec, &SeedSpec::new(8, "gen")).unwrap();
        assert_eq!(a.examples(), b.examples());
    }

    #[test]
    fn soft_label_validation() {
        assert!(SoftLabel::new(vec![0.5, 0.5]).is_ok());
        assert!(SoftLabel::new(vec![0.6, 0.5]).is_err());
        assert!(SoftLabel::new(vec![-0.1, 1.1]).is_err());
        let sl = SoftLabel::from_counts(&[0, 0, 0, 0, 0, 0, 0, 1, 1, 1], 2).unwrap();
        assert_eq!(sl.probs(), &[0.7, 0.3]);
    }

    #[test]
    fn soft_label_sampling_matches_distribution() {
        let sl = SoftLabel::new(vec![0.25, 0.75]).unwrap();
        let n = 100_000usize;
        let seed = SeedSpec::new(4, "draw");
        let ones: usize = (0..n)
            .filter(|i| sl.sample(&seed.child(format!("{i}"))) == 1)
            .count();
        let freq = ones as f64 / n as f64;
        let three_sigma = 3.0 * (0.75f64 * 0.25 / n as f64).sqrt();
        assert!((freq - 0.75).abs() <= three_sigma);
    }

    #[test]
    fn dataset_csv_round_trip() {
        let data = toy_dataset(7);
        let text = data.to_csv();
        let parsed = Dataset::from_csv(&text, Path::new("mem.csv")).unwrap();
        assert_eq!(parsed.examples(), data.examples());
        assert_eq!(parsed.dim(), 2);
    }

    #[test]
    fn margin_is_distance_to_bisector() {
        let spec = GaussianTaskSpec::balanced(2, 2, 10, 4.0);
        // Centers (4,0) and (0,4): the bisector is the diagonal x0 = x1, so
        // (4,0) sits |4 - 0| / sqrt(2) away from it.
        let m = spec.bayes_margin(&[4.0, 0.0]).unwrap();
        assert!((m.abs() - 4.0 / 2.0f64.sqrt()).abs() < 1e-12);
        assert!(m < 0.0, "class-0 center lies on the negative side");
        assert!(spec.bayes_margin(&[1.0, 1.0]).unwrap().abs() < 1e-12);
    }
}
