//! Synthetic label-noise generators and confusion-matrix estimation.
//!
//! Two baseline generators: independent flipping (with probability `delta`
//! a label moves to one of the other `K-1` classes, uniformly) and
//! class-conditional flipping driven by a row-stochastic transition matrix.
//! `estimate_confusion` recovers a transition matrix from (clean, noisy)
//! pairs, and `upsample_incorrect` duplicates wrong labels until a dataset
//! reaches a requested error rate.

use crate::error::{Error, Result};
use crate::seed::SeedSpec;
use rand::Rng;
use std::fmt::Write as _;
use std::path::Path;

/// Row-stochastic `K x K` matrix: entry `(i, j)` is `P(noisy = j | clean = i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    rows: Vec<Vec<f64>>,
}

impl TransitionMatrix {
    /// Validate entries in `[0, 1]` and unit row sums (within 1e-9).
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let k = rows.len();
        if k < 2 {
            return Err(Error::invalid("transition matrix needs K >= 2"));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(Error::invalid(format!(
                    "transition row {i} has {} entries, expected {k}",
                    row.len()
                )));
            }
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::invalid(format!("transition row {i} has entries outside [0,1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid(format!(
                    "transition row {i} sums to {sum}, expected 1 within 1e-9"
                )));
            }
        }
        Ok(TransitionMatrix { rows })
    }

    pub fn identity(k: usize) -> Self {
        let rows = (0..k)
            .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        TransitionMatrix { rows }
    }

    /// The matrix realized by independent flipping:
    /// `(1-delta) I + delta/(K-1) (J - I)`.
    pub fn from_independent(delta: f64, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::invalid("independent flipping needs K >= 2"));
        }
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::invalid("delta must be in [0, 1]"));
        }
        let off = delta / (k - 1) as f64;
        let rows = (0..k)
            .map(|i| {
                (0..k)
                    .map(|j| if i == j { 1.0 - delta } else { off })
                    .collect()
            })
            .collect();
        Ok(TransitionMatrix { rows })
    }

    pub fn num_classes(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn get(&self, clean: usize, noisy: usize) -> f64 {
        self.rows[clean][noisy]
    }

    /// Row-major flattening, used by the rater-features encoding.
    pub fn flat(&self) -> Vec<f64> {
        self.rows.iter().flatten().copied().collect()
    }

    /// One draw of a noisy label for a clean label.
    fn sample_row(&self, clean: usize, rng: &mut impl Rng) -> usize {
        let r: f64 = rng.random();
        let mut acc = 0.0;
        for (j, &p) in self.rows[clean].iter().enumerate() {
            acc += p;
            if r < acc {
                return j;
            }
        }
        self.rows[clean].len() - 1
    }

    /// Headerless CSV: K rows of K comma-separated probabilities.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let mut first = true;
            for v in row {
                if !first {
                    out.push(',');
                }
                let _ = write!(out, "{v}");
                first = false;
            }
            out.push('\n');
        }
        out
    }

    /// Parse and re-validate the [`TransitionMatrix::to_csv`] layout.
    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let mut rows = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|f| {
                    f.parse::<f64>().map_err(|_| Error::Parse {
                        path: path.display().to_string(),
                        line: idx + 1,
                        detail: format!("bad probability {f:?}"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        TransitionMatrix::new(rows)
    }
}

/// Which baseline generator to apply.
#[derive(Debug, Clone)]
pub enum NoiseSpec {
    Independent { delta: f64, num_classes: usize },
    ClassConditional { transition: TransitionMatrix },
}

impl NoiseSpec {
    pub fn apply(&self, clean_labels: &[usize], seed: &SeedSpec) -> Result<Vec<usize>> {
        match self {
            NoiseSpec::Independent { delta, num_classes } => {
                flip_independent(clean_labels, *delta, *num_classes, seed)
            }
            NoiseSpec::ClassConditional { transition } => {
                flip_class_conditional(clean_labels, transition, seed)
            }
        }
    }
}

/// Independent flipping: keep the label with probability `1 - delta`,
/// otherwise move to one of the other `K - 1` classes uniformly.
pub fn flip_independent(
    clean_labels: &[usize],
    delta: f64,
    num_classes: usize,
    seed: &SeedSpec,
) -> Result<Vec<usize>> {
    if num_classes < 2 {
        return Err(Error::invalid("independent flipping needs K >= 2"));
    }
    if !(0.0..=1.0).contains(&delta) {
        return Err(Error::invalid("delta must be in [0, 1]"));
    }
    if let Some(&bad) = clean_labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::invalid(format!("label {bad} outside [0, {num_classes})")));
    }
    let mut rng = seed.rng();
    Ok(clean_labels
        .iter()
        .map(|&label| {
            if rng.random::<f64>() < delta {
                // Uniform over the K-1 other classes.
                let draw = rng.random_range(0..num_classes - 1);
                if draw >= label {
                    draw + 1
                } else {
                    draw
                }
            } else {
                label
            }
        })
        .collect())
}

/// Class-conditional flipping: label `i` maps to `j` with probability
/// `T[i][j]`, independently per example.
pub fn flip_class_conditional(
    clean_labels: &[usize],
    transition: &TransitionMatrix,
    seed: &SeedSpec,
) -> Result<Vec<usize>> {
    let k = transition.num_classes();
    if let Some(&bad) = clean_labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!("label {bad} outside [0, {k})")));
    }
    let mut rng = seed.rng();
    Ok(clean_labels
        .iter()
        .map(|&label| transition.sample_row(label, &mut rng))
        .collect())
}

/// Confusion estimate from paired labels:
/// `t[i][j] = count(clean = i, noisy = j) / count(clean = i)`.
/// Clean classes with zero observations fall back to a uniform row; the
/// affected classes are returned alongside the matrix.
pub fn estimate_confusion(
    pairs: &[(usize, usize)],
    num_classes: usize,
) -> Result<(TransitionMatrix, Vec<usize>)> {
    if num_classes < 2 {
        return Err(Error::invalid("confusion estimation needs K >= 2"));
    }
    if pairs.is_empty() {
        return Err(Error::invalid("no (clean, noisy) pairs to estimate from"));
    }
    let mut counts = vec![vec![0usize; num_classes]; num_classes];
    for &(clean, noisy) in pairs {
        if clean >= num_classes || noisy >= num_classes {
            return Err(Error::invalid(format!(
                "pair ({clean}, {noisy}) outside [0, {num_classes})"
            )));
        }
        counts[clean][noisy] += 1;
    }
    let mut empty_rows = Vec::new();
    let rows = counts
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: usize = row.iter().sum();
            if total == 0 {
                empty_rows.push(i);
                vec![1.0 / num_classes as f64; num_classes]
            } else {
                row.iter().map(|&c| c as f64 / total as f64).collect()
            }
        })
        .collect();
    Ok((TransitionMatrix::new(rows)?, empty_rows))
}

/// A multi-rater label record paired with its example's clean label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairedLabel {
    pub example_id: u64,
    pub rater_id: usize,
    pub label: usize,
    pub clean_label: usize,
}

/// Duplicate uniformly-chosen incorrect records until the overall error rate
/// is within half a point of `target_error_rate`. Never removes records or
/// touches clean labels; only increases noise.
pub fn upsample_incorrect(
    records: &[PairedLabel],
    target_error_rate: f64,
    seed: &SeedSpec,
) -> Result<Vec<PairedLabel>> {
    if records.is_empty() {
        return Err(Error::invalid("no label records to upsample"));
    }
    if !(0.0..=1.0).contains(&target_error_rate) {
        return Err(Error::invalid("target error rate must be in [0, 1]"));
    }
    let n_total = records.len();
    let incorrect: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.label != r.clean_label)
        .map(|(i, _)| i)
        .collect();
    let current = incorrect.len() as f64 / n_total as f64;
    if target_error_rate < current - 1e-12 {
        return Err(Error::invalid(format!(
            "target rate {target_error_rate} below current rate {current}; upsampling only adds noise"
        )));
    }
    // Solve (n_bad + d) / (n_total + d) = target for the duplicate count d.
    let d = if target_error_rate >= 1.0 {
        return Err(Error::invalid("target rate 1.0 is unreachable by duplication"));
    } else {
        ((target_error_rate * n_total as f64 - incorrect.len() as f64)
            / (1.0 - target_error_rate))
            .round()
            .max(0.0) as usize
    };
    if d > 0 && incorrect.is_empty() {
        return Err(Error::invalid(
            "no incorrect labels to duplicate toward the target rate",
        ));
    }
    let mut out = records.to_vec();
    let mut rng = seed.rng();
    for _ in 0..d {
        let pick = incorrect[rng.random_range(0..incorrect.len())];
        out.push(records[pick]);
    }
    Ok(out)
}

/// Error rate of a paired record set.
pub fn paired_error_rate(records: &[PairedLabel]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records.iter().filter(|r| r.label != r.clean_label).count() as f64 / records.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(counts: &[(usize, usize)]) -> Vec<usize> {
        counts
            .iter()
            .flat_map(|&(label, n)| std::iter::repeat_n(label, n))
            .collect()
    }

    #[test]
    fn zero_delta_keeps_labels() {
        let clean = labels(&[(0, 50), (1, 50), (2, 50)]);
        let noisy = flip_independent(&clean, 0.0, 3, &SeedSpec::new(1, "flip")).unwrap();
        assert_eq!(noisy, clean);
    }

    #[test]
    fn delta_one_binary_flips_everything() {
        let clean = labels(&[(0, 40), (1, 60)]);
        let noisy = flip_independent(&clean, 1.0, 2, &SeedSpec::new(2, "flip")).unwrap();
        for (c, n) in clean.iter().zip(&noisy) {
            assert_eq!(*n, 1 - *c);
        }
    }

    #[test]
    fn independent_flip_matches_formula() {
        // delta = 0.3, K = 10: retention 0.7, each wrong class 0.3/9.
        let n = 100_000usize;
        let clean = vec![4usize; n];
        let noisy = flip_independent(&clean, 0.3, 10, &SeedSpec::new(3, "flip")).unwrap();
        let kept = noisy.iter().filter(|&&l| l == 4).count() as f64 / n as f64;
        let sig_keep = (0.7f64 * 0.3 / n as f64).sqrt();
        assert!((kept - 0.7).abs() <= 3.0 * sig_keep, "retention {kept}");
        let p_wrong = 0.3 / 9.0;
        let sig_wrong = (p_wrong * (1.0 - p_wrong) / n as f64).sqrt();
        for class in (0..10).filter(|&c| c != 4) {
            let freq = noisy.iter().filter(|&&l| l == class).count() as f64 / n as f64;
            assert!(
                (freq - p_wrong).abs() <= 3.0 * sig_wrong,
                "class {class} frequency {freq}"
            );
        }
    }

    #[test]
    fn identity_transition_keeps_labels() {
        let clean = labels(&[(0, 30), (1, 30)]);
        let t = TransitionMatrix::identity(2);
        assert_eq!(
            flip_class_conditional(&clean, &t, &SeedSpec::new(4, "flip")).unwrap(),
            clean
        );
    }

    #[test]
    fn uniform_rows_give_uniform_output() {
        let k = 4;
        let t = TransitionMatrix::new(vec![vec![0.25; k]; k]).unwrap();
        let clean: Vec<usize> = (0..100_000).map(|i| i % k).collect();
        let noisy = flip_class_conditional(&clean, &t, &SeedSpec::new(5, "flip")).unwrap();
        let p = 0.25;
        let sigma = (p * (1.0 - p) / clean.len() as f64).sqrt();
        for class in 0..k {
            let freq = noisy.iter().filter(|&&l| l == class).count() as f64 / clean.len() as f64;
            assert!((freq - p).abs() <= 3.0 * sigma, "class {class} frequency {freq}");
        }
    }

    #[test]
    fn per_class_flip_rates_follow_rows() {
        let t = TransitionMatrix::new(vec![vec![0.8, 0.2], vec![0.1, 0.9]]).unwrap();
        let n = 50_000usize;
        let clean: Vec<usize> = labels(&[(0, n), (1, n)]);
        let noisy = flip_class_conditional(&clean, &t, &SeedSpec::new(6, "flip")).unwrap();
        let flips0 = clean
            .iter()
            .zip(&noisy)
            .filter(|(c, n)| **c == 0 && **n == 1)
            .count() as f64
            / n as f64;
        let flips1 = clean
            .iter()
            .zip(&noisy)
            .filter(|(c, n)| **c == 1 && **n == 0)
            .count() as f64
            / n as f64;
        let sig0 = (0.2f64 * 0.8 / n as f64).sqrt();
        let sig1 = (0.1f64 * 0.9 / n as f64).sqrt();
        assert!((flips0 - 0.2).abs() <= 3.0 * sig0, "class-0 flip rate {flips0}");
        assert!((flips1 - 0.1).abs() <= 3.0 * sig1, "class-1 flip rate {flips1}");
    }

    #[test]
    fn confusion_from_correct_labels_is_identity() {
        let pairs: Vec<(usize, usize)> = (0..60).map(|i| (i % 3, i % 3)).collect();
        let (t, empty) = estimate_confusion(&pairs, 3).unwrap();
        assert_eq!(t, TransitionMatrix::identity(3));
        assert!(empty.is_empty());
    }

    #[test]
    fn confusion_matches_direct_counts() {
        let pairs = [(0, 0), (0, 0), (0, 0), (0, 0), (0, 0), (0, 0), (0, 0), (0, 0), (0, 1), (0, 1), (1, 1)];
        let (t, _) = estimate_confusion(&pairs, 2).unwrap();
        assert_eq!(t.rows()[0], vec![0.8, 0.2]);
        assert_eq!(t.rows()[1], vec![0.0, 1.0]);
    }

    #[test]
    fn confusion_estimate_converges_to_transition() {
        let t = TransitionMatrix::new(vec![vec![0.7, 0.2, 0.1], vec![0.05, 0.9, 0.05], vec![0.3, 0.3, 0.4]])
            .unwrap();
        let per_class = 100_000usize;
        let clean: Vec<usize> = (0..3).flat_map(|c| std::iter::repeat_n(c, per_class)).collect();
        let noisy = flip_class_conditional(&clean, &t, &SeedSpec::new(7, "flip")).unwrap();
        let pairs: Vec<(usize, usize)> = clean.into_iter().zip(noisy).collect();
        let (est, empty) = estimate_confusion(&pairs, 3).unwrap();
        assert!(empty.is_empty());
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (est.get(i, j) - t.get(i, j)).abs() < 0.01,
                    "entry ({i},{j}): {} vs {}",
                    est.get(i, j),
                    t.get(i, j)
                );
            }
        }
    }

    #[test]
    fn empty_clean_class_falls_back_to_uniform() {
        let pairs = [(0, 0), (0, 1), (2, 2), (2, 2)];
        let (t, empty) = estimate_confusion(&pairs, 3).unwrap();
        assert_eq!(empty, vec![1]);
        assert_eq!(t.rows()[1], vec![1.0 / 3.0; 3]);
    }

    fn paired(n_ok: usize, n_bad: usize) -> Vec<PairedLabel> {
        let mut out = Vec::new();
        for i in 0..n_ok {
            out.push(PairedLabel {
                example_id: i as u64,
                rater_id: 0,
                label: 0,
                clean_label: 0,
            });
        }
        for i in 0..n_bad {
            out.push(PairedLabel {
                example_id: (n_ok + i) as u64,
                rater_id: 0,
                label: 1,
                clean_label: 0,
            });
        }
        out
    }

    #[test]
    fn upsample_noop_at_current_rate() {
        let records = paired(90, 10);
        let out = upsample_incorrect(&records, 0.1, &SeedSpec::new(8, "up")).unwrap();
        assert_eq!(out, records);
    }

    #[test]
    fn upsample_hits_target_within_half_point() {
        // 100 labels, 10 incorrect, target 0.2: d = (0.2*100 - 10)/0.8 = 12.5.
        let records = paired(90, 10);
        let out = upsample_incorrect(&records, 0.2, &SeedSpec::new(9, "up")).unwrap();
        let added = out.len() - records.len();
        assert!((12..=13).contains(&added), "added {added} duplicates");
        let rate = paired_error_rate(&out);
        assert!((0.195..=0.205).contains(&rate), "rate {rate}");
        // Nothing removed, prefix intact.
        assert_eq!(&out[..records.len()], &records[..]);
    }

    #[test]
    fn paper_target_rates_are_accepted() {
        let records = paired(950, 50);
        for &target in &[0.130, 0.217, 0.524] {
            let out = upsample_incorrect(&records, target, &SeedSpec::new(10, "up")).unwrap();
            let rate = paired_error_rate(&out);
            assert!((rate - target).abs() <= 0.005, "target {target}, rate {rate}");
        }
    }

    #[test]
    fn upsample_rejects_lower_target() {
        let records = paired(50, 50);
        assert!(upsample_incorrect(&records, 0.2, &SeedSpec::new(11, "up")).is_err());
        let clean_only = paired(50, 0);
        assert!(upsample_incorrect(&clean_only, 0.3, &SeedSpec::new(11, "up")).is_err());
    }

    #[test]
    fn independent_is_special_case_of_class_conditional() {
        // Matched empirical distributions within 3 sigma at 100k draws.
        let n = 100_000usize;
        let k = 5;
        let delta = 0.4;
        let clean: Vec<usize> = (0..n).map(|i| i % k).collect();
        let a = flip_independent(&clean, delta, k, &SeedSpec::new(12, "a")).unwrap();
        let t = TransitionMatrix::from_independent(delta, k).unwrap();
        let b = flip_class_conditional(&clean, &t, &SeedSpec::new(12, "b")).unwrap();
        for class in 0..k {
            let fa = a.iter().filter(|&&l| l == class).count() as f64 / n as f64;
            let fb = b.iter().filter(|&&l| l == class).count() as f64 / n as f64;
            let p = 1.0 / k as f64;
            let sigma = (p * (1.0 - p) / n as f64).sqrt();
            assert!((fa - fb).abs() <= 3.0 * 2.0f64.sqrt() * sigma, "class {class}: {fa} vs {fb}");
        }
    }

    #[test]
    fn transition_csv_round_trip() {
        let t = TransitionMatrix::new(vec![vec![0.8, 0.2], vec![0.1, 0.9]]).unwrap();
        let text = t.to_csv();
        let back = TransitionMatrix::from_csv(&text, Path::new("t.csv")).unwrap();
        assert_eq!(t, back);
        assert!(TransitionMatrix::from_csv("0.5,0.6\n0.5,0.4\n", Path::new("t.csv")).is_err());
    }
}
