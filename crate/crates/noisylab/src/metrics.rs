//! Dataset and model evaluation metrics: rater error rate, Krippendorff's
//! alpha, mean total variation distance, accuracy, and average precision.

use crate::data::{Dataset, SoftLabel};
use crate::error::{Error, Result};
use crate::nnkit::MlpModel;
use crate::rater::NoisyDataset;
use std::fmt::Write as _;

/// Items-by-raters table of optional labels; the input to agreement
/// metrics. Missing cells are allowed.
#[derive(Debug, Clone)]
pub struct LabelMatrix {
    cells: Vec<Vec<Option<usize>>>,
    num_classes: usize,
}

impl LabelMatrix {
    pub fn new(cells: Vec<Vec<Option<usize>>>, num_classes: usize) -> Result<Self> {
        if cells.len() < 2 {
            return Err(Error::invalid("label matrix needs at least 2 items"));
        }
        let width = cells[0].len();
        if cells.iter().any(|row| row.len() != width) {
            return Err(Error::invalid("label matrix rows differ in width"));
        }
        let mut present = 0usize;
        for row in &cells {
            for cell in row.iter().flatten() {
                if *cell >= num_classes {
                    return Err(Error::invalid(format!(
                        "label {cell} outside [0, {num_classes})"
                    )));
                }
                present += 1;
            }
        }
        if present < 2 {
            return Err(Error::invalid("label matrix needs at least 2 labels overall"));
        }
        Ok(LabelMatrix { cells, num_classes })
    }

    pub fn items(&self) -> &[Vec<Option<usize>>] {
        &self.cells
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Relabel classes through a permutation (testing hook for the nominal
    /// invariance of alpha).
    pub fn permute_classes(&self, perm: &[usize]) -> LabelMatrix {
        let cells = self
            .cells
            .iter()
            .map(|row| row.iter().map(|c| c.map(|v| perm[v])).collect())
            .collect();
        LabelMatrix {
            cells,
            num_classes: self.num_classes,
        }
    }
}

/// Fraction of incorrect labels over all `(example, rater)` records.
pub fn rater_error_rate(noisy: &NoisyDataset) -> Result<f64> {
    let pairs = noisy.label_pairs();
    error_rate_of_pairs(&pairs)
}

/// Error rate over explicit `(noisy, clean)` pairs.
pub fn error_rate_of_pairs(pairs: &[(usize, usize)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("no label records"));
    }
    let wrong = pairs.iter().filter(|(noisy, clean)| noisy != clean).count();
    Ok(wrong as f64 / pairs.len() as f64)
}

/// Nominal Krippendorff's alpha from the coincidence matrix over pairable
/// values.
///
/// Items with at least two labels contribute all ordered label pairs,
/// weighted by `1/(n_item - 1)`; missing cells are skipped. With coincidence
/// marginals `n_c` and total `n`, alpha is
/// `1 - (n - 1) * sum_{c != k} o_ck / sum_{c != k} n_c n_k`. If every
/// pairable value is identical the expected disagreement is zero and alpha
/// is defined as 1.
pub fn krippendorff_alpha(m: &LabelMatrix) -> Result<f64> {
    let k = m.num_classes();
    let mut coincidence = vec![vec![0.0f64; k]; k];
    let mut any_pairable = false;
    for row in m.items() {
        let values: Vec<usize> = row.iter().flatten().copied().collect();
        if values.len() < 2 {
            continue;
        }
        any_pairable = true;
        let weight = 1.0 / (values.len() - 1) as f64;
        for (i, &a) in values.iter().enumerate() {
            for (j, &b) in values.iter().enumerate() {
                if i != j {
                    coincidence[a][b] += weight;
                }
            }
        }
    }
    if !any_pairable {
        return Err(Error::invalid("no item has two or more labels to pair"));
    }
    let marginals: Vec<f64> = coincidence.iter().map(|row| row.iter().sum()).collect();
    let n: f64 = marginals.iter().sum();
    let observed: f64 = (0..k)
        .flat_map(|c| (0..k).map(move |d| (c, d)))
        .filter(|(c, d)| c != d)
        .map(|(c, d)| coincidence[c][d])
        .sum();
    let expected: f64 = (0..k)
        .flat_map(|c| (0..k).map(move |d| (c, d)))
        .filter(|(c, d)| c != d)
        .map(|(c, d)| marginals[c] * marginals[d])
        .sum();
    if expected == 0.0 {
        // All pairable values identical: perfect agreement by definition.
        return Ok(1.0);
    }
    Ok(1.0 - (n - 1.0) * observed / expected)
}

/// Mean total variation distance between two soft-label datasets:
/// `(1/2n) * sum_i ||y_i^1 - y_i^2||_1`.
pub fn mean_tv_distance(d1: &[SoftLabel], d2: &[SoftLabel]) -> Result<f64> {
    if d1.is_empty() || d1.len() != d2.len() {
        return Err(Error::invalid("soft-label lists must be non-empty and equal length"));
    }
    let k = d1[0].num_classes();
    let mut total = 0.0;
    for (a, b) in d1.iter().zip(d2) {
        if a.num_classes() != k || b.num_classes() != k {
            return Err(Error::invalid("soft labels differ in class count"));
        }
        total += a
            .probs()
            .iter()
            .zip(b.probs())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>();
    }
    Ok(total / (2.0 * d1.len() as f64))
}

/// Per-example empirical label distributions, in example order.
pub fn multi_label_to_soft(noisy: &NoisyDataset) -> Result<Vec<SoftLabel>> {
    noisy
        .grouped_labels()
        .into_iter()
        .map(|(ex, labs)| {
            let labels: Vec<usize> = labs.iter().map(|&(_, l)| l).collect();
            if labels.is_empty() {
                return Err(Error::invalid(format!("example {} has no labels", ex.id)));
            }
            SoftLabel::from_counts(&labels, noisy.num_classes())
        })
        .collect()
}

/// Fraction of examples whose predicted class matches the clean label.
pub fn accuracy(model: &MlpModel, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot score an empty dataset"));
    }
    let mut correct = 0usize;
    for ex in dataset.examples() {
        if model.predict(&ex.features)? == ex.clean_label {
            correct += 1;
        }
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Average precision: precision summed at each positive, walking scores in
/// descending order (ties keep the stable input order), divided by the
/// positive count.
pub fn aucpr(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::invalid("scores and labels must be non-empty and equal length"));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::invalid("need at least one positive and one negative label"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut ap = 0.0;
    for idx in order {
        seen += 1;
        if labels[idx] {
            tp += 1;
            ap += tp as f64 / seen as f64;
        }
    }
    Ok(ap / positives as f64)
}

/// One row of the metrics report CSV.
#[derive(Debug, Clone)]
pub struct MetricRow {
    pub metric: String,
    pub dataset_id: String,
    pub value: f64,
    pub stderr: Option<f64>,
    pub n: usize,
}

/// Render rows in the `metric,dataset_id,value,stderr,n` layout.
pub fn metrics_to_csv(rows: &[MetricRow]) -> String {
    let mut out = String::from("metric,dataset_id,value,stderr,n\n");
    for row in rows {
        let stderr = row.stderr.map(|s| s.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            row.metric, row.dataset_id, row.value, stderr, row.n
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::SeedSpec;
    use rand::Rng;

    /// Exhaustive pair-counting alpha: enumerate every ordered within-item
    /// pair (weight `1/(m_u - 1)`) for observed disagreement and every
    /// ordered cross-position pair of pooled values for expected
    /// disagreement. Independent of the coincidence-matrix code path.
    pub(crate) fn alpha_pair_counting_oracle(m: &LabelMatrix) -> Option<f64> {
        let mut pooled: Vec<usize> = Vec::new();
        let mut observed_num = 0.0f64;
        let mut n = 0.0f64;
        for row in m.items() {
            let values: Vec<usize> = row.iter().flatten().copied().collect();
            if values.len() < 2 {
                continue;
            }
            let w = 1.0 / (values.len() - 1) as f64;
            for i in 0..values.len() {
                for j in 0..values.len() {
                    if i != j && values[i] != values[j] {
                        observed_num += w;
                    }
                }
            }
            n += values.len() as f64;
            pooled.extend(values);
        }
        if pooled.is_empty() {
            return None;
        }
        let d_o = observed_num / n;
        let mut expected_num = 0.0f64;
        for i in 0..pooled.len() {
            for j in 0..pooled.len() {
                if i != j && pooled[i] != pooled[j] {
                    expected_num += 1.0;
                }
            }
        }
        if expected_num == 0.0 {
            return Some(1.0);
        }
        let d_e = expected_num / (n * (n - 1.0));
        Some(1.0 - d_o / d_e)
    }

    fn matrix(rows: &[&[i64]], k: usize) -> LabelMatrix {
        let cells = rows
            .iter()
            .map(|row| {
                row.iter()
                    .map(|&v| if v < 0 { None } else { Some(v as usize) })
                    .collect()
            })
            .collect();
        LabelMatrix::new(cells, k).unwrap()
    }

    #[test]
    fn error_rate_counts_mismatches() {
        assert_eq!(error_rate_of_pairs(&[(0, 0), (1, 1)]).unwrap(), 0.0);
        let one_wrong: Vec<(usize, usize)> =
            (0..10).map(|i| if i == 0 { (1, 0) } else { (0, 0) }).collect();
        assert_eq!(error_rate_of_pairs(&one_wrong).unwrap(), 0.1);
        // 3 raters x 4 items with 5 mismatches -> 5/12.
        let mut pairs = vec![(0usize, 0usize); 12];
        for p in pairs.iter_mut().take(5) {
            *p = (1, 0);
        }
        assert!((error_rate_of_pairs(&pairs).unwrap() - 5.0 / 12.0).abs() < 1e-15);
        assert!(error_rate_of_pairs(&[]).is_err());
    }

    #[test]
    fn perfect_agreement_gives_alpha_one() {
        let m = matrix(&[&[1, 1, 1], &[0, 0, 0], &[2, 2, 2]], 3);
        assert_eq!(krippendorff_alpha(&m).unwrap(), 1.0);
    }

    #[test]
    fn globally_identical_labels_define_alpha_one() {
        let m = matrix(&[&[1, 1], &[1, 1]], 2);
        assert_eq!(krippendorff_alpha(&m).unwrap(), 1.0);
    }

    #[test]
    fn two_item_total_disagreement() {
        // 2 raters, 2 items, both disagreeing, balanced margins. The
        // coincidence matrix puts all mass off-diagonal (observed
        // disagreement 1) while the sample-based expected disagreement is
        // 8/12, so alpha = 1 - 1/(2/3) = -0.5. The pair-counting oracle
        // must agree exactly.
        let m = matrix(&[&[0, 1], &[1, 0]], 2);
        let alpha = krippendorff_alpha(&m).unwrap();
        assert!((alpha - (-0.5)).abs() < 1e-12, "alpha {alpha}");
        let oracle = alpha_pair_counting_oracle(&m).unwrap();
        assert!((alpha - oracle).abs() < 1e-12);
    }

    #[test]
    fn alpha_matches_oracle_on_mixed_matrices() {
        let m = matrix(
            &[
                &[0, 0, 1, -1],
                &[1, 1, 1, 1],
                &[0, 2, 2, 0],
                &[-1, 1, -1, 1],
                &[2, 2, -1, 2],
            ],
            3,
        );
        let alpha = krippendorff_alpha(&m).unwrap();
        let oracle = alpha_pair_counting_oracle(&m).unwrap();
        assert!((alpha - oracle).abs() < 1e-10, "{alpha} vs {oracle}");
    }

    #[test]
    fn alpha_near_zero_for_random_labels() {
        let mut rng = SeedSpec::new(31, "alpha").rng();
        let cells: Vec<Vec<Option<usize>>> = (0..200)
            .map(|_| (0..5).map(|_| Some(rng.random_range(0..4))).collect())
            .collect();
        let m = LabelMatrix::new(cells, 4).unwrap();
        let alpha = krippendorff_alpha(&m).unwrap();
        assert!(alpha.abs() <= 0.05, "alpha {alpha}");
    }

    #[test]
    fn alpha_is_invariant_to_class_permutation() {
        let m = matrix(
            &[&[0, 1, 1], &[2, 2, 0], &[1, 1, 1], &[0, -1, 2], &[2, 0, 2]],
            3,
        );
        let base = krippendorff_alpha(&m).unwrap();
        for perm in [[1, 2, 0], [2, 0, 1], [0, 2, 1], [1, 0, 2], [2, 1, 0]] {
            let permuted = krippendorff_alpha(&m.permute_classes(&perm)).unwrap();
            assert!((base - permuted).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_requires_pairable_items() {
        let m = matrix(&[&[0, -1], &[-1, 1]], 2);
        assert!(krippendorff_alpha(&m).is_err());
    }

    #[test]
    fn tv_distance_basics() {
        let a = vec![SoftLabel::new(vec![1.0, 0.0]).unwrap(), SoftLabel::new(vec![0.5, 0.5]).unwrap()];
        assert_eq!(mean_tv_distance(&a, &a).unwrap(), 0.0);
        let onehot0 = vec![SoftLabel::one_hot(0, 2); 4];
        let onehot1 = vec![SoftLabel::one_hot(1, 2); 4];
        assert_eq!(mean_tv_distance(&onehot0, &onehot1).unwrap(), 1.0);
        let y1 = vec![SoftLabel::new(vec![1.0, 0.0]).unwrap()];
        let y2 = vec![SoftLabel::new(vec![0.5, 0.5]).unwrap()];
        assert_eq!(mean_tv_distance(&y1, &y2).unwrap(), 0.5);
        assert!(mean_tv_distance(&a, &onehot0[..1].to_vec()).is_err());
    }

    #[test]
    fn tv_distance_is_a_metric_on_random_triples() {
        let mut rng = SeedSpec::new(32, "tv").rng();
        let mut random_soft = |n: usize| -> Vec<SoftLabel> {
            (0..n)
                .map(|_| {
                    let raw: Vec<f64> = (0..3).map(|_| rng.random::<f64>() + 1e-3).collect();
                    let sum: f64 = raw.iter().sum();
                    SoftLabel::new(raw.into_iter().map(|v| v / sum).collect()).unwrap()
                })
                .collect()
        };
        for _ in 0..20 {
            let a = random_soft(8);
            let b = random_soft(8);
            let c = random_soft(8);
            let ab = mean_tv_distance(&a, &b).unwrap();
            let ba = mean_tv_distance(&b, &a).unwrap();
            let ac = mean_tv_distance(&a, &c).unwrap();
            let cb = mean_tv_distance(&c, &b).unwrap();
            assert!((ab - ba).abs() < 1e-15);
            assert!(ab <= ac + cb + 1e-12, "triangle violated: {ab} > {ac} + {cb}");
            assert_eq!(mean_tv_distance(&a, &a).unwrap(), 0.0);
        }
    }

    #[test]
    fn average_precision_oracle_case() {
        // Ranked (1, 0, 1, 0): AP = (1/1 + 2/3) / 2 = 5/6.
        let scores = [0.9, 0.8, 0.7, 0.6];
        let labels = [true, false, true, false];
        let ap = aucpr(&scores, &labels).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_ranking_gives_ap_one() {
        let scores = [0.9, 0.8, 0.3, 0.1];
        let labels = [true, true, false, false];
        assert_eq!(aucpr(&scores, &labels).unwrap(), 1.0);
    }

    #[test]
    fn random_scores_give_ap_near_prevalence() {
        let mut rng = SeedSpec::new(33, "ap").rng();
        let n = 10_000usize;
        let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
        let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
        let ap = aucpr(&scores, &labels).unwrap();
        assert!((ap - 0.5).abs() <= 0.03, "ap {ap}");
    }

    #[test]
    fn ap_is_invariant_to_monotone_transforms() {
        let mut rng = SeedSpec::new(34, "ap").rng();
        let scores: Vec<f64> = (0..200).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
        let labels: Vec<bool> = (0..200).map(|_| rng.random::<bool>()).collect();
        let base = aucpr(&scores, &labels).unwrap();
        let squashed: Vec<f64> = scores.iter().map(|&s| 1.0 / (1.0 + (-3.0 * s).exp())).collect();
        let shifted: Vec<f64> = scores.iter().map(|&s| 100.0 + 0.01 * s).collect();
        assert!((aucpr(&squashed, &labels).unwrap() - base).abs() < 1e-12);
        assert!((aucpr(&shifted, &labels).unwrap() - base).abs() < 1e-12);
    }

    #[test]
    fn ap_rejects_degenerate_labels() {
        assert!(aucpr(&[0.1, 0.2], &[true, true]).is_err());
        assert!(aucpr(&[0.1, 0.2], &[false, false]).is_err());
    }

    #[test]
    fn metrics_csv_layout() {
        let rows = vec![MetricRow {
            metric: "krippendorff_alpha".into(),
            dataset_id: "demo".into(),
            value: 1.0,
            stderr: None,
            n: 10,
        }];
        let csv = metrics_to_csv(&rows);
        assert_eq!(csv, "metric,dataset_id,value,stderr,n\nkrippendorff_alpha,demo,1,,10\n");
    }
}
