//! Experiment harness: calibrated noise sweeps, class-imbalance and
//! task-difficulty trends, warm-start comparisons, matched-error-rate
//! instance-vs-random pairs, and the corrector-vs-baseline protocol.
//!
//! Every scenario runs as independent `(config, seed)` cells; paired
//! comparisons within a cell always share the underlying clean dataset and
//! test split. Report rows are stamped with the master seed and a config
//! hash, and serialize deterministically, so identical specs reproduce
//! identical CSV bytes.

use crate::data::{
    make_gaussian_task, make_splits, Dataset, FiveSplits, GaussianTaskSpec, DEFAULT_SPLIT_RATIOS,
};
use crate::error::{Error, Result};
use crate::lqm::{
    correct_labels, sample_hard_labels, select_paired_subset, train_lqm_pipeline, AuxTrainedOn,
    LqmTrainConfig, GAMMA_GRID,
};
use crate::manifest::config_hash;
use crate::metrics::{self, aucpr, krippendorff_alpha};
use crate::nnkit::{LrSchedule, MlpModel, TrainConfig, TrainingSet};
use crate::rater::{calibrate_pool, NoisePreset, RaterLabelMode, SingleLabelView};
use crate::robust::{
    train_baseline, train_baseline_from, train_bootstrap, train_coteaching, BootstrapMode,
    TrainedRun,
};
use crate::seed::SeedSpec;
use rand::seq::index::sample as index_sample;
use rand::Rng;
use std::collections::BTreeSet;
use std::fmt::Write as _;

/// The experiment families the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    NoiseSweep,
    Imbalance,
    Difficulty,
    Pretrain,
    InstanceVsRandom,
    LqmCompare,
    LqmCombine,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::NoiseSweep => "noise_sweep",
            Scenario::Imbalance => "imbalance",
            Scenario::Difficulty => "difficulty",
            Scenario::Pretrain => "pretrain",
            Scenario::InstanceVsRandom => "instance_vs_random",
            Scenario::LqmCompare => "lqm_compare",
            Scenario::LqmCombine => "lqm_combine",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "noise_sweep" => Scenario::NoiseSweep,
            "imbalance" => Scenario::Imbalance,
            "difficulty" => Scenario::Difficulty,
            "pretrain" => Scenario::Pretrain,
            "instance_vs_random" => Scenario::InstanceVsRandom,
            "lqm_compare" => Scenario::LqmCompare,
            "lqm_combine" => Scenario::LqmCombine,
            other => return Err(Error::invalid(format!("unknown scenario {other:?}"))),
        })
    }
}

/// Architecture and SGD settings for the main model trained in a cell.
#[derive(Debug, Clone)]
pub struct MainModelSpec {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
}

impl Default for MainModelSpec {
    fn default() -> Self {
        MainModelSpec {
            hidden: vec![16],
            epochs: 30,
            batch_size: 32,
            initial_lr: 0.2,
        }
    }
}

impl MainModelSpec {
    fn config(&self, seed: SeedSpec) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            initial_lr: self.initial_lr,
            schedule: LrSchedule::Cosine,
            weight_decay: 0.0,
            seed,
        }
    }
}

/// Everything a scenario needs; scenario-specific fields carry documented
/// defaults and are ignored by scenarios that do not use them.
#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub scenario: Scenario,
    pub seeds: Vec<u64>,
    pub presets: Vec<NoisePreset>,
    /// Per-class count of the base binary task.
    pub per_class: usize,
    /// Separation of the base binary task.
    pub separation: f64,
    pub dim: usize,
    pub pool_size: usize,
    pub calibration_tolerance: f64,
    pub main: MainModelSpec,
    /// Majority-class fractions for the imbalance scenario.
    pub imbalance_fractions: Vec<f64>,
    pub separation_easy: f64,
    pub separation_hard: f64,
    /// Paired-subset fraction for the corrector scenarios.
    pub paired_fraction: f64,
}

impl ExperimentSpec {
    pub fn new(scenario: Scenario, seeds: Vec<u64>) -> Self {
        ExperimentSpec {
            scenario,
            seeds,
            presets: vec![NoisePreset::Low, NoisePreset::Medium, NoisePreset::High],
            per_class: 1000,
            separation: 2.0,
            dim: 2,
            pool_size: 10,
            calibration_tolerance: 0.02,
            main: MainModelSpec::default(),
            imbalance_fractions: vec![0.5, 0.7, 0.9],
            separation_easy: 3.5,
            separation_hard: 1.2,
            paired_fraction: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::invalid("experiment needs at least one seed"));
        }
        match self.scenario {
            Scenario::Imbalance => {
                if self
                    .imbalance_fractions
                    .iter()
                    .any(|f| !(0.5..1.0).contains(f))
                {
                    return Err(Error::invalid("imbalance fractions must lie in [0.5, 1)"));
                }
            }
            Scenario::Difficulty => {
                if self.separation_easy == 0.0 || self.separation_hard == 0.0 {
                    return Err(Error::invalid(
                        "degenerate task: difficulty separations must be nonzero",
                    ));
                }
                if self.separation_easy <= self.separation_hard {
                    return Err(Error::invalid("easy separation must exceed hard separation"));
                }
            }
            Scenario::LqmCompare | Scenario::LqmCombine => {
                if !(0.0..=1.0).contains(&self.paired_fraction) || self.paired_fraction == 0.0 {
                    return Err(Error::invalid("paired fraction must be in (0, 1]"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Canonical rendering hashed into every report row.
    pub fn canonical(&self) -> String {
        let presets: Vec<&str> = self.presets.iter().map(|p| p.name()).collect();
        format!(
            "scenario={};seeds={:?};presets={:?};per_class={};separation={};dim={};pool={};tol={};hidden={:?};epochs={};batch={};lr={};fractions={:?};sep_easy={};sep_hard={};paired={}",
            self.scenario.name(),
            self.seeds,
            presets,
            self.per_class,
            self.separation,
            self.dim,
            self.pool_size,
            self.calibration_tolerance,
            self.main.hidden,
            self.main.epochs,
            self.main.batch_size,
            self.main.initial_lr,
            self.imbalance_fractions,
            self.separation_easy,
            self.separation_hard,
            self.paired_fraction
        )
    }

    pub fn config_hash(&self) -> String {
        config_hash(&self.canonical())
    }
}

/// One report row; rows serialize deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub scenario: String,
    pub master_seed: u64,
    pub config_hash: String,
    pub cell: String,
    pub metric: String,
    pub value: f64,
}

/// Render rows as `scenario,master_seed,config_hash,cell,metric,value`.
pub fn rows_to_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("scenario,master_seed,config_hash,cell,metric,value\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.scenario, r.master_seed, r.config_hash, r.cell, r.metric, r.value
        );
    }
    out
}

/// Ordinary least squares slope of y on x.
pub fn ols_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::invalid("need at least two points for a slope"));
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("slope undefined: all x values identical"));
    }
    let sxy: f64 = points
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
        .sum();
    Ok(sxy / sxx)
}

/// Flip exactly `round(rate * n)` uniformly chosen labels to uniformly
/// chosen wrong classes. This is independent flipping conditioned on the
/// flip count, so a matched pair echoes the measured error rate exactly.
pub fn flip_exact_count(
    labels: &[usize],
    num_classes: usize,
    rate: f64,
    seed: &SeedSpec,
) -> Result<Vec<usize>> {
    if num_classes < 2 {
        return Err(Error::invalid("need K >= 2 to flip"));
    }
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::invalid("flip rate must be in [0, 1]"));
    }
    let n = labels.len();
    let n_flip = ((rate * n as f64).round() as usize).min(n);
    let mut rng = seed.rng();
    let picked: BTreeSet<usize> = index_sample(&mut rng, n, n_flip).into_iter().collect();
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            if picked.contains(&i) {
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

/// Binary task with centers `separation * e_k + offset * 1`. Shifting the
/// centers off the origin keeps the Bayes geometry but removes the
/// zero-bias shortcut: an untrained rater (random origin-crossing
/// hyperplane) scores near chance instead of sometimes splitting the
/// classes by luck, so pool error rates span up to ~50% smoothly and
/// calibration can reach high targets on every seed.
pub fn offset_binary_task(dim: usize, per_class: usize, separation: f64, offset: f64) -> GaussianTaskSpec {
    let centers = (0..2)
        .map(|k| {
            let mut c = vec![offset; dim];
            c[k] += separation;
            c
        })
        .collect();
    GaussianTaskSpec {
        num_classes: 2,
        dim,
        per_class_counts: vec![per_class; 2],
        separation,
        covariance_scale: 1.0,
        centers: Some(centers),
    }
}

/// The center offset used by every binary bench task.
pub const TASK_OFFSET: f64 = 3.0;

/// Clustered fine-grained task: `clusters * per_cluster` classes, cluster
/// means far apart along the first axis, fine classes within a cluster
/// offset on their own axes. Rater mislabels concentrate among same-cluster
/// classes.
pub fn clustered_task_spec(
    clusters: usize,
    per_cluster: usize,
    per_class: usize,
    cluster_separation: f64,
    fine_separation: f64,
) -> GaussianTaskSpec {
    let num_classes = clusters * per_cluster;
    let dim = per_cluster + 2;
    let mut centers = Vec::with_capacity(num_classes);
    for cluster in 0..clusters {
        let sign = if cluster % 2 == 0 { 1.0 } else { -1.0 };
        let shift = (cluster / 2) as f64;
        for fine in 0..per_cluster {
            let mut c = vec![0.0; dim];
            c[0] = sign * cluster_separation / 2.0 * (1.0 + shift);
            c[1 + fine] = fine_separation;
            centers.push(c);
        }
    }
    GaussianTaskSpec {
        num_classes,
        dim,
        per_class_counts: vec![per_class; num_classes],
        separation: cluster_separation,
        covariance_scale: 1.0,
        centers: Some(centers),
    }
}

struct Cell {
    splits: FiveSplits,
}

fn build_task(task: &GaussianTaskSpec, master: u64, stream: &str) -> Result<Cell> {
    let seed = SeedSpec::new(master, stream);
    let data = make_gaussian_task(task, &seed.child("gen"))?;
    let splits = make_splits(&data, DEFAULT_SPLIT_RATIOS, &seed.child("split"))?;
    Ok(Cell { splits })
}

/// Train the main model on a labeled dataset, select on `valid`, score on
/// `test`.
fn fit_and_score(
    train: &Dataset,
    valid: &Dataset,
    test: &Dataset,
    main: &MainModelSpec,
    seed: SeedSpec,
) -> Result<(TrainedRun, f64)> {
    let set = TrainingSet::from_dataset(train)?;
    let run = train_baseline(&set, valid, &main.hidden, &main.config(seed))?;
    let test_acc = metrics::accuracy(&run.model, test)?;
    Ok((run, test_acc))
}

fn minority_aucpr(model: &MlpModel, test: &Dataset) -> Result<f64> {
    let mut scores = Vec::with_capacity(test.len());
    let mut labels = Vec::with_capacity(test.len());
    for ex in test.examples() {
        scores.push(model.probs(&ex.features)?[1]);
        labels.push(ex.clean_label == 1);
    }
    aucpr(&scores, &labels)
}

// ── noise sweep ─────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct NoiseSweepCell {
    pub seed: u64,
    pub preset: NoisePreset,
    pub error_rate: f64,
    pub alpha: f64,
    pub clean_test_accuracy: f64,
    pub noisy_test_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct NoiseSweepOutcome {
    pub cells: Vec<NoiseSweepCell>,
}

/// Calibrate each preset per seed, measure the resulting noise, and train
/// clean-vs-noisy baselines.
pub fn run_noise_sweep(spec: &ExperimentSpec) -> Result<NoiseSweepOutcome> {
    spec.validate()?;
    let task = offset_binary_task(spec.dim, spec.per_class, spec.separation, TASK_OFFSET);
    let mut cells = Vec::new();
    for &master in &spec.seeds {
        let cell = build_task(&task, master, "sweep")?;
        let seed = SeedSpec::new(master, "sweep");
        let (_, clean_acc) = fit_and_score(
            &cell.splits.noisy_label_train,
            &cell.splits.noisy_label_valid,
            &cell.splits.test,
            &spec.main,
            seed.child("main-clean"),
        )?;
        for &preset in &spec.presets {
            let cal = calibrate_pool(
                &cell.splits,
                preset.target_error_rate(),
                spec.calibration_tolerance,
                spec.pool_size,
                RaterLabelMode::Hard,
                &seed.child(format!("cal:{}", preset.name())),
            )?;
            let alpha = krippendorff_alpha(&cal.noisy.label_matrix())?;
            let train_view = SingleLabelView::from_noisy(
                &cal.noisy.train_view(),
                &seed.child(format!("single:{}", preset.name())),
            )?;
            let valid_view = SingleLabelView::from_noisy(
                &cal.noisy.valid_view(),
                &seed.child(format!("single-valid:{}", preset.name())),
            )?;
            let (_, noisy_acc) = fit_and_score(
                &train_view.noisy_dataset()?,
                &valid_view.noisy_dataset()?,
                &cell.splits.test,
                &spec.main,
                seed.child(format!("main-noisy:{}", preset.name())),
            )?;
            cells.push(NoiseSweepCell {
                seed: master,
                preset,
                error_rate: cal.measured_error_rate,
                alpha,
                clean_test_accuracy: clean_acc,
                noisy_test_accuracy: noisy_acc,
            });
        }
    }
    Ok(NoiseSweepOutcome { cells })
}

impl NoiseSweepOutcome {
    pub fn rows(&self, spec: &ExperimentSpec) -> Vec<ReportRow> {
        let hash = spec.config_hash();
        let mut rows = Vec::new();
        for c in &self.cells {
            let cell = format!("preset={}", c.preset.name());
            for (metric, value) in [
                ("error_rate", c.error_rate),
                ("krippendorff_alpha", c.alpha),
                ("clean_test_accuracy", c.clean_test_accuracy),
                ("noisy_test_accuracy", c.noisy_test_accuracy),
                ("accuracy_drop", c.clean_test_accuracy - c.noisy_test_accuracy),
            ] {
                rows.push(ReportRow {
                    scenario: spec.scenario.name().into(),
                    master_seed: c.seed,
                    config_hash: hash.clone(),
                    cell: cell.clone(),
                    metric: metric.into(),
                    value,
                });
            }
        }
        rows
    }
}

// ── imbalance ───────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct ImbalanceCell {
    pub seed: u64,
    pub fraction: f64,
    pub clean_aucpr: f64,
    pub noisy_aucpr: f64,
    /// Subsampled sizes of (train, valid, test); identical across fractions.
    pub sizes: (usize, usize, usize),
}

#[derive(Debug, Clone)]
pub struct ImbalanceOutcome {
    pub preset: NoisePreset,
    pub cells: Vec<ImbalanceCell>,
}

impl ImbalanceOutcome {
    /// Clean-minus-noisy AUCPR deltas by fraction for one seed.
    pub fn deltas_for_seed(&self, seed: u64) -> Vec<(f64, f64)> {
        self.cells
            .iter()
            .filter(|c| c.seed == seed)
            .map(|c| (c.fraction, c.clean_aucpr - c.noisy_aucpr))
            .collect()
    }

    pub fn rows(&self, spec: &ExperimentSpec) -> Vec<ReportRow> {
        let hash = spec.config_hash();
        let mut rows = Vec::new();
        for c in &self.cells {
            let cell = format!("preset={},fraction={}", self.preset.name(), c.fraction);
            for (metric, value) in [
                ("clean_aucpr", c.clean_aucpr),
                ("noisy_aucpr", c.noisy_aucpr),
                ("aucpr_delta", c.clean_aucpr - c.noisy_aucpr),
            ] {
                rows.push(ReportRow {
                    scenario: spec.scenario.name().into(),
                    master_seed: c.seed,
                    config_hash: hash.clone(),
                    cell: cell.clone(),
                    metric: metric.into(),
                    value,
                });
            }
        }
        rows
    }
}

/// Subsample a split to majority fraction `f` with `total` items; class 0
/// is the majority. Selection is seeded and sorted for determinism.
fn subsample_imbalanced(
    split: &Dataset,
    labels: Option<&[usize]>,
    fraction: f64,
    total: usize,
    seed: &SeedSpec,
) -> Result<(Dataset, Option<Vec<usize>>)> {
    let majority: Vec<usize> = (0..split.len())
        .filter(|&i| split.examples()[i].clean_label == 0)
        .collect();
    let minority: Vec<usize> = (0..split.len())
        .filter(|&i| split.examples()[i].clean_label == 1)
        .collect();
    let want_major = (fraction * total as f64).round() as usize;
    let want_minor = total - want_major;
    if want_major > majority.len() || want_minor > minority.len() {
        return Err(Error::invalid(format!(
            "subsampling to fraction {fraction} with total {total} exhausts a class ({} majority, {} minority available)",
            majority.len(),
            minority.len()
        )));
    }
    if want_minor == 0 {
        return Err(Error::invalid(format!(
            "fraction {fraction} empties the minority class at total {total}"
        )));
    }
    let mut rng = seed.rng();
    let mut keep: Vec<usize> = index_sample(&mut rng, majority.len(), want_major)
        .into_iter()
        .map(|i| majority[i])
        .collect();
    keep.extend(
        index_sample(&mut rng, minority.len(), want_minor)
            .into_iter()
            .map(|i| minority[i]),
    );
    keep.sort_unstable();
    let examples: Vec<crate::data::Example> =
        keep.iter().map(|&i| split.examples()[i].clone()).collect();
    let picked_labels = labels.map(|ls| keep.iter().map(|&i| ls[i]).collect());
    let data = Dataset::new(examples, split.dim(), split.num_classes())?;
    Ok((data, picked_labels))
}

/// Largest subsample total compatible with every fraction for a split.
fn imbalance_total(split: &Dataset, fractions: &[f64]) -> usize {
    let majority = split
        .examples()
        .iter()
        .filter(|e| e.clean_label == 0)
        .count();
    let minority = split.len() - majority;
    let mut total = usize::MAX;
    for &f in fractions {
        total = total
            .min((majority as f64 / f).floor() as usize)
            .min((minority as f64 / (1.0 - f)).floor() as usize);
    }
    total
}

/// Class-imbalance trend: noise is generated once on the balanced task,
/// then train/valid/test are subsampled to each majority fraction with a
/// constant total, and clean-vs-noisy AUCPR deltas are compared.
pub fn run_imbalance(spec: &ExperimentSpec) -> Result<ImbalanceOutcome> {
    spec.validate()?;
    let preset = spec.presets.first().copied().unwrap_or(NoisePreset::Medium);
    let task = offset_binary_task(spec.dim, spec.per_class, spec.separation, TASK_OFFSET);
    let mut cells = Vec::new();
    for &master in &spec.seeds {
        let cell = build_task(&task, master, "imbalance")?;
        let seed = SeedSpec::new(master, "imbalance");
        let cal = calibrate_pool(
            &cell.splits,
            preset.target_error_rate(),
            spec.calibration_tolerance,
            spec.pool_size,
            RaterLabelMode::Hard,
            &seed.child("cal"),
        )?;
        let train_view =
            SingleLabelView::from_noisy(&cal.noisy.train_view(), &seed.child("single"))?;
        let valid_view =
            SingleLabelView::from_noisy(&cal.noisy.valid_view(), &seed.child("single-valid"))?;
        let train_split = train_view.clean_dataset()?;
        let train_labels: Vec<usize> = train_view.records().iter().map(|r| r.label).collect();
        let valid_split = valid_view.clean_dataset()?;
        let valid_labels: Vec<usize> = valid_view.records().iter().map(|r| r.label).collect();

        let t_train = imbalance_total(&train_split, &spec.imbalance_fractions);
        let t_valid = imbalance_total(&valid_split, &spec.imbalance_fractions);
        let t_test = imbalance_total(&cell.splits.test, &spec.imbalance_fractions);

        for &fraction in &spec.imbalance_fractions {
            let sub_seed = seed.child(format!("subsample:{fraction}"));
            let (train_sub, train_sub_labels) = subsample_imbalanced(
                &train_split,
                Some(&train_labels),
                fraction,
                t_train,
                &sub_seed.child("train"),
            )?;
            let (valid_sub, valid_sub_labels) = subsample_imbalanced(
                &valid_split,
                Some(&valid_labels),
                fraction,
                t_valid,
                &sub_seed.child("valid"),
            )?;
            let (test_sub, _) = subsample_imbalanced(
                &cell.splits.test,
                None,
                fraction,
                t_test,
                &sub_seed.child("test"),
            )?;

            // Clean run: clean labels everywhere.
            let clean_run = fit_and_score(
                &train_sub,
                &valid_sub,
                &test_sub,
                &spec.main,
                seed.child(format!("main-clean:{fraction}")),
            )?;
            let clean_ap = minority_aucpr(&clean_run.0.model, &test_sub)?;

            // Noisy run: sampled rater labels on train and valid.
            let noisy_train = train_sub.with_labels(&train_sub_labels.expect("labels requested"))?;
            let noisy_valid = valid_sub.with_labels(&valid_sub_labels.expect("labels requested"))?;
            let noisy_run = fit_and_score(
                &noisy_train,
                &noisy_valid,
                &test_sub,
                &spec.main,
                seed.child(format!("main-noisy:{fraction}")),
            )?;
            let noisy_ap = minority_aucpr(&noisy_run.0.model, &test_sub)?;

            cells.push(ImbalanceCell {
                seed: master,
                fraction,
                clean_aucpr: clean_ap,
                noisy_aucpr: noisy_ap,
                sizes: (t_train, t_valid, t_test),
            });
        }
    }
    Ok(ImbalanceOutcome { preset, cells })
}

// ── difficulty ──────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct DifficultySeed {
    pub seed: u64,
    pub easy_clean_accuracy: f64,
    pub hard_clean_accuracy: f64,
    /// `(1 - alpha, accuracy drop)` pairs, zero-noise anchor included.
    pub easy_points: Vec<(f64, f64)>,
    pub hard_points: Vec<(f64, f64)>,
    pub easy_slope: f64,
    pub hard_slope: f64,
}

#[derive(Debug, Clone)]
pub struct DifficultyOutcome {
    pub per_seed: Vec<DifficultySeed>,
}

impl DifficultyOutcome {
    pub fn rows(&self, spec: &ExperimentSpec) -> Vec<ReportRow> {
        let hash = spec.config_hash();
        let mut rows = Vec::new();
        for s in &self.per_seed {
            for (metric, value) in [
                ("easy_clean_accuracy", s.easy_clean_accuracy),
                ("hard_clean_accuracy", s.hard_clean_accuracy),
                ("easy_slope", s.easy_slope),
                ("hard_slope", s.hard_slope),
            ] {
                rows.push(ReportRow {
                    scenario: spec.scenario.name().into(),
                    master_seed: s.seed,
                    config_hash: hash.clone(),
                    cell: "summary".into(),
                    metric: metric.into(),
                    value,
                });
            }
            for (task, points) in [("easy", &s.easy_points), ("hard", &s.hard_points)] {
                for (x, y) in points {
                    rows.push(ReportRow {
                        scenario: spec.scenario.name().into(),
                        master_seed: s.seed,
                        config_hash: hash.clone(),
                        cell: format!("task={task},one_minus_alpha={x}"),
                        metric: "accuracy_drop".into(),
                        value: *y,
                    });
                }
            }
        }
        rows
    }
}

fn difficulty_task_points(
    spec: &ExperimentSpec,
    separation: f64,
    master: u64,
    tag: &str,
) -> Result<(f64, Vec<(f64, f64)>)> {
    let task = offset_binary_task(spec.dim, spec.per_class, separation, TASK_OFFSET);
    let stream = format!("difficulty:{tag}");
    let cell = build_task(&task, master, &stream)?;
    let seed = SeedSpec::new(master, stream);
    let (_, clean_acc) = fit_and_score(
        &cell.splits.noisy_label_train,
        &cell.splits.noisy_label_valid,
        &cell.splits.test,
        &spec.main,
        seed.child("main-clean"),
    )?;
    // Zero noise anchors the fit at the origin.
    let mut points = vec![(0.0, 0.0)];
    for &preset in &spec.presets {
        let cal = calibrate_pool(
            &cell.splits,
            preset.target_error_rate(),
            spec.calibration_tolerance,
            spec.pool_size,
            RaterLabelMode::Hard,
            &seed.child(format!("cal:{}", preset.name())),
        )?;
        let alpha = krippendorff_alpha(&cal.noisy.label_matrix())?;
        let train_view = SingleLabelView::from_noisy(
            &cal.noisy.train_view(),
            &seed.child(format!("single:{}", preset.name())),
        )?;
        let valid_view = SingleLabelView::from_noisy(
            &cal.noisy.valid_view(),
            &seed.child(format!("single-valid:{}", preset.name())),
        )?;
        let (_, noisy_acc) = fit_and_score(
            &train_view.noisy_dataset()?,
            &valid_view.noisy_dataset()?,
            &cell.splits.test,
            &spec.main,
            seed.child(format!("main-noisy:{}", preset.name())),
        )?;
        points.push((1.0 - alpha, clean_acc - noisy_acc));
    }
    Ok((clean_acc, points))
}

/// Task-difficulty trend: the same noise presets on an easy and a hard
/// task, then the accuracy-drop-vs-(1 - alpha) slope per task.
pub fn run_difficulty(spec: &ExperimentSpec) -> Result<DifficultyOutcome> {
    spec.validate()?;
    let mut per_seed = Vec::new();
    for &master in &spec.seeds {
        let (easy_clean, easy_points) =
            difficulty_task_points(spec, spec.separation_easy, master, "easy")?;
        let (hard_clean, hard_points) =
            difficulty_task_points(spec, spec.separation_hard, master, "hard")?;
        per_seed.push(DifficultySeed {
            seed: master,
            easy_clean_accuracy: easy_clean,
            hard_clean_accuracy: hard_clean,
            easy_slope: ols_slope(&easy_points)?,
            hard_slope: ols_slope(&hard_points)?,
            easy_points,
            hard_points,
        });
    }
    Ok(DifficultyOutcome { per_seed })
}

// ── pretraining ─────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct PretrainCell {
    pub seed: u64,
    pub preset_name: String,
    pub error_rate: f64,
    pub cold_accuracy: f64,
    pub warm_accuracy: f64,
    pub warm_unrelated_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainSeed {
    pub seed: u64,
    pub cells: Vec<PretrainCell>,
    pub cold_slope: f64,
    pub warm_slope: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub per_seed: Vec<PretrainSeed>,
}

impl PretrainOutcome {
    pub fn rows(&self, spec: &ExperimentSpec) -> Vec<ReportRow> {
        let hash = spec.config_hash();
        let mut rows = Vec::new();
        for s in &self.per_seed {
            for c in &s.cells {
                let cell = format!("preset={}", c.preset_name);
                for (metric, value) in [
                    ("error_rate", c.error_rate),
                    ("cold_accuracy", c.cold_accuracy),
                    ("warm_accuracy", c.warm_accuracy),
                    ("warm_unrelated_accuracy", c.warm_unrelated_accuracy),
                ] {
                    rows.push(ReportRow {
                        scenario: spec.scenario.name().into(),
                        master_seed: s.seed,
                        config_hash: hash.clone(),
                        cell: cell.clone(),
                        metric: metric.into(),
                        value,
                    });
                }
            }
            for (metric, value) in [("cold_slope", s.cold_slope), ("warm_slope", s.warm_slope)] {
                rows.push(ReportRow {
                    scenario: spec.scenario.name().into(),
                    master_seed: s.seed,
                    config_hash: hash.clone(),
                    cell: "summary".into(),
                    metric: metric.into(),
                    value,
                });
            }
        }
        rows
    }
}

/// Warm-start trend. The related source task shares the target's feature
/// space and discriminative direction (slightly shifted class centers); the
/// unrelated source puts its centers on orthogonal axes. Warm runs start
/// from parameters pretrained on clean source data.
pub fn run_pretrain(spec: &ExperimentSpec) -> Result<PretrainOutcome> {
    spec.validate()?;
    let dim = spec.dim.max(4);
    let target = offset_binary_task(dim, spec.per_class, spec.separation, TASK_OFFSET);

    let related_centers = {
        let mut centers = target.resolved_centers()?;
        for c in centers.iter_mut() {
            c[2] += 0.5;
            c[3] -= 0.3;
        }
        centers
    };
    let related = GaussianTaskSpec {
        centers: Some(related_centers),
        ..target.clone()
    };
    let unrelated_centers = {
        let mut centers = vec![vec![TASK_OFFSET; dim]; 2];
        centers[0][2] += spec.separation;
        centers[1][3] += spec.separation;
        centers
    };
    let unrelated = GaussianTaskSpec {
        centers: Some(unrelated_centers),
        ..target.clone()
    };

    let mut per_seed = Vec::new();
    for &master in &spec.seeds {
        let cell = build_task(&target, master, "pretrain")?;
        let seed = SeedSpec::new(master, "pretrain");

        let pretrain_on = |task: &GaussianTaskSpec, tag: &str| -> Result<MlpModel> {
            let data = make_gaussian_task(task, &seed.child(format!("source-gen:{tag}")))?;
            let set = TrainingSet::from_dataset(&data)?;
            let mut sizes = vec![dim];
            sizes.extend_from_slice(&spec.main.hidden);
            sizes.push(2);
            let mut model =
                MlpModel::init(&sizes, &seed.child(format!("source-init:{tag}")))?;
            let cfg = TrainConfig {
                epochs: spec.main.epochs,
                batch_size: spec.main.batch_size,
                initial_lr: spec.main.initial_lr,
                schedule: LrSchedule::Cosine,
                weight_decay: 0.0,
                seed: seed.child(format!("source-train:{tag}")),
            };
            crate::nnkit::train(&mut model, &set, &cfg)?;
            Ok(model)
        };
        let warm_related = pretrain_on(&related, "related")?;
        let warm_unrelated = pretrain_on(&unrelated, "unrelated")?;

        let mut cells: Vec<PretrainCell> = Vec::new();
        let run_cell = |preset_name: &str,
                            error_rate: f64,
                            train: &Dataset,
                            valid: &Dataset,
                            cells: &mut Vec<PretrainCell>|
         -> Result<()> {
            let set = TrainingSet::from_dataset(train)?;
            let cfg = spec.main.config(seed.child(format!("main:{preset_name}")));
            let cold = train_baseline(&set, valid, &spec.main.hidden, &cfg)?;
            let warm = train_baseline_from(warm_related.clone(), &set, valid, &cfg)?;
            let warm_un = train_baseline_from(warm_unrelated.clone(), &set, valid, &cfg)?;
            cells.push(PretrainCell {
                seed: master,
                preset_name: preset_name.to_string(),
                error_rate,
                cold_accuracy: metrics::accuracy(&cold.model, &cell.splits.test)?,
                warm_accuracy: metrics::accuracy(&warm.model, &cell.splits.test)?,
                warm_unrelated_accuracy: metrics::accuracy(&warm_un.model, &cell.splits.test)?,
            });
            Ok(())
        };

        run_cell(
            "zero",
            0.0,
            &cell.splits.noisy_label_train,
            &cell.splits.noisy_label_valid,
            &mut cells,
        )?;
        for &preset in &spec.presets {
            let cal = calibrate_pool(
                &cell.splits,
                preset.target_error_rate(),
                spec.calibration_tolerance,
                spec.pool_size,
                RaterLabelMode::Hard,
                &seed.child(format!("cal:{}", preset.name())),
            )?;
            let train_view = SingleLabelView::from_noisy(
                &cal.noisy.train_view(),
                &seed.child(format!("single:{}", preset.name())),
            )?;
            let valid_view = SingleLabelView::from_noisy(
                &cal.noisy.valid_view(),
                &seed.child(format!("single-valid:{}", preset.name())),
            )?;
            run_cell(
                preset.name(),
                train_view.error_rate(),
                &train_view.noisy_dataset()?,
                &valid_view.noisy_dataset()?,
                &mut cells,
            )?;
        }

        let cold_points: Vec<(f64, f64)> =
            cells.iter().map(|c| (c.error_rate, c.cold_accuracy)).collect();
        let warm_points: Vec<(f64, f64)> =
            cells.iter().map(|c| (c.error_rate, c.warm_accuracy)).collect();
        per_seed.push(PretrainSeed {
            seed: master,
            cold_slope: ols_slope(&cold_points)?,
            warm_slope: ols_slope(&warm_points)?,
            cells,
        });
    }
    Ok(PretrainOutcome { per_seed })
}

// ── instance vs random ──────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct PairedNoiseCell {
    pub seed: u64,
    pub task: String,
    pub instance_error_rate: f64,
    pub random_error_rate: f64,
    pub instance_accuracy: f64,
    pub random_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct InstanceVsRandomOutcome {
    pub binary: Vec<PairedNoiseCell>,
    pub multiclass: Vec<PairedNoiseCell>,
}

impl InstanceVsRandomOutcome {
    pub fn rows(&self, spec: &ExperimentSpec) -> Vec<ReportRow> {
        let hash = spec.config_hash();
        let mut rows = Vec::new();
        for c in self.binary.iter().chain(&self.multiclass) {
            let cell = format!("task={}", c.task);
            for (metric, value) in [
                ("instance_error_rate", c.instance_error_rate),
                ("random_error_rate", c.random_error_rate),
                ("instance_accuracy", c.instance_accuracy),
                ("random_accuracy", c.random_accuracy),
            ] {
                rows.push(ReportRow {
                    scenario: spec.scenario.name().into(),
                    master_seed: c.seed,
                    config_hash: hash.clone(),
                    cell: cell.clone(),
                    metric: metric.into(),
                    value,
                });
            }
        }
        rows
    }
}

fn paired_noise_cell(
    spec: &ExperimentSpec,
    task: &GaussianTaskSpec,
    main: &MainModelSpec,
    master: u64,
    task_name: &str,
    preset: NoisePreset,
) -> Result<PairedNoiseCell> {
    let stream = format!("ivr:{task_name}");
    let cell = build_task(task, master, &stream)?;
    let seed = SeedSpec::new(master, stream);
    let cal = calibrate_pool(
        &cell.splits,
        preset.target_error_rate(),
        spec.calibration_tolerance,
        spec.pool_size,
        RaterLabelMode::Hard,
        &seed.child("cal"),
    )?;
    let train_view = SingleLabelView::from_noisy(&cal.noisy.train_view(), &seed.child("single"))?;
    let valid_view =
        SingleLabelView::from_noisy(&cal.noisy.valid_view(), &seed.child("single-valid"))?;
    let e_train = train_view.error_rate();
    let k = task.num_classes;
    if e_train >= (k - 1) as f64 / k as f64 {
        return Err(Error::invalid(format!(
            "error rate {e_train} at or beyond (K-1)/K; matched random flipping is degenerate"
        )));
    }

    // Matched counterpart: flip exactly the measured count at random.
    let clean_train: Vec<usize> = train_view.examples().iter().map(|e| e.clean_label).collect();
    let random_train_labels =
        flip_exact_count(&clean_train, k, e_train, &seed.child("flip-train"))?;
    let clean_valid: Vec<usize> = valid_view.examples().iter().map(|e| e.clean_label).collect();
    let random_valid_labels =
        flip_exact_count(&clean_valid, k, valid_view.error_rate(), &seed.child("flip-valid"))?;
    let random_train = train_view.clean_dataset()?.with_labels(&random_train_labels)?;
    let random_valid = valid_view.clean_dataset()?.with_labels(&random_valid_labels)?;
    let random_rate = random_train
        .examples()
        .iter()
        .zip(&clean_train)
        .filter(|(ex, &c)| ex.clean_label != c)
        .count() as f64
        / clean_train.len() as f64;

    let (_, instance_acc) = fit_and_score(
        &train_view.noisy_dataset()?,
        &valid_view.noisy_dataset()?,
        &cell.splits.test,
        main,
        seed.child("main"),
    )?;
    let (_, random_acc) = fit_and_score(
        &random_train,
        &random_valid,
        &cell.splits.test,
        main,
        seed.child("main"),
    )?;
    Ok(PairedNoiseCell {
        seed: master,
        task: task_name.to_string(),
        instance_error_rate: e_train,
        random_error_rate: random_rate,
        instance_accuracy: instance_acc,
        random_accuracy: random_acc,
    })
}

/// Instance-dependent vs matched random noise on a binary task and on a
/// clustered 20-class task.
pub fn run_instance_vs_random(spec: &ExperimentSpec) -> Result<InstanceVsRandomOutcome> {
    spec.validate()?;
    let preset = spec.presets.first().copied().unwrap_or(NoisePreset::Medium);
    let binary_task = offset_binary_task(spec.dim, spec.per_class, spec.separation, TASK_OFFSET);
    let clustered = clustered_task_spec(2, 10, (spec.per_class / 5).max(50), 12.0, 2.5);
    let multi_main = MainModelSpec {
        hidden: vec![48],
        ..spec.main.clone()
    };
    let mut binary = Vec::new();
    let mut multiclass = Vec::new();
    for &master in &spec.seeds {
        binary.push(paired_noise_cell(
            spec,
            &binary_task,
            &spec.main,
            master,
            "binary",
            preset,
        )?);
        multiclass.push(paired_noise_cell(
            spec,
            &clustered,
            &multi_main,
            master,
            "clustered20",
            preset,
        )?);
    }
    Ok(InstanceVsRandomOutcome { binary, multiclass })
}

// ── corrector comparison ────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct LqmCell {
    pub seed: u64,
    pub preset: NoisePreset,
    pub error_rate: f64,
    pub gamma: f64,
    pub hidden_width: usize,
    pub aux_trained_on: AuxTrainedOn,
    /// Argmax accuracy of the selected corrected targets against clean
    /// labels over the training corpus.
    pub corrected_target_accuracy: f64,
    pub lqm_accuracy: f64,
    pub baseline_accuracy: f64,
    /// `(algorithm, test accuracy)` for techniques stacked on the sampled
    /// corrected labels.
    pub stacked: Vec<(String, f64)>,
}

#[derive(Debug, Clone)]
pub struct LqmCompareOutcome {
    pub cells: Vec<LqmCell>,
}

impl LqmCompareOutcome {
    pub fn rows(&self, spec: &ExperimentSpec) -> Vec<ReportRow> {
        let hash = spec.config_hash();
        let mut rows = Vec::new();
        for c in &self.cells {
            let cell = format!("preset={}", c.preset.name());
            let mut metrics_list = vec![
                ("error_rate".to_string(), c.error_rate),
                ("gamma".to_string(), c.gamma),
                ("hidden_width".to_string(), c.hidden_width as f64),
                ("aux_on_paired".to_string(), f64::from(u8::from(c.aux_trained_on == AuxTrainedOn::PairedClean))),
                ("corrected_target_accuracy".to_string(), c.corrected_target_accuracy),
                ("lqm_accuracy".to_string(), c.lqm_accuracy),
                ("baseline_accuracy".to_string(), c.baseline_accuracy),
            ];
            for (name, acc) in &c.stacked {
                metrics_list.push((format!("lqm_plus_{name}_accuracy"), *acc));
            }
            for (metric, value) in metrics_list {
                rows.push(ReportRow {
                    scenario: spec.scenario.name().into(),
                    master_seed: c.seed,
                    config_hash: hash.clone(),
                    cell: cell.clone(),
                    metric,
                    value,
                });
            }
        }
        rows
    }
}

/// The corrector pipeline against the clean-injected baseline, optionally
/// stacking robust techniques on the sampled corrected labels.
pub fn run_lqm_compare(spec: &ExperimentSpec) -> Result<LqmCompareOutcome> {
    spec.validate()?;
    let stack = spec.scenario == Scenario::LqmCombine;
    let task = offset_binary_task(spec.dim, spec.per_class, spec.separation, TASK_OFFSET);
    let mut cells = Vec::new();
    for &master in &spec.seeds {
        let cell = build_task(&task, master, "lqm-compare")?;
        let seed = SeedSpec::new(master, "lqm-compare");
        for &preset in &spec.presets {
            let cal = calibrate_pool(
                &cell.splits,
                preset.target_error_rate(),
                spec.calibration_tolerance,
                spec.pool_size,
                RaterLabelMode::Hard,
                &seed.child(format!("cal:{}", preset.name())),
            )?;
            let pseed = seed.child(preset.name());
            let train_view =
                SingleLabelView::from_noisy(&cal.noisy.train_view(), &pseed.child("single"))?;
            let valid_view =
                SingleLabelView::from_noisy(&cal.noisy.valid_view(), &pseed.child("single-valid"))?;
            let valid_noisy_ds = valid_view.noisy_dataset()?;

            let paired =
                select_paired_subset(&train_view, spec.paired_fraction, &pseed.child("paired"))?;
            // The corrector trains on one part of the paired subset; the
            // held-out part's clean labels select gamma (the noisy
            // validation labels cannot: under instance-dependent noise they
            // reward whichever model mimics the raters, locking gamma at 0).
            let (paired_fit, paired_select) = paired.split(0.25, &pseed.child("gamma-holdout"))?;
            let aux_cfg = TrainConfig::new(20, 32, 0.15, pseed.child("aux-cfg"));
            let pipeline = train_lqm_pipeline(
                &train_view,
                &paired_fit,
                &paired_select,
                &[8],
                &aux_cfg,
                &LqmTrainConfig::default(),
                &pseed.child("pipeline"),
            )?;
            let (aux, lqm) = (&pipeline.aux, &pipeline.lqm);

            let select_ids = paired_select.example_ids();
            let select_clean: Vec<(usize, usize)> = train_view
                .examples()
                .iter()
                .enumerate()
                .filter(|(_, ex)| select_ids.contains(&ex.id))
                .map(|(i, ex)| (i, ex.clean_label))
                .collect();
            let mut best: Option<(f64, TrainedRun, f64)> = None;
            for &gamma in &GAMMA_GRID {
                let targets = correct_labels(
                    lqm,
                    aux,
                    train_view.examples(),
                    train_view.records(),
                    gamma,
                )?;
                let hard = sample_hard_labels(&targets, &pseed.child(format!("sample:{gamma}")));
                let train_ds = train_view.clean_dataset()?.with_labels(&hard)?;
                let set = TrainingSet::from_dataset(&train_ds)?;
                let run = train_baseline(
                    &set,
                    &valid_noisy_ds,
                    &spec.main.hidden,
                    &spec.main.config(pseed.child("main-lqm")),
                )?;
                let mut correct = 0usize;
                for &(i, clean) in &select_clean {
                    correct +=
                        usize::from(run.model.predict(&train_view.examples()[i].features)? == clean);
                }
                let select_acc = correct as f64 / select_clean.len().max(1) as f64;
                let better = best
                    .as_ref()
                    .map(|(_, _, b)| select_acc > *b)
                    .unwrap_or(true);
                if better {
                    best = Some((gamma, run, select_acc));
                }
            }
            let (gamma, lqm_run, _) = best.expect("gamma grid is non-empty");
            let lqm_acc = metrics::accuracy(&lqm_run.model, &cell.splits.test)?;
            // Corpus-level quality of the selected corrected targets.
            let final_targets = correct_labels(
                lqm,
                aux,
                train_view.examples(),
                train_view.records(),
                gamma,
            )?;
            let corrected_accuracy = final_targets
                .iter()
                .zip(train_view.examples())
                .filter(|(t, ex)| t.argmax() == ex.clean_label)
                .count() as f64
                / train_view.len() as f64;

            // Clean-injected baseline: the paired examples' labels are
            // replaced with clean labels in the baseline's training set.
            let injected = train_view.with_clean_injected(&paired.example_ids());
            let base_set = TrainingSet::from_dataset(&injected.noisy_dataset()?)?;
            let base_run = train_baseline(
                &base_set,
                &valid_noisy_ds,
                &spec.main.hidden,
                &spec.main.config(pseed.child("main-base")),
            )?;
            let base_acc = metrics::accuracy(&base_run.model, &cell.splits.test)?;

            let mut stacked = Vec::new();
            if stack {
                let targets = correct_labels(
                    lqm,
                    aux,
                    train_view.examples(),
                    train_view.records(),
                    gamma,
                )?;
                let hard = sample_hard_labels(&targets, &pseed.child(format!("sample:{gamma}")));
                let train_ds = train_view.clean_dataset()?.with_labels(&hard)?;
                let set = TrainingSet::from_dataset(&train_ds)?;
                let boot = train_bootstrap(
                    &set,
                    &valid_noisy_ds,
                    &spec.main.hidden,
                    &spec.main.config(pseed.child("main-boot")),
                    0.95,
                    BootstrapMode::Soft,
                )?;
                stacked.push((
                    "bootstrap".to_string(),
                    metrics::accuracy(&boot.model, &cell.splits.test)?,
                ));
                let steps = spec.main.epochs * (set.len() / spec.main.batch_size);
                let co = train_coteaching(
                    &set,
                    &valid_noisy_ds,
                    &spec.main.hidden,
                    &spec.main.config(pseed.child("main-co")),
                    cal.measured_error_rate,
                    steps / 10,
                )?;
                stacked.push((
                    "coteaching".to_string(),
                    metrics::accuracy(&co.chosen.model, &cell.splits.test)?,
                ));
            }

            cells.push(LqmCell {
                seed: master,
                preset,
                error_rate: cal.measured_error_rate,
                gamma,
                hidden_width: lqm.hidden_width,
                aux_trained_on: pipeline.aux_trained_on,
                corrected_target_accuracy: corrected_accuracy,
                lqm_accuracy: lqm_acc,
                baseline_accuracy: base_acc,
                stacked,
            });
        }
    }
    Ok(LqmCompareOutcome { cells })
}

/// Run any scenario and return its report rows.
pub fn run_scenario(spec: &ExperimentSpec) -> Result<Vec<ReportRow>> {
    match spec.scenario {
        Scenario::NoiseSweep => Ok(run_noise_sweep(spec)?.rows(spec)),
        Scenario::Imbalance => Ok(run_imbalance(spec)?.rows(spec)),
        Scenario::Difficulty => Ok(run_difficulty(spec)?.rows(spec)),
        Scenario::Pretrain => Ok(run_pretrain(spec)?.rows(spec)),
        Scenario::InstanceVsRandom => Ok(run_instance_vs_random(spec)?.rows(spec)),
        Scenario::LqmCompare | Scenario::LqmCombine => Ok(run_lqm_compare(spec)?.rows(spec)),
    }
}
