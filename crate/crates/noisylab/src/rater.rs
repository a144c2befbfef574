//! Rater pools: train a diverse set of imperfect classifiers on clean data
//! and use their predictions as noisy labels.
//!
//! Because rater models misclassify the genuinely ambiguous examples, the
//! noise they produce is instance-dependent, unlike random flipping. Each
//! rater's training metadata (architecture, epochs, learning rate, batch
//! size, subsample fraction, validation accuracy) doubles as its rater
//! features.
//!
//! Noise level is controlled by a strength knob (epochs, subsample size,
//! width scale together); [`calibrate_pool`] bisects that knob until the
//! pool hits a requested error rate.

use crate::data::{Dataset, Example, FiveSplits};
use crate::error::{Error, Result};
use crate::metrics;
use crate::nnkit::{self, LrSchedule, MlpModel, TrainConfig, TrainingSet};
use crate::noise::TransitionMatrix;
use crate::seed::SeedSpec;
use rand::seq::index::sample as index_sample;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

/// Hidden-layer templates indexed by `arch_id`: widths {linear, 8, 16, 32,
/// 64} at depth 1, then the same widths at depth 2.
pub const ARCH_TEMPLATES: [&[usize]; 9] = [
    &[],
    &[8],
    &[16],
    &[32],
    &[64],
    &[8, 8],
    &[16, 16],
    &[32, 32],
    &[64, 64],
];

/// How a rater turns logits into a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RaterLabelMode {
    /// Argmax of the logits (the default).
    Hard,
    /// One draw from softmax(logits) per example.
    Soft,
}

/// Training recipe for one rater model.
#[derive(Debug, Clone)]
pub struct RaterConfig {
    pub arch_id: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub schedule: LrSchedule,
    pub subsample_fraction: f64,
}

impl RaterConfig {
    fn validate(&self) -> Result<()> {
        if self.arch_id >= ARCH_TEMPLATES.len() {
            return Err(Error::invalid(format!(
                "arch_id {} outside the template list (0..{})",
                self.arch_id,
                ARCH_TEMPLATES.len()
            )));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(Error::invalid("subsample_fraction must be in (0, 1]"));
        }
        Ok(())
    }

    fn layer_sizes(&self, dim: usize, num_classes: usize) -> Vec<usize> {
        let mut sizes = vec![dim];
        sizes.extend_from_slice(ARCH_TEMPLATES[self.arch_id]);
        sizes.push(num_classes);
        sizes
    }
}

/// Metadata describing a trained rater; the feature vector the corrector
/// consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct RaterFeatures {
    pub rater_id: usize,
    pub arch_id: usize,
    pub epochs: usize,
    pub initial_lr: f64,
    pub batch_size: usize,
    pub subsample_fraction: f64,
    pub valid_accuracy: f64,
    pub confusion: Option<TransitionMatrix>,
}

impl RaterFeatures {
    /// The six numeric features in their documented order.
    pub fn scalar_features(&self) -> [f64; 6] {
        [
            self.arch_id as f64,
            self.epochs as f64,
            self.initial_lr,
            self.batch_size as f64,
            self.subsample_fraction,
            self.valid_accuracy,
        ]
    }
}

/// One noisy label attributed to one rater.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelRecord {
    pub example_id: u64,
    pub rater_id: usize,
    pub label: usize,
}

/// Examples plus their multi-rater labels. Clean labels stay on the
/// examples for evaluation only; training consumers read [`LabelRecord`]s.
#[derive(Debug, Clone)]
pub struct NoisyDataset {
    examples: Vec<Example>,
    labels: Vec<LabelRecord>,
    rater_features: Vec<RaterFeatures>,
    dim: usize,
    num_classes: usize,
    train_ids: BTreeSet<u64>,
    valid_ids: BTreeSet<u64>,
    manifest: String,
}

impl NoisyDataset {
    /// Validate label ranges, rater references, and `(example, rater)`
    /// uniqueness.
    pub fn new(
        examples: Vec<Example>,
        labels: Vec<LabelRecord>,
        rater_features: Vec<RaterFeatures>,
        dim: usize,
        num_classes: usize,
        manifest: String,
    ) -> Result<Self> {
        let ids: BTreeSet<u64> = examples.iter().map(|e| e.id).collect();
        if ids.len() != examples.len() {
            return Err(Error::invalid("duplicate example ids"));
        }
        let rater_ids: BTreeSet<usize> = rater_features.iter().map(|r| r.rater_id).collect();
        if rater_ids.len() != rater_features.len() {
            return Err(Error::invalid("duplicate rater ids"));
        }
        let mut pairs = BTreeSet::new();
        for rec in &labels {
            if rec.label >= num_classes {
                return Err(Error::invalid(format!(
                    "label {} outside [0, {num_classes})",
                    rec.label
                )));
            }
            if !ids.contains(&rec.example_id) {
                return Err(Error::invalid(format!("unknown example id {}", rec.example_id)));
            }
            if !rater_ids.contains(&rec.rater_id) {
                return Err(Error::invalid(format!(
                    "label from rater {} absent from the feature table",
                    rec.rater_id
                )));
            }
            if !pairs.insert((rec.example_id, rec.rater_id)) {
                return Err(Error::invalid(format!(
                    "duplicate (example {}, rater {}) label",
                    rec.example_id, rec.rater_id
                )));
            }
        }
        Ok(NoisyDataset {
            examples,
            labels,
            rater_features,
            dim,
            num_classes,
            train_ids: BTreeSet::new(),
            valid_ids: BTreeSet::new(),
            manifest,
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn labels(&self) -> &[LabelRecord] {
        &self.labels
    }

    pub fn rater_features(&self) -> &[RaterFeatures] {
        &self.rater_features
    }

    pub fn features_of(&self, rater_id: usize) -> Option<&RaterFeatures> {
        self.rater_features.iter().find(|r| r.rater_id == rater_id)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn manifest(&self) -> &str {
        &self.manifest
    }

    /// Ids of the noisy-label training portion (empty if not built from
    /// splits).
    pub fn train_ids(&self) -> &BTreeSet<u64> {
        &self.train_ids
    }

    pub fn valid_ids(&self) -> &BTreeSet<u64> {
        &self.valid_ids
    }

    /// Record which example ids belong to the noisy train and valid splits.
    pub fn set_split_ids(&mut self, train_ids: BTreeSet<u64>, valid_ids: BTreeSet<u64>) {
        self.train_ids = train_ids;
        self.valid_ids = valid_ids;
    }

    /// Restrict to a subset of example ids.
    pub fn subset(&self, keep: &BTreeSet<u64>) -> NoisyDataset {
        NoisyDataset {
            examples: self.examples.iter().filter(|e| keep.contains(&e.id)).cloned().collect(),
            labels: self
                .labels
                .iter()
                .filter(|l| keep.contains(&l.example_id))
                .copied()
                .collect(),
            rater_features: self.rater_features.clone(),
            dim: self.dim,
            num_classes: self.num_classes,
            train_ids: self.train_ids.intersection(keep).copied().collect(),
            valid_ids: self.valid_ids.intersection(keep).copied().collect(),
            manifest: self.manifest.clone(),
        }
    }

    /// The noisy-train portion as its own dataset.
    pub fn train_view(&self) -> NoisyDataset {
        self.subset(&self.train_ids.clone())
    }

    /// The noisy-valid portion as its own dataset.
    pub fn valid_view(&self) -> NoisyDataset {
        self.subset(&self.valid_ids.clone())
    }

    /// Per-example label lists in example order: `(example, [(rater, label)])`.
    pub fn grouped_labels(&self) -> Vec<(&Example, Vec<(usize, usize)>)> {
        let mut by_example: BTreeMap<u64, Vec<(usize, usize)>> = BTreeMap::new();
        for rec in &self.labels {
            by_example
                .entry(rec.example_id)
                .or_default()
                .push((rec.rater_id, rec.label));
        }
        self.examples
            .iter()
            .map(|ex| {
                let mut labs = by_example.remove(&ex.id).unwrap_or_default();
                labs.sort_unstable();
                (ex, labs)
            })
            .collect()
    }

    /// Draw one `(label, rater)` per example, uniformly over its raters,
    /// with an independent stream per example.
    pub fn sample_single_labels(&self, seed: &SeedSpec) -> Result<Vec<LabelRecord>> {
        let grouped = self.grouped_labels();
        grouped
            .into_iter()
            .map(|(ex, labs)| {
                let (label, rater_id) = crate::data::sample_single_noisy_label(
                    &labs,
                    &seed.child(format!("ex:{}", ex.id)),
                )?;
                Ok(LabelRecord {
                    example_id: ex.id,
                    rater_id,
                    label,
                })
            })
            .collect()
    }

    /// `(noisy, clean)` pairs over all label records.
    pub fn label_pairs(&self) -> Vec<(usize, usize)> {
        let clean: BTreeMap<u64, usize> =
            self.examples.iter().map(|e| (e.id, e.clean_label)).collect();
        self.labels
            .iter()
            .map(|rec| (rec.label, clean[&rec.example_id]))
            .collect()
    }

    /// Items-by-raters label matrix for agreement metrics.
    pub fn label_matrix(&self) -> metrics::LabelMatrix {
        let rater_index: BTreeMap<usize, usize> = self
            .rater_features
            .iter()
            .enumerate()
            .map(|(i, r)| (r.rater_id, i))
            .collect();
        let example_index: BTreeMap<u64, usize> = self
            .examples
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id, i))
            .collect();
        let mut cells = vec![vec![None; rater_index.len()]; self.examples.len()];
        for rec in &self.labels {
            cells[example_index[&rec.example_id]][rater_index[&rec.rater_id]] = Some(rec.label);
        }
        metrics::LabelMatrix::new(cells, self.num_classes)
            .expect("validated labels form a valid matrix")
    }

    /// Noisy-labels CSV: `example_id,rater_id,label`.
    pub fn labels_to_csv(&self) -> String {
        let mut out = String::from("example_id,rater_id,label\n");
        for rec in &self.labels {
            let _ = writeln!(out, "{},{},{}", rec.example_id, rec.rater_id, rec.label);
        }
        out
    }

    /// Rater-features CSV:
    /// `rater_id,arch_id,epochs,initial_lr,batch_size,subsample_fraction,valid_accuracy[,confusion...]`.
    pub fn rater_features_to_csv(&self) -> String {
        let mut out = String::from(
            "rater_id,arch_id,epochs,initial_lr,batch_size,subsample_fraction,valid_accuracy\n",
        );
        for r in &self.rater_features {
            let _ = write!(
                out,
                "{},{},{},{},{},{},{}",
                r.rater_id,
                r.arch_id,
                r.epochs,
                r.initial_lr,
                r.batch_size,
                r.subsample_fraction,
                r.valid_accuracy
            );
            if let Some(confusion) = &r.confusion {
                for v in confusion.flat() {
                    let _ = write!(out, ",{v}");
                }
            }
            out.push('\n');
        }
        out
    }
}

/// One sampled `(x, y, r)` per example: the single-noisy-label view of a
/// [`NoisyDataset`], emulating one randomly assigned rater per item.
/// `records[i]` belongs to `examples[i]`.
#[derive(Debug, Clone)]
pub struct SingleLabelView {
    examples: Vec<Example>,
    records: Vec<LabelRecord>,
    rater_features: Vec<RaterFeatures>,
    dim: usize,
    num_classes: usize,
}

impl SingleLabelView {
    pub fn from_noisy(noisy: &NoisyDataset, seed: &SeedSpec) -> Result<Self> {
        let records = noisy.sample_single_labels(seed)?;
        Ok(SingleLabelView {
            examples: noisy.examples().to_vec(),
            records,
            rater_features: noisy.rater_features().to_vec(),
            dim: noisy.dim(),
            num_classes: noisy.num_classes(),
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn records(&self) -> &[LabelRecord] {
        &self.records
    }

    pub fn rater_features(&self) -> &[RaterFeatures] {
        &self.rater_features
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

    /// Fraction of sampled labels that disagree with the clean labels.
    pub fn error_rate(&self) -> f64 {
        if self.examples.is_empty() {
            return 0.0;
        }
        self.examples
            .iter()
            .zip(&self.records)
            .filter(|(ex, rec)| ex.clean_label != rec.label)
            .count() as f64
            / self.examples.len() as f64
    }

    /// The examples relabeled with their sampled noisy labels.
    pub fn noisy_dataset(&self) -> Result<Dataset> {
        let labels: Vec<usize> = self.records.iter().map(|r| r.label).collect();
        Dataset::new(self.examples.clone(), self.dim, self.num_classes)?.with_labels(&labels)
    }

    /// The examples with their clean labels.
    pub fn clean_dataset(&self) -> Result<Dataset> {
        Dataset::new(self.examples.clone(), self.dim, self.num_classes)
    }

    /// Replace the sampled labels of the given examples with clean labels
    /// (the clean-injected baseline protocol).
    pub fn with_clean_injected(&self, ids: &BTreeSet<u64>) -> SingleLabelView {
        let records = self
            .examples
            .iter()
            .zip(&self.records)
            .map(|(ex, rec)| {
                if ids.contains(&ex.id) {
                    LabelRecord {
                        example_id: rec.example_id,
                        rater_id: rec.rater_id,
                        label: ex.clean_label,
                    }
                } else {
                    *rec
                }
            })
            .collect();
        SingleLabelView {
            examples: self.examples.clone(),
            records,
            rater_features: self.rater_features.clone(),
            dim: self.dim,
            num_classes: self.num_classes,
        }
    }

    /// Swap in a different label per example (e.g. a matched random-noise
    /// counterpart). Labels align with `examples()`.
    pub fn with_labels(&self, labels: &[usize]) -> Result<SingleLabelView> {
        if labels.len() != self.examples.len() {
            return Err(Error::invalid("label count does not match view size"));
        }
        let records = self
            .records
            .iter()
            .zip(labels)
            .map(|(rec, &label)| LabelRecord {
                example_id: rec.example_id,
                rater_id: rec.rater_id,
                label,
            })
            .collect();
        Ok(SingleLabelView {
            examples: self.examples.clone(),
            records,
            rater_features: self.rater_features.clone(),
            dim: self.dim,
            num_classes: self.num_classes,
        })
    }
}

/// Parse the noisy-labels CSV layout.
pub fn labels_from_csv(text: &str, path: &Path) -> Result<Vec<LabelRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == "example_id,rater_id,label" => {}
        _ => {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: 1,
                detail: "expected header example_id,rater_id,label".into(),
            })
        }
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let parse_err = |detail: String| Error::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            detail,
        };
        if fields.len() != 3 {
            return Err(parse_err(format!("expected 3 fields, got {}", fields.len())));
        }
        out.push(LabelRecord {
            example_id: fields[0]
                .parse()
                .map_err(|_| parse_err(format!("bad example_id {:?}", fields[0])))?,
            rater_id: fields[1]
                .parse()
                .map_err(|_| parse_err(format!("bad rater_id {:?}", fields[1])))?,
            label: fields[2]
                .parse()
                .map_err(|_| parse_err(format!("bad label {:?}", fields[2])))?,
        });
    }
    Ok(out)
}

/// Train one rater on a seeded subsample of the clean training split and
/// score it on the clean validation split.
pub fn train_rater(
    clean_train: &Dataset,
    clean_valid: &Dataset,
    cfg: &RaterConfig,
    rater_id: usize,
    seed: &SeedSpec,
) -> Result<(MlpModel, RaterFeatures)> {
    cfg.validate()?;
    if clean_train.is_empty() || clean_valid.is_empty() {
        return Err(Error::invalid("rater training needs non-empty clean splits"));
    }
    let n = clean_train.len();
    let take = ((cfg.subsample_fraction * n as f64).round() as usize).clamp(1, n);
    let mut rng = seed.child("subsample").rng();
    let mut picked: Vec<usize> = index_sample(&mut rng, n, take).into_iter().collect();
    picked.sort_unstable();
    let subsample: Vec<Example> = picked
        .into_iter()
        .map(|i| clean_train.examples()[i].clone())
        .collect();
    let subsample = Dataset::new(subsample, clean_train.dim(), clean_train.num_classes())?;

    let sizes = cfg.layer_sizes(clean_train.dim(), clean_train.num_classes());
    let mut model = MlpModel::init(&sizes, &seed.child("init"))?;
    let set = TrainingSet::from_dataset(&subsample)?;
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size.min(subsample.len()),
        initial_lr: cfg.initial_lr,
        schedule: cfg.schedule,
        weight_decay: 0.0,
        seed: seed.child("train"),
    };
    nnkit::train(&mut model, &set, &train_cfg).map_err(|e| match e {
        Error::Diverged { step, detail } => Error::Diverged {
            step,
            detail: format!("rater {rater_id} ({cfg:?}): {detail}"),
        },
        other => other,
    })?;
    let valid_accuracy = metrics::accuracy(&model, clean_valid)?;
    let features = RaterFeatures {
        rater_id,
        arch_id: cfg.arch_id,
        epochs: cfg.epochs,
        initial_lr: cfg.initial_lr,
        batch_size: cfg.batch_size,
        subsample_fraction: cfg.subsample_fraction,
        valid_accuracy,
        confusion: None,
    };
    Ok((model, features))
}

/// Label a set of examples with one rater model.
pub fn rater_label(
    model: &MlpModel,
    examples: &[Example],
    mode: RaterLabelMode,
    seed: &SeedSpec,
) -> Result<Vec<usize>> {
    examples
        .iter()
        .map(|ex| {
            let logits = model.forward(&ex.features)?;
            Ok(match mode {
                RaterLabelMode::Hard => crate::data::argmax(&logits),
                RaterLabelMode::Soft => {
                    let probs = nnkit::softmax(&logits);
                    crate::data::SoftLabel::new(probs)?
                        .sample(&seed.child(format!("ex:{}", ex.id)))
                }
            })
        })
        .collect()
}

/// Run every rater in the pool over the noisy splits; each example receives
/// one label per rater.
pub fn generate_noisy_dataset(
    pool: &[(MlpModel, RaterFeatures)],
    splits: &FiveSplits,
    mode: RaterLabelMode,
    seed: &SeedSpec,
) -> Result<NoisyDataset> {
    if pool.is_empty() {
        return Err(Error::invalid("rater pool is empty"));
    }
    let mut examples: Vec<Example> = splits.noisy_label_train.examples().to_vec();
    examples.extend_from_slice(splits.noisy_label_valid.examples());
    let dim = splits.noisy_label_train.dim();
    let num_classes = splits.noisy_label_train.num_classes();
    let mut labels = Vec::with_capacity(examples.len() * pool.len());
    for (model, features) in pool {
        let rater_seed = seed.child(format!("rater:{}", features.rater_id));
        let rater_labels = rater_label(model, &examples, mode, &rater_seed)?;
        for (ex, label) in examples.iter().zip(rater_labels) {
            labels.push(LabelRecord {
                example_id: ex.id,
                rater_id: features.rater_id,
                label,
            });
        }
    }
    let mut manifest = String::new();
    let _ = writeln!(manifest, "mode = \"{mode:?}\"");
    let _ = writeln!(manifest, "master_seed = {}", seed.master_seed);
    let _ = writeln!(manifest, "stream_id = \"{}\"", seed.stream_id);
    let _ = writeln!(manifest, "num_raters = {}", pool.len());
    for (_, f) in pool {
        let _ = writeln!(
            manifest,
            "# rater {}: arch {}, epochs {}, lr {}, batch {}, subsample {}",
            f.rater_id, f.arch_id, f.epochs, f.initial_lr, f.batch_size, f.subsample_fraction
        );
    }
    let mut noisy = NoisyDataset::new(
        examples,
        labels,
        pool.iter().map(|(_, f)| f.clone()).collect(),
        dim,
        num_classes,
        manifest,
    )?;
    noisy.train_ids = splits.noisy_label_train.ids().collect();
    noisy.valid_ids = splits.noisy_label_valid.ids().collect();
    Ok(noisy)
}

/// Requested noise levels with their default target rater error rates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoisePreset {
    Low,
    Medium,
    High,
}

impl NoisePreset {
    pub fn target_error_rate(self) -> f64 {
        match self {
            NoisePreset::Low => 0.10,
            NoisePreset::Medium => 0.25,
            NoisePreset::High => 0.40,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NoisePreset::Low => "low",
            NoisePreset::Medium => "medium",
            NoisePreset::High => "high",
        }
    }
}

/// A calibrated pool: the configs that hit the target, the trained raters,
/// and the noisy dataset they produced.
#[derive(Debug)]
pub struct CalibratedPool {
    pub configs: Vec<RaterConfig>,
    pub pool: Vec<(MlpModel, RaterFeatures)>,
    pub noisy: NoisyDataset,
    pub measured_error_rate: f64,
    pub strength: f64,
}

/// Pool configs at a given strength in `[0, 1]`: stronger means more
/// epochs, a larger subsample, and a larger learning rate. The learning
/// rate scales with strength so the weak end varies smoothly (at one or two
/// SGD steps the step size, not the step count, is the knob), which keeps
/// the error rate a near-continuous function of strength for calibration.
/// Architectures and per-rater epoch jitter keep the pool diverse.
pub fn pool_configs_at_strength(strength: f64, pool_size: usize) -> Vec<RaterConfig> {
    const MAX_EPOCHS: f64 = 40.0;
    const ARCH_CYCLE: [usize; 3] = [1, 2, 3];
    const EPOCH_JITTER: [f64; 5] = [0.6, 0.8, 1.0, 1.3, 1.6];
    let s = strength.clamp(0.0, 1.0);
    (0..pool_size)
        .map(|i| {
            let jitter = EPOCH_JITTER[i % EPOCH_JITTER.len()];
            let epochs = ((MAX_EPOCHS * s * jitter).round() as usize).max(1);
            RaterConfig {
                arch_id: ARCH_CYCLE[i % ARCH_CYCLE.len()],
                epochs,
                batch_size: 16,
                initial_lr: 0.15 * (0.05 + 0.95 * s.powf(1.5)),
                schedule: LrSchedule::Cosine,
                subsample_fraction: (0.02 + 0.98 * s).clamp(0.02, 1.0),
            }
        })
        .collect()
}

/// Train a pool from explicit configs; rater `i` owns the seed stream
/// `rater:{i}` and draws its own training subsample.
pub fn train_pool(
    configs: &[RaterConfig],
    splits: &FiveSplits,
    seed: &SeedSpec,
) -> Result<Vec<(MlpModel, RaterFeatures)>> {
    configs
        .iter()
        .enumerate()
        .map(|(i, cfg)| {
            train_rater(
                &splits.clean_label_train,
                &splits.clean_label_valid,
                cfg,
                i,
                &seed.child(format!("rater:{i}")),
            )
        })
        .collect()
}

/// Train a pool whose raters all share one pool-level subsample of the
/// clean training split (each config's `subsample_fraction` states the
/// shared fraction). Sharing the data correlates the raters' mistakes the
/// way raters trained on one common split correlate: the pool consensus
/// inherits the shared sample's finite-sample bias, so its label noise is
/// systematic rather than averaging out across raters.
pub fn train_pool_shared(
    configs: &[RaterConfig],
    splits: &FiveSplits,
    shared_fraction: f64,
    seed: &SeedSpec,
) -> Result<Vec<(MlpModel, RaterFeatures)>> {
    if !(shared_fraction > 0.0 && shared_fraction <= 1.0) {
        return Err(Error::invalid("shared fraction must be in (0, 1]"));
    }
    let clean_train = &splits.clean_label_train;
    let n = clean_train.len();
    if n == 0 {
        return Err(Error::invalid("clean training split is empty"));
    }
    let take = ((shared_fraction * n as f64).round() as usize).clamp(1, n);
    let mut rng = seed.child("pool-subsample").rng();
    let mut picked: Vec<usize> = index_sample(&mut rng, n, take).into_iter().collect();
    picked.sort_unstable();
    let shared: Vec<Example> = picked
        .into_iter()
        .map(|i| clean_train.examples()[i].clone())
        .collect();
    let shared_train = Dataset::new(shared, clean_train.dim(), clean_train.num_classes())?;
    configs
        .iter()
        .enumerate()
        .map(|(i, cfg)| {
            let mut rater_cfg = cfg.clone();
            // The shared subsample is the whole training world of the rater.
            rater_cfg.subsample_fraction = 1.0;
            let (model, mut features) = train_rater(
                &shared_train,
                &splits.clean_label_valid,
                &rater_cfg,
                i,
                &seed.child(format!("rater:{i}")),
            )?;
            features.subsample_fraction = shared_fraction;
            Ok((model, features))
        })
        .collect()
}

/// Bisect the pool strength until the rater error rate lands within
/// `tolerance` of `target_error_rate`. Returns the best pool found; errors
/// if none lands inside the tolerance.
pub fn calibrate_pool(
    splits: &FiveSplits,
    target_error_rate: f64,
    tolerance: f64,
    pool_size: usize,
    mode: RaterLabelMode,
    seed: &SeedSpec,
) -> Result<CalibratedPool> {
    if !(0.0..1.0).contains(&target_error_rate) {
        return Err(Error::invalid("target error rate must be in [0, 1)"));
    }
    let mut probe = |strength: f64,
                     stream: String,
                     best: &mut Option<CalibratedPool>|
     -> Result<f64> {
        let configs = pool_configs_at_strength(strength, pool_size);
        let cal_seed = seed.child(stream);
        let pool = train_pool(&configs, splits, &cal_seed)?;
        let noisy = generate_noisy_dataset(&pool, splits, mode, &cal_seed.child("label"))?;
        let measured = metrics::rater_error_rate(&noisy)?;
        let closer = best
            .as_ref()
            .map(|b| {
                (measured - target_error_rate).abs()
                    < (b.measured_error_rate - target_error_rate).abs()
            })
            .unwrap_or(true);
        if closer {
            *best = Some(CalibratedPool {
                configs,
                pool,
                noisy,
                measured_error_rate: measured,
                strength,
            });
        }
        Ok(measured)
    };

    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    let mut best: Option<CalibratedPool> = None;
    for iter in 0..12 {
        let strength = 0.5 * (lo + hi);
        let measured = probe(strength, format!("cal:{iter}"), &mut best)?;
        // Error rate decreases with strength.
        if measured > target_error_rate {
            lo = strength;
        } else {
            hi = strength;
        }
    }
    // The error-vs-strength curve is noisy (per-pool training luck is a
    // point or two); walk locally from the best probe, stepping toward the
    // target, redrawing a fresh pool each time.
    for refine in 0..10 {
        let (base_strength, base_error) = {
            let b = best.as_ref().expect("bisection ran");
            if (b.measured_error_rate - target_error_rate).abs() <= tolerance {
                break;
            }
            (b.strength, b.measured_error_rate)
        };
        // More error than requested means the pool is too weak.
        let direction = if base_error > target_error_rate { 1.0 } else { -1.0 };
        let step = (base_strength * 0.10).max(0.002) * (1.0 + 0.5 * (refine % 3) as f64);
        let strength = (base_strength + direction * step).clamp(0.0, 1.0);
        probe(strength, format!("refine:{refine}"), &mut best)?;
    }
    let best = best.expect("at least one calibration iteration ran");
    if (best.measured_error_rate - target_error_rate).abs() > tolerance {
        return Err(Error::invalid(format!(
            "calibration missed: target {target_error_rate}, best {}",
            best.measured_error_rate
        )));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_gaussian_task, make_splits, GaussianTaskSpec, DEFAULT_SPLIT_RATIOS};

    fn task_splits(separation: f64, per_class: usize, master: u64) -> FiveSplits {
        let spec = GaussianTaskSpec::balanced(2, 2, per_class, separation);
        let data = make_gaussian_task(&spec, &SeedSpec::new(master, "gen")).unwrap();
        make_splits(&data, DEFAULT_SPLIT_RATIOS, &SeedSpec::new(master, "split")).unwrap()
    }

    #[test]
    fn strong_rater_on_easy_task_is_accurate() {
        let splits = task_splits(10.0, 500, 21);
        let cfg = RaterConfig {
            arch_id: 2,
            epochs: 30,
            batch_size: 16,
            initial_lr: 0.15,
            schedule: LrSchedule::Cosine,
            subsample_fraction: 1.0,
        };
        let (_, features) =
            train_rater(&splits.clean_label_train, &splits.clean_label_valid, &cfg, 0, &SeedSpec::new(21, "rater"))
                .unwrap();
        assert!(
            features.valid_accuracy >= 0.95,
            "valid accuracy {}",
            features.valid_accuracy
        );
    }

    #[test]
    fn weak_rater_on_hard_task_is_near_chance() {
        // Separation 0: classes are identical, accuracy hovers near 1/K.
        let splits = task_splits(0.0, 500, 22);
        let cfg = RaterConfig {
            arch_id: 1,
            epochs: 1,
            batch_size: 16,
            initial_lr: 0.05,
            schedule: LrSchedule::Cosine,
            subsample_fraction: 0.05,
        };
        let (_, features) =
            train_rater(&splits.clean_label_train, &splits.clean_label_valid, &cfg, 0, &SeedSpec::new(22, "rater"))
                .unwrap();
        assert!(
            (features.valid_accuracy - 0.5).abs() <= 0.10,
            "valid accuracy {} not within 10 points of chance",
            features.valid_accuracy
        );
    }

    #[test]
    fn rater_training_is_deterministic() {
        let splits = task_splits(3.0, 200, 23);
        let cfg = RaterConfig {
            arch_id: 1,
            epochs: 5,
            batch_size: 16,
            initial_lr: 0.1,
            schedule: LrSchedule::Cosine,
            subsample_fraction: 0.8,
        };
        let seed = SeedSpec::new(23, "rater");
        let (m1, f1) =
            train_rater(&splits.clean_label_train, &splits.clean_label_valid, &cfg, 0, &seed).unwrap();
        let (m2, f2) =
            train_rater(&splits.clean_label_train, &splits.clean_label_valid, &cfg, 0, &seed).unwrap();
        assert_eq!(f1, f2);
        assert_eq!(m1.params_flat(), m2.params_flat());
    }

    #[test]
    fn hard_labels_take_the_argmax() {
        let splits = task_splits(3.0, 50, 24);
        let cfg = RaterConfig {
            arch_id: 0,
            epochs: 2,
            batch_size: 8,
            initial_lr: 0.1,
            schedule: LrSchedule::Constant,
            subsample_fraction: 1.0,
        };
        let (model, _) =
            train_rater(&splits.clean_label_train, &splits.clean_label_valid, &cfg, 0, &SeedSpec::new(24, "rater"))
                .unwrap();
        let examples = splits.noisy_label_train.examples();
        let labels = rater_label(&model, examples, RaterLabelMode::Hard, &SeedSpec::new(24, "label")).unwrap();
        for (ex, lab) in examples.iter().zip(&labels) {
            assert_eq!(*lab, model.predict(&ex.features).unwrap());
        }
    }

    #[test]
    fn soft_labels_follow_the_softmax() {
        // A zeroed linear model emits equal logits; soft labels are a fair coin.
        let mut model = MlpModel::init(&[2, 2], &SeedSpec::new(25, "init")).unwrap();
        let zeros = model.params_flat().iter().map(|_| 0.0).collect::<Vec<f64>>();
        model.set_params_flat(&zeros).unwrap();
        let n = 100_000usize;
        let examples: Vec<Example> = (0..n)
            .map(|i| Example {
                id: i as u64,
                features: vec![0.3, -0.7],
                clean_label: 0,
            })
            .collect();
        let labels =
            rater_label(&model, &examples, RaterLabelMode::Soft, &SeedSpec::new(25, "label")).unwrap();
        let ones = labels.iter().filter(|&&l| l == 1).count() as f64 / n as f64;
        let sigma = (0.25f64 / n as f64).sqrt();
        assert!((ones - 0.5).abs() <= 3.0 * sigma, "frequency {ones}");
    }

    #[test]
    fn tie_break_goes_to_the_lowest_index() {
        assert_eq!(crate::data::argmax(&[0.1, 2.3, -1.0]), 1);
        assert_eq!(crate::data::argmax(&[1.0, 1.0, 1.0]), 0);
    }

    #[test]
    fn pool_of_ten_raters_labels_everything() {
        let splits = task_splits(4.0, 250, 26);
        let n_noisy = splits.noisy_label_train.len() + splits.noisy_label_valid.len();
        let configs = pool_configs_at_strength(0.8, 10);
        let pool = train_pool(&configs, &splits, &SeedSpec::new(26, "pool")).unwrap();
        let noisy =
            generate_noisy_dataset(&pool, &splits, RaterLabelMode::Hard, &SeedSpec::new(26, "label")).unwrap();
        assert_eq!(noisy.labels().len(), 10 * n_noisy);
        assert_eq!(noisy.train_ids().len(), splits.noisy_label_train.len());
        for (_, labs) in noisy.grouped_labels() {
            assert_eq!(labs.len(), 10);
        }
    }

    #[test]
    fn perfect_raters_give_zero_error_rate() {
        let splits = task_splits(12.0, 400, 27);
        let configs = vec![
            RaterConfig {
                arch_id: 2,
                epochs: 40,
                batch_size: 16,
                initial_lr: 0.15,
                schedule: LrSchedule::Cosine,
                subsample_fraction: 1.0,
            };
            3
        ];
        let pool = train_pool(&configs, &splits, &SeedSpec::new(27, "pool")).unwrap();
        let noisy =
            generate_noisy_dataset(&pool, &splits, RaterLabelMode::Hard, &SeedSpec::new(27, "label")).unwrap();
        let rate = metrics::rater_error_rate(&noisy).unwrap();
        assert!(rate <= 0.005, "error rate {rate}");
    }

    #[test]
    fn heterogeneous_pool_spans_error_rates() {
        // Epochs from 1 to 50 on a medium task: per-rater error rates spread
        // by at least 20 points.
        let splits = task_splits(2.5, 400, 28);
        let epochs = [1usize, 3, 8, 20, 50];
        let configs: Vec<RaterConfig> = epochs
            .iter()
            .map(|&e| RaterConfig {
                arch_id: 2,
                epochs: e,
                batch_size: 16,
                initial_lr: 0.05,
                schedule: LrSchedule::Cosine,
                subsample_fraction: 0.25,
            })
            .collect();
        let pool = train_pool(&configs, &splits, &SeedSpec::new(28, "pool")).unwrap();
        let noisy =
            generate_noisy_dataset(&pool, &splits, RaterLabelMode::Hard, &SeedSpec::new(28, "label")).unwrap();
        let clean: BTreeMap<u64, usize> = noisy.examples().iter().map(|e| (e.id, e.clean_label)).collect();
        let mut rates = Vec::new();
        for rid in 0..epochs.len() {
            let (errs, total): (usize, usize) = noisy
                .labels()
                .iter()
                .filter(|l| l.rater_id == rid)
                .fold((0, 0), |(e, t), rec| {
                    (e + usize::from(rec.label != clean[&rec.example_id]), t + 1)
                });
            rates.push(errs as f64 / total as f64);
        }
        let span = rates.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - rates.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(span >= 0.20, "error-rate span {span} from {rates:?}");
    }

    #[test]
    fn labels_csv_round_trip() {
        let records = vec![
            LabelRecord { example_id: 0, rater_id: 0, label: 1 },
            LabelRecord { example_id: 0, rater_id: 1, label: 0 },
            LabelRecord { example_id: 3, rater_id: 0, label: 1 },
        ];
        let mut csv = String::from("example_id,rater_id,label\n");
        for r in &records {
            csv.push_str(&format!("{},{},{}\n", r.example_id, r.rater_id, r.label));
        }
        assert_eq!(labels_from_csv(&csv, Path::new("labels.csv")).unwrap(), records);
    }

    #[test]
    fn empty_pool_is_rejected() {
        let splits = task_splits(3.0, 50, 29);
        assert!(
            generate_noisy_dataset(&[], &splits, RaterLabelMode::Hard, &SeedSpec::new(29, "label")).is_err()
        );
    }
}
