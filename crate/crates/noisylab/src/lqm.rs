//! Label Quality Model: a learned corrector approximating `P(y* | x, r, y)`.
//!
//! The corrector is a one-hidden-layer MLP trained on the paired subset
//! (records holding both a noisy and a clean label). Its input concatenates
//! the logits of an auxiliary classifier (standing in for `x`), the rater's
//! standardized scalar features, the rater's empirical confusion matrix, and
//! the one-hot noisy label. At inference the corrector runs over the whole
//! corpus — clean labels outside the paired subset are never read — and its
//! output is blended with the noisy label: `y~ = gamma * LQM + (1 - gamma)
//! * y`, optionally followed by sampling a hard label from `y~`.

use crate::data::{Dataset, Example, SoftLabel};
use crate::error::{Error, Result};
use crate::nnkit::{self, MlpModel, TrainConfig, TrainTarget, TrainingSet};
use crate::noise::{estimate_confusion, TransitionMatrix};
use crate::rater::{LabelRecord, RaterFeatures, SingleLabelView};
use crate::seed::SeedSpec;
use rand::seq::index::sample as index_sample;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

/// Candidate hidden widths for the corrector.
pub const LQM_WIDTHS: [usize; 3] = [8, 16, 32];

/// The gamma grid searched on the noisy validation split.
pub const GAMMA_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

/// One record of the paired subset: input features, the sampled noisy label
/// with its rater, and the clean label.
#[derive(Debug, Clone)]
pub struct PairedRecord {
    pub example_id: u64,
    pub features: Vec<f64>,
    pub noisy_label: usize,
    pub rater_id: usize,
    pub clean_label: usize,
}

/// The M records holding both labels; the only place corrector training may
/// read clean labels from.
#[derive(Debug, Clone)]
pub struct PairedSubset {
    records: Vec<PairedRecord>,
    dim: usize,
    num_classes: usize,
}

impl PairedSubset {
    pub fn new(records: Vec<PairedRecord>, dim: usize, num_classes: usize) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::invalid("paired subset must hold at least one record"));
        }
        for r in &records {
            if r.features.len() != dim {
                return Err(Error::invalid("paired record dimension mismatch"));
            }
            if r.noisy_label >= num_classes || r.clean_label >= num_classes {
                return Err(Error::invalid("paired record label outside [0, K)"));
            }
        }
        Ok(PairedSubset {
            records,
            dim,
            num_classes,
        })
    }

    pub fn records(&self) -> &[PairedRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Ids of the examples contributing paired records.
    pub fn example_ids(&self) -> BTreeSet<u64> {
        self.records.iter().map(|r| r.example_id).collect()
    }

    /// The paired records as a clean-labeled dataset (the paired training
    /// option for the auxiliary classifier).
    pub fn clean_dataset(&self) -> Result<Dataset> {
        let examples = self
            .records
            .iter()
            .map(|r| Example {
                id: r.example_id,
                features: r.features.clone(),
                clean_label: r.clean_label,
            })
            .collect();
        Dataset::new(examples, self.dim, self.num_classes)
    }

    /// Seeded split into `(fit, held)` parts; `held` gets
    /// `round(holdout_fraction * M)` records, at least 1 on each side.
    pub fn split(&self, holdout_fraction: f64, seed: &SeedSpec) -> Result<(PairedSubset, PairedSubset)> {
        if self.records.len() < 2 {
            return Err(Error::invalid("need at least two paired records to split"));
        }
        let m = self.records.len();
        let holdout = ((holdout_fraction * m as f64).round() as usize).clamp(1, m - 1);
        let mut rng = seed.rng();
        let held: BTreeSet<usize> = index_sample(&mut rng, m, holdout).into_iter().collect();
        let (mut fit, mut held_records) = (Vec::new(), Vec::new());
        for (i, rec) in self.records.iter().enumerate() {
            if held.contains(&i) {
                held_records.push(rec.clone());
            } else {
                fit.push(rec.clone());
            }
        }
        Ok((
            PairedSubset::new(fit, self.dim, self.num_classes)?,
            PairedSubset::new(held_records, self.dim, self.num_classes)?,
        ))
    }

    /// Fraction of records whose clean label matches a model's prediction.
    pub fn clean_accuracy_of(&self, model: &MlpModel) -> Result<f64> {
        let mut correct = 0usize;
        for rec in &self.records {
            correct += usize::from(model.predict(&rec.features)? == rec.clean_label);
        }
        Ok(correct as f64 / self.records.len() as f64)
    }
}

/// Seeded uniform sample of `round(fraction * N)` examples from the
/// single-label view; each contributes its sampled noisy label, its rater,
/// and its retained clean label.
pub fn select_paired_subset(
    view: &SingleLabelView,
    fraction: f64,
    seed: &SeedSpec,
) -> Result<PairedSubset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid("paired fraction must be in (0, 1]"));
    }
    let n = view.len();
    let m = (fraction * n as f64).round() as usize;
    if m == 0 {
        return Err(Error::invalid(format!(
            "fraction {fraction} of {n} examples yields zero paired records"
        )));
    }
    let mut rng = seed.rng();
    let mut picked: Vec<usize> = index_sample(&mut rng, n, m.min(n)).into_iter().collect();
    picked.sort_unstable();
    let records = picked
        .into_iter()
        .map(|i| {
            let ex = &view.examples()[i];
            let rec = &view.records()[i];
            PairedRecord {
                example_id: ex.id,
                features: ex.features.clone(),
                noisy_label: rec.label,
                rater_id: rec.rater_id,
                clean_label: ex.clean_label,
            }
        })
        .collect();
    PairedSubset::new(records, view.dim(), view.num_classes())
}

/// Which dataset the auxiliary classifier ended up trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuxTrainedOn {
    FullNoisy,
    PairedClean,
}

/// The selected auxiliary classifier plus the selection evidence.
#[derive(Debug)]
pub struct AuxiliaryChoice {
    pub model: MlpModel,
    pub trained_on: AuxTrainedOn,
    /// Clean-label accuracy of each candidate on the selection holdout.
    pub full_select_accuracy: f64,
    pub paired_select_accuracy: f64,
    /// Agreement with the sampled noisy validation labels (diagnostic; not
    /// the selection metric — under instance-dependent noise it rewards
    /// mimicking the raters).
    pub full_noisy_valid_accuracy: f64,
    pub paired_noisy_valid_accuracy: f64,
}

fn accuracy_against_records(
    model: &MlpModel,
    examples: &[Example],
    records: &[LabelRecord],
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::invalid("empty evaluation set"));
    }
    let mut correct = 0usize;
    for (ex, rec) in examples.iter().zip(records) {
        if model.predict(&ex.features)? == rec.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Train the auxiliary classifier both ways — on the full noisy set and on
/// the paired subset with clean labels — and keep the better one.
///
/// Selection compares clean-label accuracy on a seeded holdout of the
/// paired subset (the clean data the protocol grants). Agreement with the
/// noisy validation labels is reported as a diagnostic but deliberately not
/// used to select: with instance-dependent noise it favors whichever model
/// mimics the raters, which at high noise is exactly the wrong choice.
/// Exact ties keep the full-set model; a winning paired candidate is
/// retrained on the whole paired subset.
pub fn train_auxiliary(
    full: &SingleLabelView,
    paired: &PairedSubset,
    valid: &SingleLabelView,
    hidden: &[usize],
    cfg: &TrainConfig,
    seed: &SeedSpec,
) -> Result<AuxiliaryChoice> {
    if full.is_empty() || paired.is_empty() {
        return Err(Error::invalid("auxiliary training needs non-empty candidates"));
    }
    let mut sizes = vec![full.dim()];
    sizes.extend_from_slice(hidden);
    sizes.push(full.num_classes());

    let full_set = TrainingSet::from_dataset(&full.noisy_dataset()?)?;
    let mut full_model = MlpModel::init(&sizes, &seed.child("init"))?;
    let mut full_cfg = cfg.clone();
    full_cfg.seed = seed.child("train-full");
    nnkit::train(&mut full_model, &full_set, &full_cfg)?;

    let fit_paired = |records: &PairedSubset, tag: &str| -> Result<MlpModel> {
        let set = TrainingSet::from_dataset(&records.clean_dataset()?)?;
        let mut model = MlpModel::init(&sizes, &seed.child("init"))?;
        let mut paired_cfg = cfg.clone();
        paired_cfg.seed = seed.child(tag);
        paired_cfg.batch_size = paired_cfg.batch_size.min(records.len());
        nnkit::train(&mut model, &set, &paired_cfg)?;
        Ok(model)
    };

    let (fit, select) = if paired.len() >= 2 {
        paired.split(0.25, &seed.child("select"))?
    } else {
        (paired.clone(), paired.clone())
    };
    let paired_candidate = fit_paired(&fit, "train-paired")?;
    let full_select = select.clean_accuracy_of(&full_model)?;
    let paired_select = select.clean_accuracy_of(&paired_candidate)?;

    let full_valid = accuracy_against_records(&full_model, valid.examples(), valid.records())?;
    let paired_valid =
        accuracy_against_records(&paired_candidate, valid.examples(), valid.records())?;

    let (model, trained_on) = if paired_select > full_select {
        (fit_paired(paired, "train-paired-final")?, AuxTrainedOn::PairedClean)
    } else {
        (full_model, AuxTrainedOn::FullNoisy)
    };
    Ok(AuxiliaryChoice {
        model,
        trained_on,
        full_select_accuracy: full_select,
        paired_select_accuracy: paired_select,
        full_noisy_valid_accuracy: full_valid,
        paired_noisy_valid_accuracy: paired_valid,
    })
}

/// Encoder from `(aux logits, rater, noisy label)` to the corrector input,
/// carrying the standardization constants and per-rater confusion features
/// fitted on the paired subset.
///
/// Layout, in order: aux logits (K), the six z-scored scalar rater features
/// of [`RaterFeatures::scalar_features`], the row-major rater confusion
/// (K^2), the one-hot noisy label (K).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RaterEncoder {
    num_classes: usize,
    feature_means: Vec<f64>,
    feature_stds: Vec<f64>,
    scalar_by_rater: BTreeMap<usize, Vec<f64>>,
    confusion_by_rater: BTreeMap<usize, Vec<f64>>,
    pool_confusion: Vec<f64>,
}

impl RaterEncoder {
    /// Fit standardization over the paired records (each record contributes
    /// its rater's scalars) and estimate per-rater confusion matrices from
    /// the paired `(clean, noisy)` pairs. Raters with no paired records get
    /// the pool-average confusion.
    pub fn fit(
        rater_features: &[RaterFeatures],
        paired: &PairedSubset,
        num_classes: usize,
    ) -> Result<Self> {
        if rater_features.is_empty() {
            return Err(Error::invalid("no rater features to encode"));
        }
        let scalar_by_rater: BTreeMap<usize, Vec<f64>> = rater_features
            .iter()
            .map(|r| (r.rater_id, r.scalar_features().to_vec()))
            .collect();
        let n_features = 6usize;

        let mut means = vec![0.0; n_features];
        for rec in paired.records() {
            let scalars = scalar_by_rater
                .get(&rec.rater_id)
                .ok_or_else(|| Error::invalid(format!("rater {} missing features", rec.rater_id)))?;
            for (m, v) in means.iter_mut().zip(scalars) {
                *m += v;
            }
        }
        let m_count = paired.len() as f64;
        for m in &mut means {
            *m /= m_count;
        }
        let mut stds = vec![0.0; n_features];
        for rec in paired.records() {
            let scalars = &scalar_by_rater[&rec.rater_id];
            for (s, (v, m)) in stds.iter_mut().zip(scalars.iter().zip(&means)) {
                *s += (v - m) * (v - m);
            }
        }
        for (s, m) in stds.iter_mut().zip(&means) {
            *s = (*s / m_count).sqrt();
            // Constant features pick up ~1e-16 of rounding in the mean;
            // treat them as zero-variance rather than dividing by crumbs.
            if *s <= 1e-12 * (1.0 + m.abs()) {
                *s = 0.0;
            }
        }

        let all_pairs: Vec<(usize, usize)> = paired
            .records()
            .iter()
            .map(|r| (r.clean_label, r.noisy_label))
            .collect();
        let (pool_confusion, _) = estimate_confusion(&all_pairs, num_classes)?;
        let mut confusion_by_rater = BTreeMap::new();
        for features in rater_features {
            let pairs: Vec<(usize, usize)> = paired
                .records()
                .iter()
                .filter(|r| r.rater_id == features.rater_id)
                .map(|r| (r.clean_label, r.noisy_label))
                .collect();
            let confusion = if pairs.is_empty() {
                pool_confusion.clone()
            } else {
                estimate_confusion(&pairs, num_classes)?.0
            };
            confusion_by_rater.insert(features.rater_id, confusion.flat());
        }
        Ok(RaterEncoder {
            num_classes,
            feature_means: means,
            feature_stds: stds,
            scalar_by_rater,
            confusion_by_rater,
            pool_confusion: pool_confusion.flat(),
        })
    }

    pub fn input_dim(&self) -> usize {
        let k = self.num_classes;
        k + self.feature_means.len() + k * k + k
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// The confusion matrix used for a rater (estimated or pool-average).
    pub fn confusion_of(&self, rater_id: usize) -> Result<TransitionMatrix> {
        let flat = self
            .confusion_by_rater
            .get(&rater_id)
            .unwrap_or(&self.pool_confusion);
        let k = self.num_classes;
        let rows = flat.chunks(k).map(|c| c.to_vec()).collect();
        TransitionMatrix::new(rows)
    }

    /// Build the corrector input for one record.
    pub fn encode(&self, aux_logits: &[f64], rater_id: usize, noisy_label: usize) -> Result<Vec<f64>> {
        let k = self.num_classes;
        if aux_logits.len() != k {
            return Err(Error::invalid("auxiliary logits have the wrong class count"));
        }
        if noisy_label >= k {
            return Err(Error::invalid("noisy label outside [0, K)"));
        }
        let scalars = self
            .scalar_by_rater
            .get(&rater_id)
            .ok_or_else(|| Error::invalid(format!("unknown rater {rater_id}")))?;
        let mut out = Vec::with_capacity(self.input_dim());
        out.extend_from_slice(aux_logits);
        for ((v, m), s) in scalars.iter().zip(&self.feature_means).zip(&self.feature_stds) {
            out.push(if *s > 0.0 { (v - m) / s } else { 0.0 });
        }
        out.extend_from_slice(
            self.confusion_by_rater
                .get(&rater_id)
                .unwrap_or(&self.pool_confusion),
        );
        let mut one_hot = vec![0.0; k];
        one_hot[noisy_label] = 1.0;
        out.extend_from_slice(&one_hot);
        Ok(out)
    }
}

/// The trained corrector.
#[derive(Debug, Clone)]
pub struct LqmModel {
    pub encoder: RaterEncoder,
    pub model: MlpModel,
    pub hidden_width: usize,
}

impl LqmModel {
    /// The raw corrector distribution for one record.
    pub fn predict(
        &self,
        aux: &MlpModel,
        features: &[f64],
        rater_id: usize,
        noisy_label: usize,
    ) -> Result<SoftLabel> {
        let logits = aux.forward(features)?;
        let input = self.encoder.encode(&logits, rater_id, noisy_label)?;
        SoftLabel::new(self.model.probs(&input)?)
    }
}

/// Training knobs for the corrector.
#[derive(Debug, Clone)]
pub struct LqmTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    /// Paired records held out for the width search.
    pub holdout_fraction: f64,
    /// Below this many records the width search is skipped and the smallest
    /// width is used.
    pub min_records_for_search: usize,
}

impl Default for LqmTrainConfig {
    fn default() -> Self {
        LqmTrainConfig {
            epochs: 80,
            batch_size: 16,
            initial_lr: 0.1,
            holdout_fraction: 0.2,
            min_records_for_search: 20,
        }
    }
}

fn encode_paired(
    paired: &PairedSubset,
    aux: &MlpModel,
    encoder: &RaterEncoder,
) -> Result<(Vec<Vec<f64>>, Vec<TrainTarget>)> {
    let mut inputs = Vec::with_capacity(paired.len());
    let mut targets = Vec::with_capacity(paired.len());
    for rec in paired.records() {
        let logits = aux.forward(&rec.features)?;
        inputs.push(encoder.encode(&logits, rec.rater_id, rec.noisy_label)?);
        targets.push(TrainTarget::Hard(rec.clean_label));
    }
    Ok((inputs, targets))
}

fn fit_width(
    inputs: &[Vec<f64>],
    targets: &[TrainTarget],
    width: usize,
    num_classes: usize,
    cfg: &LqmTrainConfig,
    seed: &SeedSpec,
) -> Result<MlpModel> {
    let set = TrainingSet::new(inputs.to_vec(), targets.to_vec(), num_classes)?;
    let sizes = [inputs[0].len(), width, num_classes];
    let mut model = MlpModel::init(&sizes, &seed.child("init"))?;
    let train_cfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size.min(inputs.len()),
        initial_lr: cfg.initial_lr,
        schedule: nnkit::LrSchedule::Cosine,
        weight_decay: 0.0,
        seed: seed.child("train"),
    };
    nnkit::train(&mut model, &set, &train_cfg)?;
    Ok(model)
}

/// Train the corrector on the paired subset against the clean labels. The
/// hidden width is searched over [`LQM_WIDTHS`] on a seeded holdout of the
/// paired records (skipped below `min_records_for_search`, falling back to
/// the smallest width); the winning width is then retrained on the full
/// subset.
pub fn train_lqm(
    paired: &PairedSubset,
    aux: &MlpModel,
    rater_features: &[RaterFeatures],
    cfg: &LqmTrainConfig,
    seed: &SeedSpec,
) -> Result<LqmModel> {
    let encoder = RaterEncoder::fit(rater_features, paired, paired.num_classes())?;
    let (inputs, targets) = encode_paired(paired, aux, &encoder)?;
    let m = inputs.len();

    let width = if m < cfg.min_records_for_search {
        LQM_WIDTHS[0]
    } else {
        let holdout = ((cfg.holdout_fraction * m as f64).round() as usize).clamp(1, m - 1);
        let mut rng = seed.child("holdout").rng();
        let held: BTreeSet<usize> = index_sample(&mut rng, m, holdout).into_iter().collect();
        let (mut fit_in, mut fit_t, mut held_in, mut held_t) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (i, (input, target)) in inputs.iter().zip(&targets).enumerate() {
            if held.contains(&i) {
                held_in.push(input.clone());
                held_t.push(target.clone());
            } else {
                fit_in.push(input.clone());
                fit_t.push(target.clone());
            }
        }
        let mut best = (LQM_WIDTHS[0], f64::NEG_INFINITY);
        for &width in &LQM_WIDTHS {
            let model = fit_width(
                &fit_in,
                &fit_t,
                width,
                paired.num_classes(),
                cfg,
                &seed.child(format!("width:{width}")),
            )?;
            let mut correct = 0usize;
            for (x, t) in held_in.iter().zip(&held_t) {
                let predicted = model.predict(x)?;
                let target = match t {
                    TrainTarget::Hard(c) => *c,
                    TrainTarget::Soft(sl) => sl.argmax(),
                };
                correct += usize::from(predicted == target);
            }
            let acc = correct as f64 / held_in.len() as f64;
            if acc > best.1 {
                best = (width, acc);
            }
        }
        best.0
    };

    let model = fit_width(
        &inputs,
        &targets,
        width,
        paired.num_classes(),
        cfg,
        &seed.child("final"),
    )?;
    Ok(LqmModel {
        encoder,
        model,
        hidden_width: width,
    })
}

/// A fully assembled corrector pipeline: the selected auxiliary classifier
/// and the corrector trained on top of it.
#[derive(Debug)]
pub struct LqmPipeline {
    pub aux: MlpModel,
    pub aux_trained_on: AuxTrainedOn,
    pub lqm: LqmModel,
    /// Corrected-argmax accuracy of each candidate on the selection
    /// records.
    pub full_correction_accuracy: f64,
    pub paired_correction_accuracy: f64,
}

/// Train the corrector end to end, choosing the auxiliary classifier by
/// correction quality: both aux candidates (full-noisy-trained and
/// paired-clean-trained) get their own corrector fit on `paired_fit`, and
/// the pipeline whose corrected targets match more clean labels on
/// `paired_select` wins. Ties keep the full-set candidate. Selecting on the
/// aux's own accuracy is not enough — a consensus-mimicking aux can score
/// well while encoding the systematic rater mistakes the corrector is
/// supposed to undo.
pub fn train_lqm_pipeline(
    full: &SingleLabelView,
    paired_fit: &PairedSubset,
    paired_select: &PairedSubset,
    hidden: &[usize],
    aux_cfg: &TrainConfig,
    lqm_cfg: &LqmTrainConfig,
    seed: &SeedSpec,
) -> Result<LqmPipeline> {
    if full.is_empty() || paired_fit.is_empty() || paired_select.is_empty() {
        return Err(Error::invalid("pipeline training needs non-empty inputs"));
    }
    let mut sizes = vec![full.dim()];
    sizes.extend_from_slice(hidden);
    sizes.push(full.num_classes());

    let full_set = TrainingSet::from_dataset(&full.noisy_dataset()?)?;
    let mut aux_full = MlpModel::init(&sizes, &seed.child("init"))?;
    let mut full_cfg = aux_cfg.clone();
    full_cfg.seed = seed.child("train-full");
    nnkit::train(&mut aux_full, &full_set, &full_cfg)?;

    let paired_set = TrainingSet::from_dataset(&paired_fit.clean_dataset()?)?;
    let mut aux_paired = MlpModel::init(&sizes, &seed.child("init"))?;
    let mut paired_cfg = aux_cfg.clone();
    paired_cfg.seed = seed.child("train-paired");
    paired_cfg.batch_size = paired_cfg.batch_size.min(paired_fit.len());
    nnkit::train(&mut aux_paired, &paired_set, &paired_cfg)?;

    let score = |aux: &MlpModel, tag: &str| -> Result<(LqmModel, f64)> {
        let lqm = train_lqm(
            paired_fit,
            aux,
            full.rater_features(),
            lqm_cfg,
            &seed.child(format!("lqm:{tag}")),
        )?;
        let acc = lqm_argmax_accuracy(&lqm, aux, paired_select.records())?;
        Ok((lqm, acc))
    };
    let (lqm_full, acc_full) = score(&aux_full, "full")?;
    let (lqm_paired, acc_paired) = score(&aux_paired, "paired")?;

    let (aux, lqm, trained_on) = if acc_paired > acc_full {
        (aux_paired, lqm_paired, AuxTrainedOn::PairedClean)
    } else {
        (aux_full, lqm_full, AuxTrainedOn::FullNoisy)
    };
    Ok(LqmPipeline {
        aux,
        aux_trained_on: trained_on,
        lqm,
        full_correction_accuracy: acc_full,
        paired_correction_accuracy: acc_paired,
    })
}

/// How corrected targets are consumed downstream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetMode {
    /// Train on the blended distribution directly.
    Soft,
    /// Sample one hard label per record from the blend.
    SampledHard,
}

/// Blend weight and target mode for label correction.
#[derive(Debug, Clone, Copy)]
pub struct CorrectionConfig {
    pub gamma: f64,
    pub target_mode: TargetMode,
}

impl CorrectionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid("gamma must be in [0, 1]"));
        }
        Ok(())
    }
}

/// Corrected targets `y~ = gamma * LQM(x, r, y) + (1 - gamma) * y` for each
/// `(example, record)` pair. Records align with examples by position.
pub fn correct_labels(
    lqm: &LqmModel,
    aux: &MlpModel,
    examples: &[Example],
    records: &[LabelRecord],
    gamma: f64,
) -> Result<Vec<SoftLabel>> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid("gamma must be in [0, 1]"));
    }
    if examples.len() != records.len() {
        return Err(Error::invalid("examples and label records differ in length"));
    }
    let k = lqm.encoder.num_classes();
    examples
        .iter()
        .zip(records)
        .map(|(ex, rec)| {
            if ex.id != rec.example_id {
                return Err(Error::invalid(format!(
                    "record for example {} paired with example {}",
                    rec.example_id, ex.id
                )));
            }
            let corrected = lqm.predict(aux, &ex.features, rec.rater_id, rec.label)?;
            let one_hot = SoftLabel::one_hot(rec.label, k);
            Ok(corrected.blend(&one_hot, gamma))
        })
        .collect()
}

/// One categorical draw from a corrected target.
pub fn sample_hard_label(y_tilde: &SoftLabel, seed: &SeedSpec) -> usize {
    y_tilde.sample(seed)
}

/// Draw one hard label per corrected target, one stream per record.
pub fn sample_hard_labels(targets: &[SoftLabel], seed: &SeedSpec) -> Vec<usize> {
    targets
        .iter()
        .enumerate()
        .map(|(i, t)| t.sample(&seed.child(format!("rec:{i}"))))
        .collect()
}

/// Corrected-targets CSV: `example_id,prob_0..prob_{K-1}`.
pub fn targets_to_csv(example_ids: &[u64], targets: &[SoftLabel]) -> Result<String> {
    if example_ids.len() != targets.len() {
        return Err(Error::invalid("ids and targets differ in length"));
    }
    let k = targets.first().map(|t| t.num_classes()).unwrap_or(0);
    let mut out = String::from("example_id");
    for j in 0..k {
        let _ = write!(out, ",prob_{j}");
    }
    out.push('\n');
    for (id, t) in example_ids.iter().zip(targets) {
        let _ = write!(out, "{id}");
        for p in t.probs() {
            let _ = write!(out, ",{p}");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Summary of an LQM fit, recorded in run manifests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LqmFitSummary {
    pub hidden_width: usize,
    pub aux_trained_on: AuxTrainedOn,
    pub gamma: f64,
    pub paired_records: usize,
}

/// Accuracy of the corrector's argmax against clean labels on a record set.
pub fn lqm_argmax_accuracy(lqm: &LqmModel, aux: &MlpModel, records: &[PairedRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::invalid("no records to score"));
    }
    let mut correct = 0usize;
    for rec in records {
        let out = lqm.predict(aux, &rec.features, rec.rater_id, rec.noisy_label)?;
        correct += usize::from(out.argmax() == rec.clean_label);
    }
    Ok(correct as f64 / records.len() as f64)
}

/// Accuracy of noisy labels themselves against clean labels.
pub fn noisy_label_accuracy(records: &[PairedRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    records
        .iter()
        .filter(|r| r.noisy_label == r.clean_label)
        .count() as f64
        / records.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_gaussian_task, make_splits, GaussianTaskSpec, DEFAULT_SPLIT_RATIOS};
    use crate::noise::flip_class_conditional;
    use crate::rater::{
        generate_noisy_dataset, pool_configs_at_strength, train_pool, NoisyDataset, RaterLabelMode,
    };

    fn toy_view(master: u64, n_per_class: usize) -> (NoisyDataset, SingleLabelView) {
        let spec = GaussianTaskSpec::balanced(2, 2, n_per_class, 2.0);
        let data = make_gaussian_task(&spec, &SeedSpec::new(master, "gen")).unwrap();
        let splits =
            make_splits(&data, DEFAULT_SPLIT_RATIOS, &SeedSpec::new(master, "split")).unwrap();
        let pool =
            train_pool(&pool_configs_at_strength(0.35, 5), &splits, &SeedSpec::new(master, "pool"))
                .unwrap();
        let noisy = generate_noisy_dataset(
            &pool,
            &splits,
            RaterLabelMode::Hard,
            &SeedSpec::new(master, "label"),
        )
        .unwrap();
        let train = noisy.train_view();
        let view = SingleLabelView::from_noisy(&train, &SeedSpec::new(master, "single")).unwrap();
        (noisy, view)
    }

    #[test]
    fn paired_fraction_sets_subset_size() {
        let (_, view) = toy_view(41, 500);
        assert_eq!(view.len(), 500);
        let paired = select_paired_subset(&view, 0.1, &SeedSpec::new(41, "paired")).unwrap();
        assert_eq!(paired.len(), 50);
        let all = select_paired_subset(&view, 1.0, &SeedSpec::new(41, "paired")).unwrap();
        assert_eq!(all.len(), 500);
    }

    #[test]
    fn paired_selection_is_deterministic() {
        let (_, view) = toy_view(42, 200);
        let seed = SeedSpec::new(42, "paired");
        let a = select_paired_subset(&view, 0.2, &seed).unwrap();
        let b = select_paired_subset(&view, 0.2, &seed).unwrap();
        let ids_a: Vec<u64> = a.records().iter().map(|r| r.example_id).collect();
        let ids_b: Vec<u64> = b.records().iter().map(|r| r.example_id).collect();
        assert_eq!(ids_a, ids_b);
    }

    #[test]
    fn zero_sized_fraction_is_rejected() {
        let (_, view) = toy_view(43, 100);
        assert!(select_paired_subset(&view, 0.0001, &SeedSpec::new(43, "paired")).is_err());
    }

    #[test]
    fn encoder_standardizes_over_the_paired_subset() {
        let (_, view) = toy_view(44, 300);
        let paired = select_paired_subset(&view, 0.3, &SeedSpec::new(44, "paired")).unwrap();
        let encoder = RaterEncoder::fit(view.rater_features(), &paired, 2).unwrap();
        let mut sums = vec![0.0; 6];
        for rec in paired.records() {
            let encoded = encoder.encode(&[0.0, 0.0], rec.rater_id, rec.noisy_label).unwrap();
            for (s, v) in sums.iter_mut().zip(&encoded[2..8]) {
                *s += v;
            }
        }
        for s in &sums {
            assert!(
                (s / paired.len() as f64).abs() < 1e-9,
                "standardized feature mean {s}"
            );
        }
    }

    #[test]
    fn encoder_layout_dimension() {
        let (_, view) = toy_view(45, 120);
        let paired = select_paired_subset(&view, 0.5, &SeedSpec::new(45, "paired")).unwrap();
        let encoder = RaterEncoder::fit(view.rater_features(), &paired, 2).unwrap();
        // aux logits (K) + 6 scalars + confusion (K^2) + one-hot (K).
        assert_eq!(encoder.input_dim(), 2 + 6 + 4 + 2);
        let v = encoder.encode(&[0.3, -0.3], 0, 1).unwrap();
        assert_eq!(v.len(), encoder.input_dim());
        assert_eq!(&v[v.len() - 2..], &[0.0, 1.0]);
    }

    #[test]
    fn identical_rater_features_encode_identically() {
        let (_, view) = toy_view(46, 120);
        let paired = select_paired_subset(&view, 0.5, &SeedSpec::new(46, "paired")).unwrap();
        let mut features = view.rater_features().to_vec();
        let mut cloned = features[0].clone();
        cloned.rater_id = 99;
        features.push(cloned);
        let encoder = RaterEncoder::fit(&features, &paired, 2).unwrap();
        // Rater 99 has no paired records so its confusion block falls back
        // to the pool average; the scalar block must match rater 0 exactly.
        let a = encoder.encode(&[0.1, 0.2], features[0].rater_id, 1).unwrap();
        let b = encoder.encode(&[0.1, 0.2], 99, 1).unwrap();
        assert_eq!(&a[2..8], &b[2..8]);
    }

    #[test]
    fn gamma_blend_formula() {
        let lqm_out = SoftLabel::new(vec![0.8, 0.2]).unwrap();
        let y = SoftLabel::one_hot(1, 2);
        let half = lqm_out.blend(&y, 0.5);
        assert_eq!(half.probs(), &[0.4, 0.6]);
        assert_eq!(lqm_out.blend(&y, 0.0).probs(), y.probs());
        assert_eq!(lqm_out.blend(&y, 1.0).probs(), lqm_out.probs());
    }

    #[test]
    fn gamma_continuity_bound() {
        use rand::Rng;
        let mut rng = SeedSpec::new(47, "gamma").rng();
        for _ in 0..200 {
            let raw: Vec<f64> = (0..3).map(|_| rng.random::<f64>() + 1e-6).collect();
            let sum: f64 = raw.iter().sum();
            let lqm_out = SoftLabel::new(raw.into_iter().map(|v| v / sum).collect()).unwrap();
            let y = SoftLabel::one_hot(rng.random_range(0..3), 3);
            let g1: f64 = rng.random();
            let g2: f64 = rng.random();
            let t1 = lqm_out.blend(&y, g1);
            let t2 = lqm_out.blend(&y, g2);
            let l1: f64 = t1
                .probs()
                .iter()
                .zip(t2.probs())
                .map(|(a, b)| (a - b).abs())
                .sum();
            assert!(l1 <= 2.0 * (g1 - g2).abs() + 1e-12);
            let sum1: f64 = t1.probs().iter().sum();
            assert!((sum1 - 1.0).abs() < 1e-9, "blend left the simplex");
        }
    }

    #[test]
    fn sampled_hard_labels_follow_the_distribution() {
        let t = SoftLabel::new(vec![0.25, 0.75]).unwrap();
        assert_eq!(
            sample_hard_label(&SoftLabel::one_hot(0, 2), &SeedSpec::new(48, "s")),
            0
        );
        let n = 100_000;
        let targets = vec![t; n];
        let draws = sample_hard_labels(&targets, &SeedSpec::new(48, "draws"));
        let ones = draws.iter().filter(|&&l| l == 1).count() as f64 / n as f64;
        let sigma = (0.75f64 * 0.25 / n as f64).sqrt();
        assert!((ones - 0.75).abs() <= 3.0 * sigma);
        assert_eq!(
            sample_hard_labels(&targets[..100], &SeedSpec::new(48, "draws")),
            sample_hard_labels(&targets[..100], &SeedSpec::new(48, "draws"))
        );
    }

    #[test]
    fn lqm_copies_labels_from_perfect_raters() {
        // Every rater labels with the clean label: the corrector learns to
        // trust y, and its argmax matches y on held-out records.
        let (_, view) = toy_view(49, 400);
        let clean_labels: Vec<usize> = view.examples().iter().map(|e| e.clean_label).collect();
        let perfect = view.with_labels(&clean_labels).unwrap();
        let paired = select_paired_subset(&perfect, 0.5, &SeedSpec::new(49, "paired")).unwrap();
        let aux_cfg = TrainConfig::new(20, 16, 0.1, SeedSpec::new(49, "auxcfg"));
        let aux = train_auxiliary(&perfect, &paired, &perfect, &[8], &aux_cfg, &SeedSpec::new(49, "aux"))
            .unwrap();
        let lqm = train_lqm(
            &paired,
            &aux.model,
            perfect.rater_features(),
            &LqmTrainConfig::default(),
            &SeedSpec::new(49, "lqm"),
        )
        .unwrap();
        assert!(LQM_WIDTHS.contains(&lqm.hidden_width));
        let paired_ids = paired.example_ids();
        let mut agree = 0usize;
        let mut held = 0usize;
        for (ex, rec) in perfect.examples().iter().zip(perfect.records()) {
            if paired_ids.contains(&ex.id) {
                continue;
            }
            held += 1;
            let out = lqm.predict(&aux.model, &ex.features, rec.rater_id, rec.label).unwrap();
            agree += usize::from(out.argmax() == rec.label);
        }
        let rate = agree as f64 / held as f64;
        assert!(rate >= 0.99, "corrector copies perfect labels at rate {rate}");
    }

    #[test]
    fn lqm_beats_noisy_labels_under_known_confusions() {
        // Labels are drawn from known per-rater confusions, independent of
        // x; with the confusion exposed as a feature, the corrector must
        // beat the raw noisy labels by at least 5 points.
        let spec = GaussianTaskSpec::balanced(2, 2, 2500, 2.0);
        let data = make_gaussian_task(&spec, &SeedSpec::new(50, "gen")).unwrap();
        let splits = make_splits(&data, DEFAULT_SPLIT_RATIOS, &SeedSpec::new(50, "split")).unwrap();
        let pool =
            train_pool(&pool_configs_at_strength(0.5, 2), &splits, &SeedSpec::new(50, "pool")).unwrap();
        let noisy =
            generate_noisy_dataset(&pool, &splits, RaterLabelMode::Hard, &SeedSpec::new(50, "label"))
                .unwrap();
        let train = noisy.train_view();
        let view = SingleLabelView::from_noisy(&train, &SeedSpec::new(50, "single")).unwrap();

        let confusions = [
            TransitionMatrix::new(vec![vec![0.55, 0.45], vec![0.95, 0.05]]).unwrap(),
            TransitionMatrix::new(vec![vec![0.95, 0.05], vec![0.45, 0.55]]).unwrap(),
        ];
        let mut labels = vec![0usize; view.len()];
        for (i, (ex, rec)) in view.examples().iter().zip(view.records()).enumerate() {
            let flipped = flip_class_conditional(
                &[ex.clean_label],
                &confusions[rec.rater_id % 2],
                &SeedSpec::new(50, format!("flip:{i}")),
            )
            .unwrap();
            labels[i] = flipped[0];
        }
        let view = view.with_labels(&labels).unwrap();

        let paired = select_paired_subset(&view, 0.8, &SeedSpec::new(50, "paired")).unwrap();
        assert!(paired.len() >= 1000);
        let aux_cfg = TrainConfig::new(15, 32, 0.1, SeedSpec::new(50, "auxcfg"));
        let aux =
            train_auxiliary(&view, &paired, &view, &[8], &aux_cfg, &SeedSpec::new(50, "aux")).unwrap();
        let lqm = train_lqm(
            &paired,
            &aux.model,
            view.rater_features(),
            &LqmTrainConfig::default(),
            &SeedSpec::new(50, "lqm"),
        )
        .unwrap();

        let paired_ids = paired.example_ids();
        let held: Vec<PairedRecord> = view
            .examples()
            .iter()
            .zip(view.records())
            .filter(|(ex, _)| !paired_ids.contains(&ex.id))
            .map(|(ex, rec)| PairedRecord {
                example_id: ex.id,
                features: ex.features.clone(),
                noisy_label: rec.label,
                rater_id: rec.rater_id,
                clean_label: ex.clean_label,
            })
            .collect();
        let lqm_acc = lqm_argmax_accuracy(&lqm, &aux.model, &held).unwrap();
        let noisy_acc = noisy_label_accuracy(&held);
        assert!(
            lqm_acc >= noisy_acc + 0.05,
            "corrector {lqm_acc} vs noisy labels {noisy_acc}"
        );
    }

    #[test]
    fn correct_labels_matches_formula_and_edges() {
        let (_, view) = toy_view(51, 300);
        let paired = select_paired_subset(&view, 0.3, &SeedSpec::new(51, "paired")).unwrap();
        let aux_cfg = TrainConfig::new(10, 16, 0.1, SeedSpec::new(51, "auxcfg"));
        let aux =
            train_auxiliary(&view, &paired, &view, &[8], &aux_cfg, &SeedSpec::new(51, "aux")).unwrap();
        let lqm = train_lqm(
            &paired,
            &aux.model,
            view.rater_features(),
            &LqmTrainConfig::default(),
            &SeedSpec::new(51, "lqm"),
        )
        .unwrap();

        let zero = correct_labels(&lqm, &aux.model, view.examples(), view.records(), 0.0).unwrap();
        for (t, rec) in zero.iter().zip(view.records()) {
            assert_eq!(t.probs(), SoftLabel::one_hot(rec.label, 2).probs());
        }
        let one = correct_labels(&lqm, &aux.model, view.examples(), view.records(), 1.0).unwrap();
        for ((t, ex), rec) in one.iter().zip(view.examples()).zip(view.records()) {
            let raw = lqm.predict(&aux.model, &ex.features, rec.rater_id, rec.label).unwrap();
            assert_eq!(t.probs(), raw.probs());
        }
        let half = correct_labels(&lqm, &aux.model, view.examples(), view.records(), 0.5).unwrap();
        for t in &half {
            let sum: f64 = t.probs().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
        }
        assert!(correct_labels(&lqm, &aux.model, view.examples(), view.records(), 1.5).is_err());
    }

    #[test]
    fn targets_csv_shape() {
        let ids = vec![3u64, 5];
        let targets = vec![SoftLabel::one_hot(0, 2), SoftLabel::new(vec![0.25, 0.75]).unwrap()];
        let csv = targets_to_csv(&ids, &targets).unwrap();
        assert_eq!(csv, "example_id,prob_0,prob_1\n3,1,0\n5,0.25,0.75\n");
    }
}
