//! Main-model training under noisy labels: the cross-entropy baseline plus
//! two robust algorithms, bootstrap target blending and co-teaching.
//!
//! All three share one loop skeleton (same per-epoch shuffles, same update
//! primitive, per-epoch model selection on the validation split), so runs
//! with matched seeds are bit-comparable: bootstrap with `beta = 1` and
//! co-teaching with `forget_rate = 0` reproduce the baseline exactly.

use crate::data::{argmax, Dataset};
use crate::error::{Error, Result};
use crate::metrics;
use crate::nnkit::{self, cross_entropy, epoch_order, MlpModel, TrainConfig, TrainingSet};
use std::fmt::Write as _;

/// Bootstrap target flavor: blend with the predicted distribution or with
/// its one-hot argmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BootstrapMode {
    Soft,
    Hard,
}

/// The training algorithm and its knobs.
#[derive(Debug, Clone)]
pub enum RobustAlgorithm {
    /// Vanilla cross-entropy on the given targets.
    Baseline,
    /// Per-step target `beta * y + (1 - beta) * model prediction`.
    Bootstrap { beta: f64, mode: BootstrapMode },
    /// Two peers exchange their small-loss samples; the keep fraction decays
    /// from 1 to `1 - forget_rate` over `warmup_steps`.
    CoTeaching { forget_rate: f64, warmup_steps: usize },
}

impl RobustAlgorithm {
    pub fn name(&self) -> &'static str {
        match self {
            RobustAlgorithm::Baseline => "baseline",
            RobustAlgorithm::Bootstrap { .. } => "bootstrap",
            RobustAlgorithm::CoTeaching { .. } => "coteaching",
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            RobustAlgorithm::Baseline => Ok(()),
            RobustAlgorithm::Bootstrap { beta, .. } => {
                if (0.0..=1.0).contains(beta) {
                    Ok(())
                } else {
                    Err(Error::invalid("bootstrap beta must be in [0, 1]"))
                }
            }
            RobustAlgorithm::CoTeaching { forget_rate, .. } => {
                if (0.0..1.0).contains(forget_rate) {
                    Ok(())
                } else {
                    Err(Error::invalid("co-teaching forget rate must be in [0, 1)"))
                }
            }
        }
    }
}

/// Model shape plus SGD settings for a robust-training run.
#[derive(Debug, Clone)]
pub struct RobustConfig {
    pub algorithm: RobustAlgorithm,
    /// Hidden layer sizes of the main model.
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

/// A trained model with its selection evidence.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    /// The parameters of the best validation epoch.
    pub model: MlpModel,
    pub best_valid_accuracy: f64,
    pub epoch_losses: Vec<f64>,
}

/// Keep fraction `R(t) = 1 - forget_rate * min(t / warmup, 1)`.
pub fn keep_fraction(forget_rate: f64, warmup_steps: usize, step: usize) -> f64 {
    let progress = if warmup_steps == 0 {
        1.0
    } else {
        (step as f64 / warmup_steps as f64).min(1.0)
    };
    1.0 - forget_rate * progress
}

/// Indices of the `ceil(fraction * len)` smallest losses, tie-broken by
/// position and returned in position order.
fn select_small_loss(losses: &[f64], fraction: f64) -> Result<Vec<usize>> {
    let keep = (fraction * losses.len() as f64).ceil() as usize;
    if keep == 0 || losses.is_empty() {
        return Err(Error::invalid(format!(
            "batch of {} too small for keep fraction {fraction}",
            losses.len()
        )));
    }
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].partial_cmp(&losses[b]).unwrap().then(a.cmp(&b)));
    let mut kept: Vec<usize> = order.into_iter().take(keep.min(losses.len())).collect();
    kept.sort_unstable();
    Ok(kept)
}

fn init_model(set: &TrainingSet, hidden: &[usize], cfg: &TrainConfig, tag: &str) -> Result<MlpModel> {
    let mut sizes = vec![set.inputs()[0].len()];
    sizes.extend_from_slice(hidden);
    sizes.push(set.num_classes());
    MlpModel::init(&sizes, &cfg.seed.child(tag))
}

/// The shared epoch loop: per-batch targets come from `build_targets`, and
/// the best-validation-epoch parameters are kept.
fn selection_loop(
    model: &mut MlpModel,
    set: &TrainingSet,
    cfg: &TrainConfig,
    valid: &Dataset,
    mut build_targets: impl FnMut(&MlpModel, &[usize]) -> Vec<Vec<f64>>,
) -> Result<TrainedRun> {
    let n = set.len();
    let steps_per_epoch = n / cfg.batch_size;
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut best_params = model.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(n, &cfg.seed, epoch);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks_exact(cfg.batch_size) {
            let lr = cfg.schedule.lr_at(cfg.initial_lr, step, total_steps);
            let targets = build_targets(model, chunk);
            let inputs: Vec<&[f64]> = chunk.iter().map(|&i| set.inputs()[i].as_slice()).collect();
            let target_refs: Vec<&[f64]> = targets.iter().map(|t| t.as_slice()).collect();
            let loss = nnkit::sgd_step(model, &inputs, &target_refs, lr, cfg.weight_decay)?;
            if !loss.is_finite() || !model.is_finite() {
                return Err(Error::Diverged {
                    step,
                    detail: format!("loss {loss} at epoch {epoch}"),
                });
            }
            epoch_loss += loss;
            batches += 1;
            step += 1;
        }
        if batches > 0 {
            epoch_losses.push(epoch_loss / batches as f64);
        }
        let acc = metrics::accuracy(model, valid)?;
        if acc > best_acc {
            best_acc = acc;
            best_params = model.clone();
        }
    }
    Ok(TrainedRun {
        model: best_params,
        best_valid_accuracy: best_acc,
        epoch_losses,
    })
}

/// Vanilla cross-entropy training with per-epoch validation selection.
pub fn train_baseline(
    set: &TrainingSet,
    valid: &Dataset,
    hidden: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainedRun> {
    let model = init_model(set, hidden, cfg, "init")?;
    train_baseline_from(model, set, valid, cfg)
}

/// Baseline training from explicit initial parameters (warm starts).
pub fn train_baseline_from(
    mut model: MlpModel,
    set: &TrainingSet,
    valid: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainedRun> {
    selection_loop(&mut model, set, cfg, valid, |_, chunk| {
        chunk.iter().map(|&i| set.target_probs()[i].clone()).collect()
    })
}

/// Bootstrap training: each step's target blends the given label with the
/// model's own prediction.
pub fn train_bootstrap(
    set: &TrainingSet,
    valid: &Dataset,
    hidden: &[usize],
    cfg: &TrainConfig,
    beta: f64,
    mode: BootstrapMode,
) -> Result<TrainedRun> {
    RobustAlgorithm::Bootstrap { beta, mode }.validate()?;
    let mut model = init_model(set, hidden, cfg, "init")?;
    selection_loop(&mut model, set, cfg, valid, |model, chunk| {
        chunk
            .iter()
            .map(|&i| {
                let probs = model.probs(&set.inputs()[i]).expect("dims checked at init");
                let label = &set.target_probs()[i];
                match mode {
                    BootstrapMode::Soft => label
                        .iter()
                        .zip(&probs)
                        .map(|(y, p)| beta * y + (1.0 - beta) * p)
                        .collect(),
                    BootstrapMode::Hard => {
                        let predicted = argmax(&probs);
                        label
                            .iter()
                            .enumerate()
                            .map(|(k, y)| beta * y + (1.0 - beta) * f64::from(u8::from(k == predicted)))
                            .collect()
                    }
                }
            })
            .collect()
    })
}

/// Both co-teaching peers with their selection evidence.
#[derive(Debug)]
pub struct CoTeachingOutcome {
    /// The peer with the higher best validation accuracy (ties keep A).
    pub chosen: TrainedRun,
    pub run_a: TrainedRun,
    pub run_b: TrainedRun,
}

/// Co-teaching: per batch, each peer ranks the samples by its own loss and
/// the other peer updates on the `ceil(R(t) * batch)` smallest. Peer A uses
/// the same init stream as the baseline, so `forget_rate = 0` reproduces a
/// baseline run bit for bit.
pub fn train_coteaching(
    set: &TrainingSet,
    valid: &Dataset,
    hidden: &[usize],
    cfg: &TrainConfig,
    forget_rate: f64,
    warmup_steps: usize,
) -> Result<CoTeachingOutcome> {
    RobustAlgorithm::CoTeaching { forget_rate, warmup_steps }.validate()?;
    let n = set.len();
    let steps_per_epoch = n / cfg.batch_size;
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut model_a = init_model(set, hidden, cfg, "init")?;
    let mut model_b = init_model(set, hidden, cfg, "init-peer")?;
    let mut best_a = (model_a.clone(), f64::NEG_INFINITY);
    let mut best_b = (model_b.clone(), f64::NEG_INFINITY);
    let mut losses_a = Vec::with_capacity(cfg.epochs);
    let mut losses_b = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;

    let batch_losses = |model: &MlpModel, chunk: &[usize]| -> Result<Vec<f64>> {
        chunk
            .iter()
            .map(|&i| Ok(cross_entropy(&model.forward(&set.inputs()[i])?, &set.target_probs()[i])))
            .collect()
    };
    let step_on =
        |model: &mut MlpModel, picked: &[usize], chunk: &[usize], lr: f64, wd: f64| -> Result<f64> {
            let inputs: Vec<&[f64]> =
                picked.iter().map(|&j| set.inputs()[chunk[j]].as_slice()).collect();
            let targets: Vec<&[f64]> =
                picked.iter().map(|&j| set.target_probs()[chunk[j]].as_slice()).collect();
            nnkit::sgd_step(model, &inputs, &targets, lr, wd)
        };

    for epoch in 0..cfg.epochs {
        let order = epoch_order(n, &cfg.seed, epoch);
        let mut epoch_loss_a = 0.0;
        let mut epoch_loss_b = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks_exact(cfg.batch_size) {
            let lr = cfg.schedule.lr_at(cfg.initial_lr, step, total_steps);
            let fraction = keep_fraction(forget_rate, warmup_steps, step);
            // Both peers rank with their pre-update parameters.
            let selected_by_a = select_small_loss(&batch_losses(&model_a, chunk)?, fraction)?;
            let selected_by_b = select_small_loss(&batch_losses(&model_b, chunk)?, fraction)?;
            // Each peer trains on the other's selection.
            let loss_a = step_on(&mut model_a, &selected_by_b, chunk, lr, cfg.weight_decay)?;
            let loss_b = step_on(&mut model_b, &selected_by_a, chunk, lr, cfg.weight_decay)?;
            if !loss_a.is_finite()
                || !loss_b.is_finite()
                || !model_a.is_finite()
                || !model_b.is_finite()
            {
                return Err(Error::Diverged {
                    step,
                    detail: format!("peer losses {loss_a}/{loss_b} at epoch {epoch}"),
                });
            }
            epoch_loss_a += loss_a;
            epoch_loss_b += loss_b;
            batches += 1;
            step += 1;
        }
        if batches > 0 {
            losses_a.push(epoch_loss_a / batches as f64);
            losses_b.push(epoch_loss_b / batches as f64);
        }
        let acc_a = metrics::accuracy(&model_a, valid)?;
        if acc_a > best_a.1 {
            best_a = (model_a.clone(), acc_a);
        }
        let acc_b = metrics::accuracy(&model_b, valid)?;
        if acc_b > best_b.1 {
            best_b = (model_b.clone(), acc_b);
        }
    }
    let run_a = TrainedRun {
        model: best_a.0,
        best_valid_accuracy: best_a.1,
        epoch_losses: losses_a,
    };
    let run_b = TrainedRun {
        model: best_b.0,
        best_valid_accuracy: best_b.1,
        epoch_losses: losses_b,
    };
    let chosen = if run_b.best_valid_accuracy > run_a.best_valid_accuracy {
        run_b.clone()
    } else {
        run_a.clone()
    };
    Ok(CoTeachingOutcome { chosen, run_a, run_b })
}

/// Dispatch on the configured algorithm.
pub fn train_robust(set: &TrainingSet, valid: &Dataset, cfg: &RobustConfig) -> Result<TrainedRun> {
    cfg.algorithm.validate()?;
    match &cfg.algorithm {
        RobustAlgorithm::Baseline => train_baseline(set, valid, &cfg.hidden, &cfg.train),
        RobustAlgorithm::Bootstrap { beta, mode } => {
            train_bootstrap(set, valid, &cfg.hidden, &cfg.train, *beta, *mode)
        }
        RobustAlgorithm::CoTeaching { forget_rate, warmup_steps } => Ok(train_coteaching(
            set,
            valid,
            &cfg.hidden,
            &cfg.train,
            *forget_rate,
            *warmup_steps,
        )?
        .chosen),
    }
}

/// One row of the run-record CSV.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub run_id: String,
    pub algorithm: String,
    pub noise_kind: String,
    pub error_rate: f64,
    pub seed: u64,
    pub test_accuracy: f64,
    pub valid_accuracy: f64,
    pub aucpr: Option<f64>,
}

/// Render run records in the documented column order.
pub fn run_records_to_csv(records: &[RunRecord]) -> String {
    let mut out = String::from(
        "run_id,algorithm,noise_kind,error_rate,seed,test_accuracy,valid_accuracy,aucpr\n",
    );
    for r in records {
        let aucpr = r.aucpr.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.run_id,
            r.algorithm,
            r.noise_kind,
            r.error_rate,
            r.seed,
            r.test_accuracy,
            r.valid_accuracy,
            aucpr
        );
    }
    out
}
