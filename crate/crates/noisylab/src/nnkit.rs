//! From-scratch multilayer perceptron with minibatch SGD.
//!
//! Hidden layers use tanh (smooth, so analytic gradients can be checked
//! against central finite differences); the output layer is linear and
//! produces logits. Training minimizes cross-entropy against hard or soft
//! targets with plain SGD, a constant or cosine learning-rate schedule, and
//! optional L2 weight decay on the weight matrices (not biases). Incomplete
//! final batches are dropped so the step count is a pure function of the
//! config.
//!
//! All randomness (initialization, per-epoch shuffles) is drawn from named
//! [`SeedSpec`] streams, so training is bit-reproducible.

use crate::data::{argmax, SoftLabel};
use crate::error::{Error, Result};
use crate::seed::SeedSpec;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use std::path::Path;

/// Probability floor applied inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

const CHECKPOINT_MAGIC: &[u8; 8] = b"NLABMLP1";

/// Fully-connected network: `layer_sizes = [input, hidden..., output]`.
///
/// Weight matrices are row-major `(out, in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl MlpModel {
    /// Initialize with fan-in-scaled Gaussian weights (variance `1/fan_in`)
    /// and zero biases.
    pub fn init(layer_sizes: &[usize], seed: &SeedSpec) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::invalid("need at least an input and an output layer"));
        }
        if layer_sizes.iter().any(|&s| s < 1) {
            return Err(Error::invalid(format!(
                "every layer size must be >= 1, got {layer_sizes:?}"
            )));
        }
        let mut rng = seed.rng();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("positive std");
            weights.push((0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect());
            biases.push(vec![0.0; fan_out]);
        }
        Ok(MlpModel {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn num_inputs(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_outputs(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Logits for one input.
    pub fn forward(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.num_inputs() {
            return Err(Error::invalid(format!(
                "input has {} features, model expects {}",
                features.len(),
                self.num_inputs()
            )));
        }
        let mut activation = features.to_vec();
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let mut z = affine(w, b, &activation);
            if l != last {
                for v in &mut z {
                    *v = v.tanh();
                }
            }
            activation = z;
        }
        Ok(activation)
    }

    /// Softmax of the logits.
    pub fn probs(&self, features: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.forward(features)?))
    }

    /// Argmax class with lowest-index tie-break.
    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        Ok(argmax(&self.forward(features)?))
    }

    /// True when every parameter is finite.
    pub fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(&self.biases)
            .all(|v| v.iter().all(|x| x.is_finite()))
    }

    /// All parameters as one flat vector (weights then biases, layer by
    /// layer). The layout matches [`batch_gradient`].
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    /// Overwrite all parameters from the flat layout of [`params_flat`].
    pub fn set_params_flat(&mut self, params: &[f64]) -> Result<()> {
        let expected: usize = self
            .weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.len() + b.len())
            .sum();
        if params.len() != expected {
            return Err(Error::invalid(format!(
                "expected {expected} parameters, got {}",
                params.len()
            )));
        }
        let mut offset = 0;
        for (w, b) in self.weights.iter_mut().zip(&mut self.biases) {
            let w_len = w.len();
            w.copy_from_slice(&params[offset..offset + w_len]);
            offset += w_len;
            let b_len = b.len();
            b.copy_from_slice(&params[offset..offset + b_len]);
            offset += b_len;
        }
        Ok(())
    }

    /// Serialize to the checkpoint byte layout: the magic `NLABMLP1`, a u32
    /// layer count, the u32 layer sizes, then per layer the row-major f64
    /// weights followed by the biases, all little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(self.layer_sizes.len() as u32).to_le_bytes());
        for &s in &self.layer_sizes {
            out.extend_from_slice(&(s as u32).to_le_bytes());
        }
        for (w, b) in self.weights.iter().zip(&self.biases) {
            for v in w.iter().chain(b) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Exact inverse of [`MlpModel::to_bytes`].
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |detail: &str| Error::invalid(format!("checkpoint: {detail}"));
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing magic header"));
        }
        let mut pos = 8;
        let read_u32 = |pos: &mut usize| -> Result<u32> {
            let end = *pos + 4;
            if end > bytes.len() {
                return Err(bad("truncated header"));
            }
            let v = u32::from_le_bytes(bytes[*pos..end].try_into().unwrap());
            *pos = end;
            Ok(v)
        };
        let n_sizes = read_u32(&mut pos)? as usize;
        if n_sizes < 2 {
            return Err(bad("fewer than two layer sizes"));
        }
        let mut layer_sizes = Vec::with_capacity(n_sizes);
        for _ in 0..n_sizes {
            layer_sizes.push(read_u32(&mut pos)? as usize);
        }
        let read_f64s = |count: usize, pos: &mut usize| -> Result<Vec<f64>> {
            let end = *pos + 8 * count;
            if end > bytes.len() {
                return Err(bad("truncated parameters"));
            }
            let vals = bytes[*pos..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            *pos = end;
            Ok(vals)
        };
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in layer_sizes.windows(2) {
            weights.push(read_f64s(pair[0] * pair[1], &mut pos)?);
            biases.push(read_f64s(pair[1], &mut pos)?);
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(MlpModel {
            layer_sizes,
            weights,
            biases,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::manifest::atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    #[cfg(test)]
    fn set_layer(&mut self, layer: usize, weights: Vec<f64>, biases: Vec<f64>) {
        self.weights[layer] = weights;
        self.biases[layer] = biases;
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let (n_out, n_in) = (b.len(), x.len());
    let mut out = b.to_vec();
    for o in 0..n_out {
        let row = &w[o * n_in..(o + 1) * n_in];
        out[o] += row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>();
    }
    out
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Log-softmax via the log-sum-exp trick.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// Cross-entropy `-sum_k t_k log p_k` of soft target `t` against
/// `softmax(logits)`, with log-probabilities floored at `ln(PROB_FLOOR)`.
pub fn cross_entropy(logits: &[f64], target: &[f64]) -> f64 {
    let floor = PROB_FLOOR.ln();
    log_softmax(logits)
        .iter()
        .zip(target)
        .map(|(&lp, &t)| -t * lp.max(floor))
        .sum()
}

/// Learning-rate schedule over a fixed step budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LrSchedule {
    Constant,
    /// Half-cosine decay from the initial rate at step 0 to 0 at the final
    /// step.
    Cosine,
}

impl LrSchedule {
    pub fn lr_at(self, initial_lr: f64, step: usize, total_steps: usize) -> f64 {
        match self {
            LrSchedule::Constant => initial_lr,
            LrSchedule::Cosine => {
                if total_steps <= 1 {
                    initial_lr
                } else {
                    let t = step as f64 / (total_steps - 1) as f64;
                    0.5 * initial_lr * (1.0 + (std::f64::consts::PI * t).cos())
                }
            }
        }
    }
}

/// SGD hyperparameters. The seed drives initialization-independent choices
/// made during training (the per-epoch shuffles).
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub initial_lr: f64,
    pub schedule: LrSchedule,
    pub weight_decay: f64,
    pub seed: SeedSpec,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, initial_lr: f64, seed: SeedSpec) -> Self {
        TrainConfig {
            epochs,
            batch_size,
            initial_lr,
            schedule: LrSchedule::Cosine,
            weight_decay: 0.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(self.initial_lr >= 0.0) {
            return Err(Error::invalid("initial_lr must be >= 0"));
        }
        Ok(())
    }
}

/// A training target: a hard class index or a full distribution.
#[derive(Debug, Clone)]
pub enum TrainTarget {
    Hard(usize),
    Soft(SoftLabel),
}

impl TrainTarget {
    fn to_probs(&self, num_classes: usize) -> Vec<f64> {
        match self {
            TrainTarget::Hard(class) => {
                let mut p = vec![0.0; num_classes];
                p[*class] = 1.0;
                p
            }
            TrainTarget::Soft(sl) => sl.probs().to_vec(),
        }
    }
}

/// Inputs plus per-input targets, validated against a class count.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    inputs: Vec<Vec<f64>>,
    targets: Vec<Vec<f64>>,
    num_classes: usize,
}

impl TrainingSet {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<TrainTarget>, num_classes: usize) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        if inputs.len() != targets.len() {
            return Err(Error::invalid("inputs and targets differ in length"));
        }
        let dim = inputs[0].len();
        if inputs.iter().any(|x| x.len() != dim) {
            return Err(Error::invalid("inputs differ in dimension"));
        }
        let mut probs = Vec::with_capacity(targets.len());
        for t in &targets {
            match t {
                TrainTarget::Hard(c) if *c >= num_classes => {
                    return Err(Error::invalid(format!(
                        "hard target {c} outside [0, {num_classes})"
                    )))
                }
                TrainTarget::Soft(sl) if sl.num_classes() != num_classes => {
                    return Err(Error::invalid("soft target has wrong class count"))
                }
                _ => {}
            }
            probs.push(t.to_probs(num_classes));
        }
        Ok(TrainingSet {
            inputs,
            targets: probs,
            num_classes,
        })
    }

    /// Hard-target set from a dataset's features and clean labels.
    pub fn from_dataset(dataset: &crate::data::Dataset) -> Result<Self> {
        let inputs = dataset.examples().iter().map(|e| e.features.clone()).collect();
        let targets = dataset
            .examples()
            .iter()
            .map(|e| TrainTarget::Hard(e.clean_label))
            .collect();
        TrainingSet::new(inputs, targets, dataset.num_classes())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    /// Target probability vectors (one-hot for hard targets).
    pub fn target_probs(&self) -> &[Vec<f64>] {
        &self.targets
    }
}

/// Mean loss and flat gradient (layout of [`MlpModel::params_flat`]) of the
/// batch cross-entropy, without updating the model.
pub fn batch_gradient(
    model: &MlpModel,
    inputs: &[&[f64]],
    targets: &[&[f64]],
) -> Result<(f64, Vec<f64>)> {
    if inputs.is_empty() || inputs.len() != targets.len() {
        return Err(Error::invalid("batch inputs/targets empty or mismatched"));
    }
    let sizes = &model.layer_sizes;
    let n_layers = model.weights.len();
    let mut grad_w: Vec<Vec<f64>> = model.weights.iter().map(|w| vec![0.0; w.len()]).collect();
    let mut grad_b: Vec<Vec<f64>> = model.biases.iter().map(|b| vec![0.0; b.len()]).collect();
    let mut total_loss = 0.0;
    let scale = 1.0 / inputs.len() as f64;

    for (x, t) in inputs.iter().zip(targets) {
        if x.len() != model.num_inputs() || t.len() != model.num_outputs() {
            return Err(Error::invalid("batch row dimension mismatch"));
        }
        // Forward pass, keeping every activation.
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        acts.push(x.to_vec());
        for l in 0..n_layers {
            let mut z = affine(&model.weights[l], &model.biases[l], &acts[l]);
            if l != n_layers - 1 {
                for v in &mut z {
                    *v = v.tanh();
                }
            }
            acts.push(z);
        }
        let logits = &acts[n_layers];
        total_loss += cross_entropy(logits, t);

        // delta at the output: softmax(logits) - target.
        let mut delta: Vec<f64> = softmax(logits)
            .iter()
            .zip(*t)
            .map(|(p, t)| (p - t) * scale)
            .collect();
        for l in (0..n_layers).rev() {
            let input = &acts[l];
            let n_in = sizes[l];
            for (o, &d) in delta.iter().enumerate() {
                grad_b[l][o] += d;
                let row = &mut grad_w[l][o * n_in..(o + 1) * n_in];
                for (gw, xi) in row.iter_mut().zip(input) {
                    *gw += d * xi;
                }
            }
            if l > 0 {
                // Back through the tanh: act = tanh(z), act' = 1 - act^2.
                let mut prev = vec![0.0; n_in];
                for (o, &d) in delta.iter().enumerate() {
                    let row = &model.weights[l][o * n_in..(o + 1) * n_in];
                    for (p, &w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                for (p, a) in prev.iter_mut().zip(input) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
    }

    let mut flat = Vec::new();
    for (w, b) in grad_w.iter().zip(&grad_b) {
        flat.extend_from_slice(w);
        flat.extend_from_slice(b);
    }
    Ok((total_loss * scale, flat))
}

/// Mean batch cross-entropy without touching the model.
pub fn batch_loss(model: &MlpModel, inputs: &[&[f64]], targets: &[&[f64]]) -> Result<f64> {
    let mut total = 0.0;
    for (x, t) in inputs.iter().zip(targets) {
        total += cross_entropy(&model.forward(x)?, t);
    }
    Ok(total / inputs.len() as f64)
}

/// One SGD update on a batch; returns the pre-update mean loss. Weight decay
/// applies to weight matrices only.
pub fn sgd_step(
    model: &mut MlpModel,
    inputs: &[&[f64]],
    targets: &[&[f64]],
    lr: f64,
    weight_decay: f64,
) -> Result<f64> {
    let (loss, grad) = batch_gradient(model, inputs, targets)?;
    let mut offset = 0;
    for (w, b) in model.weights.iter_mut().zip(&mut model.biases) {
        for wi in w.iter_mut() {
            *wi -= lr * (grad[offset] + weight_decay * *wi);
            offset += 1;
        }
        for bi in b.iter_mut() {
            *bi -= lr * grad[offset];
            offset += 1;
        }
    }
    Ok(loss)
}

/// The canonical index order for an epoch: shuffled by the
/// `seed/epoch:{epoch}` stream. Shared by every training loop in the crate
/// so matched seeds mean matched batches.
pub fn epoch_order(n: usize, seed: &SeedSpec, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed.child(format!("epoch:{epoch}")).rng());
    order
}

/// Per-epoch mean training losses.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
}

/// Minibatch SGD over the training set. See [`train_with`] for the epoch
/// callback variant.
pub fn train(model: &mut MlpModel, set: &TrainingSet, cfg: &TrainConfig) -> Result<TrainReport> {
    train_with(model, set, cfg, |_, _| {})
}

/// [`train`] with a callback invoked after every epoch (used for
/// validation-based model selection). If the dataset is smaller than one
/// batch, zero steps run and the model is returned unchanged.
pub fn train_with(
    model: &mut MlpModel,
    set: &TrainingSet,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &MlpModel),
) -> Result<TrainReport> {
    cfg.validate()?;
    if set.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    if set.num_classes() != model.num_outputs() {
        return Err(Error::invalid(format!(
            "training set has {} classes, model outputs {}",
            set.num_classes(),
            model.num_outputs()
        )));
    }
    let n = set.len();
    let steps_per_epoch = n / cfg.batch_size;
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(n, &cfg.seed, epoch);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks_exact(cfg.batch_size) {
            let inputs: Vec<&[f64]> = chunk.iter().map(|&i| set.inputs[i].as_slice()).collect();
            let targets: Vec<&[f64]> = chunk.iter().map(|&i| set.targets[i].as_slice()).collect();
            let lr = cfg.schedule.lr_at(cfg.initial_lr, step, total_steps);
            let loss = sgd_step(model, &inputs, &targets, lr, cfg.weight_decay)?;
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
        on_epoch(epoch, model);
    }
    Ok(TrainReport { epoch_losses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    #[test]
    fn init_is_deterministic() {
        let seed = SeedSpec::new(2, "init");
        let a = MlpModel::init(&[3, 5, 2], &seed).unwrap();
        let b = MlpModel::init(&[3, 5, 2], &seed).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_layer_size_is_rejected() {
        assert!(MlpModel::init(&[2, 0, 2], &SeedSpec::new(1, "init")).is_err());
        assert!(MlpModel::init(&[2], &SeedSpec::new(1, "init")).is_err());
    }

    #[test]
    fn init_variance_scales_with_fan_in() {
        // 10k weights with fan_in 16: sample variance within 20% of 1/16.
        let model = MlpModel::init(&[16, 625, 2], &SeedSpec::new(7, "init")).unwrap();
        let w = &model.weights[0];
        assert_eq!(w.len(), 10_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64;
        let expected = 1.0 / 16.0;
        assert!(
            (var - expected).abs() < 0.2 * expected,
            "variance {var} not within 20% of {expected}"
        );
    }

    #[test]
    fn zero_network_gives_uniform_softmax() {
        let mut model = MlpModel::init(&[4, 3], &SeedSpec::new(1, "init")).unwrap();
        model.set_layer(0, vec![0.0; 12], vec![0.0; 3]);
        let logits = model.forward(&[1.0, -2.0, 0.5, 3.0]).unwrap();
        assert_eq!(logits, vec![0.0; 3]);
        let probs = softmax(&logits);
        for p in probs {
            assert_relative_eq!(p, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn identity_layer_passes_inputs_through() {
        let mut model = MlpModel::init(&[2, 2], &SeedSpec::new(1, "init")).unwrap();
        model.set_layer(0, vec![1.0, 0.0, 0.0, 1.0], vec![0.0, 0.0]);
        let logits = model.forward(&[0.3, -1.7]).unwrap();
        assert_eq!(logits, vec![0.3, -1.7]);
    }

    #[test]
    fn softmax_of_forward_is_normalized() {
        let model = MlpModel::init(&[6, 10, 4], &SeedSpec::new(3, "init")).unwrap();
        let mut rng = SeedSpec::new(4, "inputs").rng();
        for _ in 0..1000 {
            let x: Vec<f64> = (0..6).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
            let p = model.probs(&x).unwrap();
            let sum: f64 = p.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(p.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn forward_rejects_dimension_mismatch() {
        let model = MlpModel::init(&[3, 2], &SeedSpec::new(1, "init")).unwrap();
        assert!(model.forward(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn cross_entropy_one_hot_is_negative_log_prob() {
        let logits = vec![0.2, -1.3, 2.1];
        let target = vec![0.0, 0.0, 1.0];
        let ce = cross_entropy(&logits, &target);
        let p = softmax(&logits)[2];
        assert!((ce + p.ln()).abs() < 1e-9);
    }

    #[test]
    fn cosine_schedule_decays_to_zero() {
        let total = 500;
        let lr0 = LrSchedule::Cosine.lr_at(0.3, 0, total);
        assert_eq!(lr0, 0.3);
        let mut prev = f64::INFINITY;
        for step in 0..total {
            let lr = LrSchedule::Cosine.lr_at(0.3, step, total);
            assert!(lr <= prev + 1e-15, "schedule increased at step {step}");
            prev = lr;
        }
        let last = LrSchedule::Cosine.lr_at(0.3, total - 1, total);
        assert!(last <= 0.3 * 1e-3);
    }

    fn xor_set() -> TrainingSet {
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        let mut rng = SeedSpec::new(11, "xor").rng();
        for _ in 0..200 {
            let a = rng.random::<bool>();
            let b = rng.random::<bool>();
            let mut jitter = || rng.random::<f64>() * 0.2 - 0.1;
            let mut x = vec![a as u8 as f64, b as u8 as f64];
            x[0] += jitter();
            x[1] += jitter();
            inputs.push(x);
            targets.push(TrainTarget::Hard((a ^ b) as usize));
        }
        TrainingSet::new(inputs, targets, 2).unwrap()
    }

    #[test]
    fn learns_xor() {
        let set = xor_set();
        let mut model = MlpModel::init(&[2, 8, 2], &SeedSpec::new(5, "model")).unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 20,
            initial_lr: 0.5,
            schedule: LrSchedule::Cosine,
            weight_decay: 0.0,
            seed: SeedSpec::new(5, "train"),
        };
        // 200 epochs x 10 steps = 2000 steps.
        train(&mut model, &set, &cfg).unwrap();
        let correct = set
            .inputs()
            .iter()
            .zip(set.target_probs())
            .filter(|(x, t)| model.predict(x).unwrap() == argmax(t))
            .count();
        let acc = correct as f64 / set.len() as f64;
        assert!(acc >= 0.95, "xor training accuracy {acc}");
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let set = xor_set();
        let mut model = MlpModel::init(&[2, 4, 2], &SeedSpec::new(6, "model")).unwrap();
        let before = model.params_flat();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 10,
            initial_lr: 0.0,
            schedule: LrSchedule::Constant,
            weight_decay: 0.0,
            seed: SeedSpec::new(6, "train"),
        };
        let report = train(&mut model, &set, &cfg).unwrap();
        assert_eq!(model.params_flat(), before);
        assert_eq!(report.epoch_losses[0], *report.epoch_losses.last().unwrap());
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        let model = MlpModel::init(&[3, 6, 4, 3], &SeedSpec::new(9, "model")).unwrap();
        let mut rng = SeedSpec::new(10, "data").rng();
        let inputs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
            .collect();
        let targets: Vec<Vec<f64>> = (0..5)
            .map(|_| {
                let mut t = vec![0.0; 3];
                t[rng.random_range(0..3)] = 1.0;
                t
            })
            .collect();
        let input_refs: Vec<&[f64]> = inputs.iter().map(|v| v.as_slice()).collect();
        let target_refs: Vec<&[f64]> = targets.iter().map(|v| v.as_slice()).collect();
        let (_, grad) = batch_gradient(&model, &input_refs, &target_refs).unwrap();
        let params = model.params_flat();
        let eps = 1e-6;
        for (i, &g) in grad.iter().enumerate() {
            let mut plus = model.clone();
            let mut minus = model.clone();
            let mut p = params.clone();
            p[i] += eps;
            plus.set_params_flat(&p).unwrap();
            p[i] -= 2.0 * eps;
            minus.set_params_flat(&p).unwrap();
            let num = (batch_loss(&plus, &input_refs, &target_refs).unwrap()
                - batch_loss(&minus, &input_refs, &target_refs).unwrap())
                / (2.0 * eps);
            let denom = g.abs().max(num.abs()).max(1e-8);
            assert!(
                (g - num).abs() / denom < 1e-4,
                "param {i}: analytic {g} vs numeric {num}"
            );
        }
    }

    #[test]
    fn soft_one_hot_targets_match_hard_training() {
        let set_hard = xor_set();
        let soft_targets: Vec<TrainTarget> = set_hard
            .target_probs()
            .iter()
            .map(|p| TrainTarget::Soft(SoftLabel::new(p.clone()).unwrap()))
            .collect();
        let set_soft =
            TrainingSet::new(set_hard.inputs().to_vec(), soft_targets, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 16,
            initial_lr: 0.2,
            schedule: LrSchedule::Cosine,
            weight_decay: 0.0,
            seed: SeedSpec::new(12, "train"),
        };
        let mut m1 = MlpModel::init(&[2, 4, 2], &SeedSpec::new(12, "model")).unwrap();
        let mut m2 = m1.clone();
        let r1 = train(&mut m1, &set_hard, &cfg).unwrap();
        let r2 = train(&mut m2, &set_soft, &cfg).unwrap();
        assert_eq!(r1.epoch_losses, r2.epoch_losses);
        assert_eq!(m1.params_flat(), m2.params_flat());
    }

    #[test]
    fn divergence_is_reported() {
        // Huge inputs with a huge learning rate overflow the first update.
        let set = TrainingSet::new(
            vec![vec![1e200, -1e200], vec![-1e200, 1e200]],
            vec![TrainTarget::Hard(0), TrainTarget::Hard(1)],
            2,
        )
        .unwrap();
        let mut model = MlpModel::init(&[2, 2], &SeedSpec::new(13, "model")).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 2,
            initial_lr: 1e200,
            schedule: LrSchedule::Constant,
            weight_decay: 0.0,
            seed: SeedSpec::new(13, "train"),
        };
        match train(&mut model, &set, &cfg) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let model = MlpModel::init(&[4, 7, 3], &SeedSpec::new(14, "model")).unwrap();
        let restored = MlpModel::from_bytes(&model.to_bytes()).unwrap();
        assert_eq!(model, restored);
        assert!(MlpModel::from_bytes(b"not a checkpoint").is_err());
    }
}
