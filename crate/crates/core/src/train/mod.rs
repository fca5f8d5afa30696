//! Training with integer forward passes and surrogate-gradient backward
//! passes.
//!
//! Each step runs the batch through the quantized network with discrete
//! activations, recomputes every layer with the real-valued shadow
//! parameters to obtain surrogate derivatives, applies one Adam update to
//! the shadow parameters and re-quantizes them. The objective is softmax
//! cross-entropy on the final surrogate outputs plus a hinge penalty keeping
//! thresholds non-negative.

pub mod adam;
pub mod backprop;
pub mod checkpoint;
pub mod gradcheck;
pub mod linalg;
pub mod surrogate;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::data::{Encoding, LabeledImage};
use crate::error::{Error, Result};
use crate::frame::decide;
use crate::seed::SeedStream;
use crate::types::{
    LayerKind, LayerParams, Model, NetworkSpec, QuantizedParams, PARAM_MAX, PARAM_MIN,
};

pub use adam::{AdamConfig, AdamState};
pub use backprop::{ForwardMode, Logits, ShadowLayer, Surrogates};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{gradient_check, kink_margin, GradCheckReport};
pub use linalg::Mat;
pub use surrogate::{quantize, quantize_threshold, surrogate_drelu, surrogate_sigmoid};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop as soon as the validation error is at or below this fraction.
    pub target_val_error: Option<f64>,
    /// Epochs without validation improvement before giving up.
    pub patience: usize,
    /// Steepness of the sigmoid surrogate for binary activations.
    pub sigmoid_steepness: f64,
    pub logits: Logits,
    pub bias_penalty_weight: f64,
    /// Multiplier on the initial weight range `128 / sqrt(fan_in)`.
    pub init_gain: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.005,
            batch_size: 200,
            max_epochs: 40,
            target_val_error: None,
            patience: 10,
            sigmoid_steepness: 1.0,
            logits: Logits::Linear,
            bias_penalty_weight: 1e-3,
            init_gain: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Defaults with the learning rate chosen by architecture: 0.01 for
    /// convolutional networks, 0.005 for fully connected ones.
    pub fn for_spec(spec: &NetworkSpec) -> Self {
        let conv = spec
            .layers
            .iter()
            .any(|l| matches!(l.kind, LayerKind::Conv2d { .. }));
        TrainConfig {
            learning_rate: if conv { 0.01 } else { 0.005 },
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.learning_rate.is_nan() || self.learning_rate < 0.0 {
            return bad("learning rate must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch size must be >= 1");
        }
        if self.sigmoid_steepness.is_nan() || self.sigmoid_steepness <= 0.0 {
            return bad("sigmoid steepness must be > 0");
        }
        if self.init_gain.is_nan() || self.init_gain <= 0.0 {
            return bad("init gain must be > 0");
        }
        if self.bias_penalty_weight.is_nan() || self.bias_penalty_weight < 0.0 {
            return bad("bias penalty weight must be >= 0");
        }
        Ok(())
    }

    pub fn surrogates(&self) -> Surrogates {
        Surrogates {
            steepness: self.sigmoid_steepness,
            logits: self.logits,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

/// Encoded inputs stored compactly, one row per sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub input_size: usize,
    pub inputs: Vec<u8>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn from_images(images: &[LabeledImage], encoding: Encoding) -> Result<Self> {
        let rows = images
            .iter()
            .map(|img| encoding.encode(img))
            .collect::<Result<Vec<_>>>()?;
        let labels = images.iter().map(|i| i.label).collect();
        Dataset::from_rows(&rows, labels)
    }

    pub fn from_rows(rows: &[Vec<i32>], labels: Vec<u8>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::shape("rows and labels differ in length"));
        }
        let input_size = rows.first().map_or(0, Vec::len);
        let mut inputs = Vec::with_capacity(rows.len() * input_size);
        for r in rows {
            if r.len() != input_size {
                return Err(Error::shape("ragged dataset rows"));
            }
            for &v in r {
                inputs.push(u8::try_from(v).map_err(|_| {
                    Error::InvalidArgument(format!("input value {v} outside [0, 255]"))
                })?);
            }
        }
        Ok(Dataset {
            input_size,
            inputs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.inputs[i * self.input_size..(i + 1) * self.input_size]
    }

    pub fn row_i32(&self, i: usize) -> Vec<i32> {
        self.row(i).iter().map(|&v| v as i32).collect()
    }

    fn batch(&self, indices: &[usize]) -> (Mat, Vec<u8>) {
        let mut m = Mat::zeros(indices.len(), self.input_size);
        for (r, &i) in indices.iter().enumerate() {
            for (d, &s) in m.row_mut(r).iter_mut().zip(self.row(i)) {
                *d = s as f64;
            }
        }
        (m, indices.iter().map(|&i| self.labels[i]).collect())
    }
}

/// Complete trainer state: shadow parameters, optimizer moments and the
/// quantized forward parameters derived from the shadows.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerCheckpoint {
    pub spec: NetworkSpec,
    pub shadow: Vec<ShadowLayer>,
    pub adam: AdamState,
    pub params: QuantizedParams,
}

pub fn quantize_layers(shadow: &[ShadowLayer]) -> QuantizedParams {
    QuantizedParams {
        layers: shadow
            .iter()
            .map(|l| LayerParams {
                weights: l.weights.iter().map(|&w| quantize(w)).collect(),
                theta: l.theta.iter().map(|&t| quantize_threshold(t)).collect(),
            })
            .collect(),
    }
}

impl TrainerCheckpoint {
    /// Uniform init `U(-a, a)` with `a = gain * 128 / sqrt(fan_in)`, capped
    /// at 127; thresholds 0.
    pub fn init<R: Rng>(spec: &NetworkSpec, gain: f64, rng: &mut R) -> Self {
        let shadow: Vec<ShadowLayer> = spec
            .layers
            .iter()
            .map(|l| {
                let a = (gain * 128.0 / (l.fan_in() as f64).sqrt()).min(PARAM_MAX as f64);
                ShadowLayer {
                    weights: (0..l.weight_count())
                        .map(|_| rng.gen_range(-a..a))
                        .collect(),
                    theta: vec![0.0; l.out_size()],
                }
            })
            .collect();
        TrainerCheckpoint {
            spec: spec.clone(),
            adam: AdamState::new(&shadow),
            params: quantize_layers(&shadow),
            shadow,
        }
    }

    pub fn model(&self) -> Model {
        Model {
            spec: self.spec.clone(),
            params: self.params.clone(),
        }
    }

    /// Checks that the forward parameters are the quantized shadows.
    pub fn is_consistent(&self) -> bool {
        quantize_layers(&self.shadow) == self.params
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss: f64,
    /// Misclassified samples under the discrete forward pass.
    pub errors: usize,
}

/// One Adam step on one batch.
pub fn train_step(
    ckpt: &mut TrainerCheckpoint,
    inputs: Mat,
    labels: &[u8],
    config: &TrainConfig,
) -> StepStats {
    let fwd = backprop::forward(
        &ckpt.spec,
        &ckpt.shadow,
        &ckpt.params,
        inputs,
        ForwardMode::StraightThrough,
        config.surrogates(),
    );
    let activation = ckpt.spec.layers.last().expect("non-empty").activation;
    let errors = match (&fwd.discrete_output, &fwd.discrete_preactivation) {
        (Some(out), Some(pre)) => (0..out.rows)
            .filter(|&b| decide(activation, out.row(b), pre.row(b)) != labels[b] as usize)
            .count(),
        _ => 0,
    };
    let (loss, grads) = backprop::backward(
        &ckpt.spec,
        &ckpt.shadow,
        &fwd,
        labels,
        config.bias_penalty_weight,
    );
    ckpt.adam.update(&config.adam(), &mut ckpt.shadow, &grads);
    for l in &mut ckpt.shadow {
        for w in &mut l.weights {
            *w = w.clamp(PARAM_MIN as f64, PARAM_MAX as f64);
        }
        for t in &mut l.theta {
            *t = t.min(PARAM_MAX as f64);
        }
    }
    ckpt.params = quantize_layers(&ckpt.shadow);
    StepStats { loss, errors }
}

/// Predicted classes for every sample, using the discrete integer forward
/// pass (identical to [`crate::frame::predict`]).
pub fn predict_batch(model: &Model, data: &Dataset) -> Vec<usize> {
    let activation = model.spec.layers.last().expect("non-empty").activation;
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut out = Vec::with_capacity(data.len());
    for chunk in idx.chunks(500) {
        let (x, _) = data.batch(chunk);
        let (y, pre) = backprop::quantized_forward(&model.spec, &model.params, x);
        out.extend((0..y.rows).map(|b| decide(activation, y.row(b), pre.row(b))));
    }
    out
}

/// Fraction of misclassified samples.
pub fn error_rate(model: &Model, data: &Dataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let wrong = predict_batch(model, data)
        .iter()
        .zip(&data.labels)
        .filter(|(&p, &l)| p != l as usize)
        .count();
    wrong as f64 / data.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_error: f64,
    pub val_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Validation error reached the configured target.
    TargetReached,
    EpochCap,
    /// No validation improvement within the patience window.
    Diverged,
}

#[derive(Debug, Clone)]
pub struct FitReport {
    /// Quantized model with the lowest validation error seen.
    pub best_model: Model,
    pub best_checkpoint: TrainerCheckpoint,
    pub best_epoch: usize,
    pub best_val_error: f64,
    pub history: Vec<EpochStats>,
    pub stop: StopReason,
    pub seed: u64,
}

/// Epoch loop with seeded shuffling, early stopping and best-model
/// selection. `progress` is called after every epoch.
pub fn fit(
    spec: &NetworkSpec,
    config: &TrainConfig,
    train: &Dataset,
    val: &Dataset,
    mut progress: impl FnMut(&EpochStats),
) -> Result<FitReport> {
    config.validate()?;
    spec.validate()?;
    if train.input_size != spec.input_size()
        || (!val.is_empty() && val.input_size != spec.input_size())
    {
        return Err(Error::shape(format!(
            "data has {} inputs, network expects {}",
            train.input_size,
            spec.input_size()
        )));
    }
    let seeds = SeedStream::new(config.seed);
    let mut ckpt = TrainerCheckpoint::init(spec, config.init_gain, &mut seeds.rng("init"));
    let mut shuffle = seeds.rng("shuffle");

    let initial_val = error_rate(&ckpt.model(), val);
    let mut best = (initial_val, 0usize, ckpt.clone());
    let mut history = Vec::new();
    let mut stop = StopReason::EpochCap;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut shuffle);
        let (mut loss_sum, mut errors, mut batches) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let (x, y) = train.batch(chunk);
            let s = train_step(&mut ckpt, x, &y, config);
            loss_sum += s.loss;
            errors += s.errors;
            batches += 1;
        }
        let val_error = error_rate(&ckpt.model(), val);
        let stats = EpochStats {
            epoch,
            mean_loss: loss_sum / batches.max(1) as f64,
            train_error: errors as f64 / train.len().max(1) as f64,
            val_error,
        };
        progress(&stats);
        history.push(stats);
        if val_error < best.0 || best.1 == 0 {
            best = (val_error, epoch, ckpt.clone());
            since_best = 0;
        } else {
            since_best += 1;
        }
        if config.target_val_error.is_some_and(|t| val_error <= t) {
            stop = StopReason::TargetReached;
            break;
        }
        if since_best >= config.patience {
            stop = StopReason::Diverged;
            break;
        }
    }
    let (best_val_error, best_epoch, best_checkpoint) = best;
    Ok(FitReport {
        best_model: best_checkpoint.model(),
        best_checkpoint,
        best_epoch,
        best_val_error,
        history,
        stop,
        seed: config.seed,
    })
}
