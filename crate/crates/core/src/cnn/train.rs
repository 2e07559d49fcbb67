use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{AdamConfig, AdamState};
use super::model::{Architecture, CnnModel, Gradients};
use super::{mae_loss, CnnError, Result, OUTPUTS};
use crate::kinematics::McpAngles;
use crate::split::SequentialSplit;
use crate::synthgen::UltrasoundFrame;

/// Fewest samples accepted by [`train_cnn`].
pub const MIN_TRAINING_SAMPLES: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Per-epoch inverse-time decay: `lr_e = lr / (1 + decay * e)`.
    pub decay: f64,
    pub validation_split: f64,
    pub test_split: f64,
    /// Set from the run-level seed rather than read from config files.
    #[serde(skip)]
    pub seed: u64,
    /// Architecture descriptor; defaults to [`Architecture::micro`] sized to
    /// the input frames.
    pub architecture: Option<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 16,
            learning_rate: 1e-3,
            decay: 1e-3 / 200.0,
            validation_split: 0.1,
            test_split: 0.3,
            seed: 0,
            architecture: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if self.epochs == 0 {
            errs.push("cnn.epochs must be at least 1".to_string());
        }
        if self.batch_size == 0 {
            errs.push("cnn.batch_size must be at least 1".to_string());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            errs.push(format!("cnn.learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            errs.push(format!("cnn.decay must be non-negative, got {}", self.decay));
        }
        for (name, v) in [("validation_split", self.validation_split), ("test_split", self.test_split)] {
            if !(0.0..1.0).contains(&v) {
                errs.push(format!("cnn.{name} must be in [0, 1), got {v}"));
            }
        }
        if let Some(a) = &self.architecture {
            if let Err(e) = a.parse::<Architecture>() {
                errs.push(format!("cnn.architecture: {e}"));
            }
        }
        errs
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate / (1.0 + self.decay * epoch as f64)
    }

    pub fn architecture_for(&self, height: usize, width: usize) -> Result<Architecture> {
        match &self.architecture {
            Some(a) => a.parse(),
            None => Ok(Architecture::micro(height, width)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean batch loss seen during the epoch.
    pub train_mae: f64,
    pub validation_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingHistory {
    pub split: SequentialSplit,
    pub epochs: Vec<EpochRecord>,
}

/// Mean absolute error of `model` over the given samples, in degrees.
pub fn evaluate_mae(model: &CnnModel, inputs: &[Vec<f64>], targets: &[[f64; OUTPUTS]]) -> Result<f64> {
    if inputs.is_empty() {
        return Err(CnnError::Data("no samples to evaluate".into()));
    }
    let mut total = 0.0;
    for (x, t) in inputs.iter().zip(targets) {
        total += mae_loss(&model.predict(x)?, t).0;
    }
    Ok(total / inputs.len() as f64)
}

/// Train a regression network on time-ordered samples. The last
/// `test_split` of the sequence is never touched; of the remainder, the
/// last `validation_split` is scored after every epoch.
pub fn train_cnn(
    inputs: &[Vec<f64>],
    targets: &[[f64; OUTPUTS]],
    architecture: Architecture,
    cfg: &TrainConfig,
) -> Result<(CnnModel, TrainingHistory)> {
    if let Some(e) = cfg.validate().into_iter().next() {
        return Err(CnnError::Config(e));
    }
    if inputs.len() != targets.len() {
        return Err(CnnError::Data(format!(
            "{} inputs but {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    if inputs.len() < MIN_TRAINING_SAMPLES {
        return Err(CnnError::Data(format!(
            "need at least {MIN_TRAINING_SAMPLES} samples, got {}",
            inputs.len()
        )));
    }
    if targets.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CnnError::Data("targets contain non-finite values".into()));
    }
    let split = SequentialSplit::new(inputs.len(), cfg.test_split, cfg.validation_split);
    if split.train == 0 {
        return Err(CnnError::Data("split leaves no training samples".into()));
    }
    let mut model = CnnModel::new(architecture, cfg.seed)?;
    let expected = model.input_shape().len();
    if let Some(bad) = inputs.iter().find(|x| x.len() != expected) {
        return Err(CnnError::Shape {
            expected: model.input_shape().to_string(),
            got: bad.len(),
        });
    }
    let epochs = fit(
        &mut model,
        inputs,
        targets,
        split.train_range(),
        split.validation_range(),
        cfg,
    )?;
    Ok((model, TrainingHistory { split, epochs }))
}

/// The optimisation loop: `cfg.epochs` passes of seeded-shuffled mini-batches
/// over `train`, scoring `validation` (when non-empty) after each epoch.
/// Inputs must already match the model's input shape.
pub fn fit(
    model: &mut CnnModel,
    inputs: &[Vec<f64>],
    targets: &[[f64; OUTPUTS]],
    train: Range<usize>,
    validation: Range<usize>,
    cfg: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    if train.is_empty() {
        return Err(CnnError::Data("no training samples".into()));
    }
    let mut adam = AdamState::new(model, AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_cafe);
    let mut order: Vec<usize> = train.collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = Gradients::zeros_like(model);
            for &i in batch {
                let (pred, cache) = model.forward(&inputs[i])?;
                let (loss, g_out) = mae_loss(&pred, &targets[i]);
                loss_sum += loss;
                grads.add_assign(&model.backward(&cache, &g_out)?);
            }
            grads.scale(1.0 / batch.len() as f64);
            adam.apply(model, &grads, lr);
        }
        let validation_mae = if validation.is_empty() {
            None
        } else {
            Some(evaluate_mae(
                model,
                &inputs[validation.clone()],
                &targets[validation.clone()],
            )?)
        };
        history.push(EpochRecord {
            epoch,
            learning_rate: lr,
            train_mae: loss_sum / order.len() as f64,
            validation_mae,
        });
    }
    Ok(history)
}

/// Frame pixels as a network input vector.
pub fn frame_input(frame: &UltrasoundFrame) -> Vec<f64> {
    frame.pixels.iter().map(|&p| p as f64).collect()
}

/// Predict MCP flexion for one preprocessed frame; outputs are clamped to
/// the physiological range.
pub fn predict_angles(model: &CnnModel, frame: &UltrasoundFrame) -> Result<McpAngles> {
    let expected = model.input_shape();
    if let super::Shape::Image { height, width, .. } = expected {
        if frame.height != height || frame.width != width {
            return Err(CnnError::Shape {
                expected: expected.to_string(),
                got: frame.pixels.len(),
            });
        }
    }
    Ok(McpAngles::from_flexion(model.predict(&frame_input(frame))?))
}
