//! Small convolutional regressor from preprocessed frames to four MCP
//! flexion angles, trained with Adam on mean absolute error.

pub mod adam;
pub mod gradcheck;
pub mod layers;
pub mod model;
pub mod tensor;
pub mod train;

use thiserror::Error;

use crate::binio::DecodeError;

pub use adam::{AdamConfig, AdamState};
pub use model::{Architecture, CnnModel, ForwardCache, Gradients, Layer, LayerSpec};
pub use tensor::{Shape, Tensor};
pub use train::{evaluate_mae, fit, frame_input, predict_angles, train_cnn, EpochRecord, TrainConfig, TrainingHistory};

/// Network outputs: one flexion angle per finger.
pub const OUTPUTS: usize = 4;

#[derive(Debug, Error)]
pub enum CnnError {
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("model architecture `{found}` does not match expected `{expected}`")]
    ArchitectureMismatch { expected: String, found: String },
    #[error("input of {got} values does not fit shape {expected}")]
    Shape { expected: String, got: usize },
    #[error("forward cache does not belong to the current model parameters")]
    StaleCache,
    #[error("bad training data: {0}")]
    Data(String),
    #[error("bad training config: {0}")]
    Config(String),
    #[error("malformed CNN model: {0}")]
    Format(#[from] DecodeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CnnError>;

/// Mean absolute error over the four outputs and its gradient
/// `sign(pred - target) / 4` (zero where they are equal).
pub fn mae_loss(pred: &[f64; OUTPUTS], target: &[f64; OUTPUTS]) -> (f64, [f64; OUTPUTS]) {
    let n = OUTPUTS as f64;
    let mut grad = [0.0; OUTPUTS];
    let mut loss = 0.0;
    for k in 0..OUTPUTS {
        let d = pred[k] - target[k];
        loss += d.abs();
        grad[k] = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    (loss / n, grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_values_and_gradient() {
        let (l, g) = mae_loss(&[1.0, 2.0, 3.0, 4.0], &[1.0, 0.0, 5.0, 4.5]);
        assert!((l - (0.0 + 2.0 + 2.0 + 0.5) / 4.0).abs() < 1e-15);
        assert_eq!(g, [0.0, 0.25, -0.25, -0.25]);
    }
}
