//! A small 3D convolutional classifier written from scratch: forward and
//! backward passes, weighted cross-entropy, SGD with momentum, layer
//! freezing and a binary checkpoint format.

pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod model;
pub mod tensor;
pub mod train;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use loss::{softmax, weighted_cross_entropy, weighted_cross_entropy_grad, ClassWeights};
pub use model::{ConvStage, ForwardTrace, Gradients, ModelConfig, Net};
pub use tensor::{Real, Tensor};
pub use train::{batch_gradients, fine_tune, train, EpochLog, Sample, Sgd, TrainConfig};

use crate::heatmap::HeatmapVolume;

#[derive(Debug, Error, PartialEq)]
pub enum Net3dError {
    #[error("input shape {found:?} does not match model input {expected:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("training set is empty")]
    EmptyDataset,
    #[error("label {0} is out of range")]
    LabelOutOfRange(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("loss became non-finite in epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub class: usize,
    pub probabilities: Vec<f64>,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl<F: Real> Net<F> {
    pub fn predict(&self, input: &Tensor<F>) -> Result<Prediction, Net3dError> {
        let logits: Vec<f64> = self.forward(input)?.iter().map(|v| v.to_f64()).collect();
        Ok(prediction_from_logits(&logits))
    }

    pub fn predict_volume(&self, volume: &HeatmapVolume) -> Result<Prediction, Net3dError> {
        self.predict(&Tensor::from(volume))
    }
}

pub fn prediction_from_logits(logits: &[f64]) -> Prediction {
    let probabilities = softmax(logits);
    Prediction {
        class: argmax(&probabilities),
        probabilities,
    }
}

impl<F: Real> From<(&HeatmapVolume, usize)> for Sample<F> {
    fn from((volume, label): (&HeatmapVolume, usize)) -> Self {
        Sample {
            input: Tensor::from(volume),
            label,
        }
    }
}
