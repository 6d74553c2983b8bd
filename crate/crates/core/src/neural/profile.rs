use serde::{Deserialize, Serialize};

use super::optim::AdamConfig;
use super::train::{ClassWeights, LossKind, PosWeight, Sampler, Selection, TrainConfig};
use super::{MlpSpec, OutputHead, StepDecay};
use crate::error::Result;

/// Architecture and training settings, independent of the input width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub hidden: Vec<usize>,
    /// One rate per hidden layer.
    pub dropout: Vec<f64>,
    pub batch_norm: bool,
    pub output: OutputHead,
    #[serde(default)]
    pub label_smoothing: f64,
    pub train: TrainConfig,
}

impl Profile {
    pub fn spec(&self, input: usize) -> Result<MlpSpec> {
        let mut spec = MlpSpec::new(input, &self.hidden, self.output, 0.0, self.batch_norm);
        spec.dropout = self.dropout.clone();
        spec.label_smoothing = self.label_smoothing;
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self
    }

    /// Tabular classifier: `[in, 256, 128, 64, 1]`, dropout 0.3 on the first
    /// two hidden layers, class-weighted cross-entropy, 50 epochs.
    pub fn ehr() -> Profile {
        Profile {
            hidden: vec![256, 128, 64],
            dropout: vec![0.3, 0.3, 0.0],
            batch_norm: true,
            output: OutputHead::SigmoidBinary,
            label_smoothing: 0.0,
            train: TrainConfig {
                loss: LossKind::WeightedCrossEntropy { class_weights: ClassWeights::Balanced },
                optimizer: AdamConfig::default(),
                scheduler: Some(StepDecay::default()),
                epochs: 50,
                batch_size: 32,
                early_stopping_patience: None,
                sampler: Sampler::Plain,
                feature_noise_sigma: 0.0,
                selection: Selection::ValBalancedAccuracy,
                seed: 0,
            },
        }
    }

    /// Scan-level multiple-instance head: `[512, 256, 128, 1]`, BCE with
    /// pos_weight, balanced sampling, feature noise, 70 epochs with early stopping.
    pub fn radiology_mil() -> Profile {
        Profile {
            hidden: vec![256, 128],
            dropout: vec![0.3, 0.3],
            batch_norm: true,
            output: OutputHead::SigmoidBinary,
            label_smoothing: 0.0,
            train: TrainConfig {
                loss: LossKind::BcePosWeight { pos_weight: PosWeight::Auto },
                optimizer: AdamConfig::default(),
                scheduler: Some(StepDecay::default()),
                epochs: 70,
                batch_size: 32,
                early_stopping_patience: Some(10),
                sampler: Sampler::BalancedWeighted,
                feature_noise_sigma: 0.01,
                selection: Selection::ValLoss,
                seed: 0,
            },
        }
    }

    /// Unimodal baseline and early-fusion classifier: two hidden layers,
    /// softmax head with label smoothing, selection on balanced accuracy.
    pub fn baseline() -> Profile {
        Profile {
            hidden: vec![128, 64],
            dropout: vec![0.2, 0.2],
            batch_norm: true,
            output: OutputHead::Softmax,
            label_smoothing: 0.05,
            train: TrainConfig {
                loss: LossKind::WeightedCrossEntropy { class_weights: ClassWeights::Balanced },
                optimizer: AdamConfig::default(),
                scheduler: Some(StepDecay::default()),
                epochs: 50,
                batch_size: 32,
                early_stopping_patience: None,
                sampler: Sampler::Plain,
                feature_noise_sigma: 0.0,
                selection: Selection::ValBalancedAccuracy,
                seed: 0,
            },
        }
    }

    /// Late-fusion head over modality probabilities plus presence bits.
    pub fn late_head() -> Profile {
        Profile {
            hidden: vec![8],
            dropout: vec![0.0],
            batch_norm: false,
            output: OutputHead::SigmoidBinary,
            label_smoothing: 0.0,
            train: TrainConfig {
                loss: LossKind::WeightedCrossEntropy { class_weights: ClassWeights::Balanced },
                optimizer: AdamConfig { lr: 1e-2, ..AdamConfig::default() },
                scheduler: None,
                epochs: 100,
                batch_size: 32,
                early_stopping_patience: None,
                sampler: Sampler::Plain,
                feature_noise_sigma: 0.0,
                selection: Selection::ValBalancedAccuracy,
                seed: 0,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_shapes() {
        assert_eq!(Profile::ehr().spec(20).unwrap().layer_sizes, vec![20, 256, 128, 64, 1]);
        assert_eq!(Profile::radiology_mil().spec(512).unwrap().layer_sizes, vec![512, 256, 128, 1]);
        assert_eq!(Profile::baseline().spec(64).unwrap().hidden_count(), 2);
        assert_eq!(Profile::late_head().spec(6).unwrap().layer_sizes, vec![6, 8, 1]);
        assert_eq!(Profile::ehr().train.epochs, 50);
        assert_eq!(Profile::radiology_mil().train.epochs, 70);
    }
}
