//! Strain regressor: a feed-forward network with two rectified hidden layers
//! and a linear output, trained by plain mini-batch gradient descent.
//!
//! Only the resistance features are standardised; the target passes through
//! unchanged, so predictions are in the units of the training target.

mod model;
mod persist;
mod train;

use thiserror::Error;

use crate::dataset::AlignedRecord;

pub use model::{Dense, Gradients, MlpModel, Normalizer};
pub use persist::{load_model, model_from_json, model_to_json, save_model, FORMAT_VERSION};
pub use train::{
    grid_search, train, BatchSize, GridOutcome, HyperGrid, TrainConfig, TrainReport, TrialSummary,
};

#[derive(Debug, Error)]
pub enum MlError {
    #[error("feature column {0} has zero variance")]
    DegenerateFeature(usize),
    #[error("need at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("expected {expected} features, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error("training loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid hyperparameters: {0}")]
    InvalidHyperparameters(String),
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u64),
    #[error("corrupt model file: {0}")]
    CorruptModelFile(String),
    #[error("model shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Feature rows with one scalar target each.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn new(features: Vec<Vec<f64>>, targets: Vec<f64>) -> Result<Self, MlError> {
        if features.len() != targets.len() {
            return Err(MlError::DimensionMismatch {
                expected: features.len(),
                found: targets.len(),
            });
        }
        let width = features.first().map_or(0, Vec::len);
        if let Some(row) = features.iter().find(|r| r.len() != width) {
            return Err(MlError::DimensionMismatch {
                expected: width,
                found: row.len(),
            });
        }
        Ok(Self { features, targets })
    }

    /// Resistances become features and strain the target. With `channels`
    /// set, every record must carry exactly that many resistances.
    pub fn from_records(records: &[AlignedRecord], channels: Option<usize>) -> Result<Self, MlError> {
        if let (Some(expected), Some(r)) = (channels, records.first()) {
            if r.resistances.len() != expected {
                return Err(MlError::DimensionMismatch {
                    expected,
                    found: r.resistances.len(),
                });
            }
        }
        Self::new(
            records.iter().map(|r| r.resistances.clone()).collect(),
            records.iter().map(|r| r.strain).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn width(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub mae: f64,
}

pub fn evaluate(model: &MlpModel, test: &Dataset) -> Result<Metrics, MlError> {
    if test.is_empty() {
        return Err(MlError::EmptyTestSet);
    }
    let mut sq = 0.0;
    let mut abs = 0.0;
    for (x, y) in test.features.iter().zip(&test.targets) {
        let r = model.forward(x)? - y;
        sq += r * r;
        abs += r.abs();
    }
    let n = test.len() as f64;
    Ok(Metrics { mse: sq / n, mae: abs / n })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_model(c: f64) -> MlpModel {
        let mut m = MlpModel::from_parts(
            [
                Dense::zeros(1, 1),
                Dense::zeros(1, 1),
                Dense::zeros(1, 1),
            ],
            Normalizer::identity(1),
        )
        .unwrap();
        m.layers_mut()[2].biases[0] = c;
        m
    }

    #[test]
    fn evaluate_examples() {
        let m = constant_model(2.0);
        let d = Dataset::new(vec![vec![0.0], vec![0.0]], vec![2.0, 2.0]).unwrap();
        let e = evaluate(&m, &d).unwrap();
        assert_eq!((e.mse, e.mae), (0.0, 0.0));
        let d = Dataset::new(vec![vec![0.0], vec![5.0]], vec![1.0, 3.0]).unwrap();
        let e = evaluate(&m, &d).unwrap();
        assert_eq!((e.mse, e.mae), (1.0, 1.0));

        let m = constant_model(0.0);
        let d = Dataset::new(vec![vec![0.0], vec![0.0]], vec![-0.1, 0.3]).unwrap();
        let e = evaluate(&m, &d).unwrap();
        assert!((e.mse - 0.05).abs() < 1e-15);
        assert!((e.mae - 0.2).abs() < 1e-15);
        assert!(matches!(evaluate(&m, &Dataset::default()), Err(MlError::EmptyTestSet)));
    }

    #[test]
    fn records_with_wrong_channel_count() {
        let recs = vec![AlignedRecord { time: 0.0, strain: 0.0, t: 0.0, resistances: vec![1.0, 2.0] }];
        assert!(Dataset::from_records(&recs, Some(2)).is_ok());
        assert!(matches!(
            Dataset::from_records(&recs, Some(8)),
            Err(MlError::DimensionMismatch { expected: 8, found: 2 })
        ));
    }
}
