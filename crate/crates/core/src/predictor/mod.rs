//! Per-ray regression of lumen radius and wall width from a polar patch.

pub mod cnn;
pub mod dataset;
pub mod gradcheck;
pub mod oracle;
pub mod train;
pub mod weights;

use serde::{Deserialize, Serialize};

pub use cnn::{Activation, CnnConfig, InputNorm, Network, PredictMode};
pub use dataset::{build_samples, DatasetConfig, Slices};
pub use gradcheck::{grad_check, grad_check_with, GradCheckConfig, GradCheckReport};
pub use oracle::{oracle_predict, OracleThresholds};
pub use train::{evaluate, train, write_training_log, EpochLog, Sample, TrainConfig, TrainOutcome};
pub use weights::{decode_weights, encode_weights, read_weights, write_weights};

use crate::error::{Error, Result};
use crate::phantom::IntensityModel;
use crate::polar::{ContourPair, PolarPatch};
use crate::volume::Rescale;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Oracle,
    #[default]
    Cnn,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictorConfig {
    pub kind: PredictorKind,
    pub cnn: CnnConfig,
}

/// A ready-to-use predictor. The oracle is deterministic and ignores dropout seeds.
#[derive(Debug, Clone, Copy)]
pub enum Predictor<'a> {
    Oracle(OracleThresholds),
    Cnn(Option<&'a Network<f32>>),
}

impl Predictor<'_> {
    pub fn predict(&self, patch: &PolarPatch<f32>, mode: PredictMode) -> Result<ContourPair<f64>> {
        match self {
            Predictor::Oracle(th) => oracle_predict(patch, th).map(|c| c.cast()),
            Predictor::Cnn(None) => Err(Error::UntrainedModel),
            Predictor::Cnn(Some(net)) => net.predict(patch, mode).map(|c| c.cast()),
        }
    }
}

/// A predictor before it is bound to one volume's intensity rescaling.
#[derive(Debug, Clone, Copy)]
pub enum Model<'a> {
    /// Oracle thresholds derived from the phantom intensity means.
    Oracle(IntensityModel),
    Cnn(Option<&'a Network<f32>>),
}

impl<'a> Model<'a> {
    pub fn bind(&self, rescale: &Rescale) -> Predictor<'a> {
        match *self {
            Model::Oracle(im) => Predictor::Oracle(OracleThresholds::from_intensity(&im, rescale)),
            Model::Cnn(net) => Predictor::Cnn(net),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polar::{PolarCenter, PATCH_SHAPE};

    #[test]
    fn untrained_and_mismatched_inputs() {
        let patch = PolarPatch::from_raw(PolarCenter::new(0.0, 0.0, 3), PATCH_SHAPE, vec![0.0; 31 * 127 * 7]).unwrap();
        let err = Predictor::Cnn(None).predict(&patch, PredictMode::Deterministic).unwrap_err();
        assert!(matches!(err, Error::UntrainedModel));
        let net = Network::canonical(&CnnConfig::default()).unwrap();
        let small = PolarPatch::from_raw(PolarCenter::new(0.0, 0.0, 3), [31, 100, 7], vec![0.0; 31 * 100 * 7]).unwrap();
        let err = Predictor::Cnn(Some(&net)).predict(&small, PredictMode::Deterministic).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }
}
