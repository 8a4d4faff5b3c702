//! Training loops and the iterative filtering pipeline.

mod infer;
mod pretrain;
mod regress;

pub use infer::{
    apply_regressor, encode_cloud, filter_cloud, infer_point, lrma_update, taubin_inflate,
    EncodedPatch, FilterOutcome, InferenceConfig, PointEstimate,
};
pub use pretrain::{pretrain_encoder, PretrainConfig, PretrainOutcome};
pub use regress::{train_regressor, RegressOutcome, RegressTrainConfig, TrainingSet};

use std::path::Path;

use crate::error::Result;
use crate::net::{EncoderWeights, RegressorWeights, WeightBundle};

/// A frozen encoder with its trained regressor.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: EncoderWeights,
    pub regressor: RegressorWeights,
}

impl Model {
    pub fn to_bundle(&self) -> WeightBundle {
        WeightBundle::new(vec![self.encoder.to_document(), self.regressor.to_document()])
    }

    pub fn from_bundle(bundle: &WeightBundle) -> Result<Self> {
        Ok(Self {
            encoder: bundle.encoder()?,
            regressor: bundle.regressor()?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_bundle().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bundle(&WeightBundle::load(path)?)
    }
}

/// Streams for the different random draws of one run.
pub(crate) mod stream {
    pub const SHUFFLE: u64 = 0x5348;
    pub const PAIR: u64 = 0x5041;
    pub const SAMPLE: u64 = 0x534d;
    pub const SUBSET: u64 = 0x5355;
    pub const PATCH: u64 = 0x5054;
    pub const INIT: u64 = 0x494e;
}
