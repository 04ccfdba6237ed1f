//! The two-stage classifier: a trained, frozen CNN whose feature vectors
//! feed a random forest.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::cnn::{Architecture, CnnError, DriveNetCnn, EpochStats, TrainConfig};
use crate::features::FeatureMatrix;
use crate::forest::{train_forest, ForestConfig, ForestError, Posterior, RandomForest};
use crate::rng::derive_seed;
use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum CascadeError {
    #[error("cnn stage: {0}")]
    Cnn(#[from] CnnError),
    #[error("forest stage: {0}")]
    Forest(#[from] ForestError),
    #[error("model is inconsistent: {0}")]
    Inconsistent(String),
}

pub type Result<T> = std::result::Result<T, CascadeError>;

/// Which CNN output the forest consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureMode {
    /// Post-ReLU dense-layer activations.
    #[default]
    Features,
    /// Class logits of the softmax head.
    Logits,
}

impl fmt::Display for FeatureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FeatureMode::Features => "features",
            FeatureMode::Logits => "logits",
        })
    }
}

impl FromStr for FeatureMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "features" => Ok(FeatureMode::Features),
            "logits" => Ok(FeatureMode::Logits),
            other => Err(format!("unknown feature mode {other:?} (expected features or logits)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeConfig {
    pub architecture: Architecture,
    pub train: TrainConfig,
    pub forest: ForestConfig,
    pub feature_mode: FeatureMode,
    /// Overrides the seeds in `train` and `forest`; see [`StageSeeds`].
    pub master_seed: u64,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            architecture: Architecture::default(),
            train: TrainConfig::default(),
            forest: ForestConfig::default(),
            feature_mode: FeatureMode::Features,
            master_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageSeeds {
    pub cnn_init: u64,
    pub cnn_train: u64,
    pub forest: u64,
}

impl StageSeeds {
    pub fn from_master(master: u64) -> Self {
        StageSeeds {
            cnn_init: derive_seed(master, 0),
            cnn_train: derive_seed(master, 1),
            forest: derive_seed(master, 2),
        }
    }
}

/// Everything needed to reproduce a model from its training data.
#[derive(Debug, Clone, PartialEq)]
pub struct Metadata {
    pub master_seed: u64,
    pub feature_mode: FeatureMode,
    pub train: TrainConfig,
    pub forest: ForestConfig,
    pub n_train_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriveNetModel {
    cnn: DriveNetCnn,
    forest: RandomForest,
    metadata: Metadata,
}

impl DriveNetModel {
    pub fn new(cnn: DriveNetCnn, forest: RandomForest, metadata: Metadata) -> Result<Self> {
        let width = match metadata.feature_mode {
            FeatureMode::Features => cnn.feature_width(),
            FeatureMode::Logits => cnn.architecture().n_classes,
        };
        if forest.feature_dim() != width {
            return Err(CascadeError::Inconsistent(format!(
                "forest expects {} inputs but the cnn provides {width} in {} mode",
                forest.feature_dim(),
                metadata.feature_mode
            )));
        }
        Ok(DriveNetModel { cnn, forest, metadata })
    }

    pub fn cnn(&self) -> &DriveNetCnn {
        &self.cnn
    }

    pub fn forest(&self) -> &RandomForest {
        &self.forest
    }

    pub fn metadata(&self) -> &Metadata {
        &self.metadata
    }

    /// The forest's input for each image.
    pub fn forest_inputs(&self, images: &[&Tensor]) -> Result<FeatureMatrix> {
        Ok(match self.metadata.feature_mode {
            FeatureMode::Features => self.cnn.extract_features(images)?,
            FeatureMode::Logits => self.cnn.extract_logits(images)?,
        })
    }

    pub fn predict(&self, image: &Tensor) -> Result<(usize, Posterior)> {
        let x = self.forest_inputs(&[image])?;
        Ok(self.forest.predict(x.row(0))?)
    }

    pub fn predict_batch(&self, images: &[&Tensor]) -> Result<Vec<(usize, Posterior)>> {
        let x = self.forest_inputs(images)?;
        (0..x.rows())
            .into_par_iter()
            .map(|i| self.forest.predict(x.row(i)).map_err(CascadeError::from))
            .collect()
    }
}

pub struct TrainedCascade {
    pub model: DriveNetModel,
    pub epochs: Vec<EpochStats>,
}

/// Trains the CNN, freezes it, extracts inference-mode forest inputs for
/// the training images and fits the forest on them.
pub fn train_cascade(images: &[&Tensor], labels: &[usize], config: &CascadeConfig) -> Result<TrainedCascade> {
    let seeds = StageSeeds::from_master(config.master_seed);
    let train = TrainConfig {
        seed: seeds.cnn_train,
        ..config.train.clone()
    };
    let forest_config = ForestConfig {
        seed: seeds.forest,
        ..config.forest
    };
    forest_config.validate()?;

    let mut cnn = DriveNetCnn::build(config.architecture, seeds.cnn_init)?;
    let epochs = cnn.train(images, labels, &train)?;
    let inputs = match config.feature_mode {
        FeatureMode::Features => cnn.extract_features(images)?,
        FeatureMode::Logits => cnn.extract_logits(images)?,
    };
    let forest = train_forest(&inputs, labels, &forest_config)?;
    let metadata = Metadata {
        master_seed: config.master_seed,
        feature_mode: config.feature_mode,
        train,
        forest: forest_config,
        n_train_samples: images.len(),
    };
    Ok(TrainedCascade {
        model: DriveNetModel::new(cnn, forest, metadata)?,
        epochs,
    })
}
