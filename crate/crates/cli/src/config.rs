//! Flat TOML run configuration. Every hyperparameter is optional and falls
//! back to the library default; `manifest`, `output_dir` and `seed` are
//! required. Relative paths are resolved against the config file's
//! directory.

use std::path::{Path, PathBuf};

use drivenet::adam::AdamConfig;
use drivenet::cascade::{CascadeConfig, FeatureMode};
use drivenet::cnn::{Architecture, TrainConfig};
use drivenet::forest::ForestConfig;
use serde::Deserialize;

use crate::CliError;

pub const DEFAULT_K: usize = 5;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    manifest: Option<PathBuf>,
    output_dir: Option<PathBuf>,
    seed: Option<u64>,
    k: Option<usize>,
    strict: Option<bool>,
    feature_mode: Option<String>,

    epochs: Option<usize>,
    batch_size: Option<usize>,
    alpha: Option<f32>,
    beta1: Option<f32>,
    beta2: Option<f32>,
    epsilon: Option<f32>,
    dropout: Option<f32>,

    conv1_channels: Option<usize>,
    conv1_kernel: Option<usize>,
    conv2_channels: Option<usize>,
    conv2_kernel: Option<usize>,
    dense_width: Option<usize>,

    n_trees: Option<usize>,
    max_depth: Option<usize>,
    n_candidate_tests: Option<usize>,
    n_features_per_test: Option<usize>,
    min_gain: Option<f64>,
    min_samples_leaf: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub k: usize,
    pub cascade: CascadeConfig,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| invalid(format!("config: {e}")))?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let manifest = resolve(raw.manifest.ok_or_else(|| invalid("config: `manifest` is required"))?);
        let output_dir = resolve(raw.output_dir.ok_or_else(|| invalid("config: `output_dir` is required"))?);
        let seed = raw.seed.ok_or_else(|| invalid("config: `seed` is required"))?;

        let dt = TrainConfig::default();
        let da = AdamConfig::default();
        let train = TrainConfig {
            epochs: raw.epochs.unwrap_or(dt.epochs),
            batch_size: raw.batch_size.unwrap_or(dt.batch_size),
            adam: AdamConfig {
                alpha: raw.alpha.unwrap_or(da.alpha),
                beta1: raw.beta1.unwrap_or(da.beta1),
                beta2: raw.beta2.unwrap_or(da.beta2),
                epsilon: raw.epsilon.unwrap_or(da.epsilon),
            },
            dropout: raw.dropout.unwrap_or(dt.dropout),
            seed: 0,
            strict: raw.strict.unwrap_or(dt.strict),
        };
        let darch = Architecture::default();
        let architecture = Architecture {
            conv1_channels: raw.conv1_channels.unwrap_or(darch.conv1_channels),
            conv1_kernel: raw.conv1_kernel.unwrap_or(darch.conv1_kernel),
            conv2_channels: raw.conv2_channels.unwrap_or(darch.conv2_channels),
            conv2_kernel: raw.conv2_kernel.unwrap_or(darch.conv2_kernel),
            dense_width: raw.dense_width.unwrap_or(darch.dense_width),
            ..darch
        };
        let df = ForestConfig::default();
        let forest = ForestConfig {
            n_trees: raw.n_trees.unwrap_or(df.n_trees),
            max_depth: raw.max_depth.unwrap_or(df.max_depth),
            n_candidate_tests: raw.n_candidate_tests.unwrap_or(df.n_candidate_tests),
            n_features_per_test: raw.n_features_per_test.unwrap_or(df.n_features_per_test),
            min_gain: raw.min_gain.unwrap_or(df.min_gain),
            min_samples_leaf: raw.min_samples_leaf.unwrap_or(df.min_samples_leaf),
            seed: 0,
        };
        let feature_mode = match raw.feature_mode {
            Some(s) => s.parse::<FeatureMode>().map_err(|e| invalid(format!("config: {e}")))?,
            None => FeatureMode::default(),
        };

        train.validate().map_err(|e| invalid(format!("config: {e}")))?;
        architecture.validate().map_err(|e| invalid(format!("config: {e}")))?;
        forest.validate().map_err(|e| invalid(format!("config: {e}")))?;
        let input_width = match feature_mode {
            FeatureMode::Features => architecture.dense_width,
            FeatureMode::Logits => architecture.n_classes,
        };
        if forest.n_features_per_test > input_width {
            return Err(invalid(format!(
                "config: n_features_per_test = {} exceeds the {input_width} forest inputs",
                forest.n_features_per_test
            )));
        }
        let k = raw.k.unwrap_or(DEFAULT_K);
        if k < 2 {
            return Err(invalid(format!("config: k must be at least 2, got {k}")));
        }

        Ok(RunConfig {
            manifest,
            output_dir,
            seed,
            k,
            cascade: CascadeConfig {
                architecture,
                train,
                forest,
                feature_mode,
                master_seed: seed,
            },
        })
    }

    /// One `key=value` line of the settings that define a run.
    pub fn header(&self) -> String {
        let c = &self.cascade;
        let (t, f, a) = (&c.train, &c.forest, &c.architecture);
        format!(
            "seed={} alpha={} beta1={} beta2={} epsilon={} batch_size={} epochs={} dropout={} strict={} \
             conv1_channels={} conv1_kernel={} conv2_channels={} conv2_kernel={} dense_width={} \
             n_trees={} max_depth={} n_candidate_tests={} n_features_per_test={} min_gain={} \
             min_samples_leaf={} feature_mode={}",
            self.seed,
            t.adam.alpha,
            t.adam.beta1,
            t.adam.beta2,
            t.adam.epsilon,
            t.batch_size,
            t.epochs,
            t.dropout,
            t.strict,
            a.conv1_channels,
            a.conv1_kernel,
            a.conv2_channels,
            a.conv2_kernel,
            a.dense_width,
            f.n_trees,
            f.max_depth,
            f.n_candidate_tests,
            f.n_features_per_test,
            f.min_gain,
            f.min_samples_leaf,
            c.feature_mode
        )
    }
}
