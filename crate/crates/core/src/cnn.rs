//! The convolutional feature extractor and its training loop.
//!
//! Layer stack for a `1 x H x W` image:
//!
//! ```text
//! conv k1 (c1) -> maxpool 2x2 -> conv k2 (c2) -> maxpool 2x2 -> ReLU
//!   -> conv 1x1 (d) -> ReLU -> [dropout] -> global max pool -> [dropout]
//!   -> features (d) -> dense head -> logits (n_classes)
//! ```
//!
//! Bracketed stages only run in training. With the default architecture
//! (48x64 input, 32 and 64 kernels of 5x5, d = 128) the spatial path is
//! 44x60 -> 22x30 -> 18x26 -> 9x13.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::adam::{adam_step, AdamConfig, AdamState};
use crate::kernels::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, dropout, dropout_backward,
    global_maxpool_forward, maxpool2x2_forward, maxpool_backward, relu, relu_backward,
    softmax_cross_entropy, DropoutMask, PoolIndices,
};
use crate::features::FeatureMatrix;
use crate::rng::{derive_seed, Rng};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum CnnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid architecture: {0}")]
    Architecture(String),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training set is empty")]
    EmptyDataset,
    #[error("{images} images but {labels} labels")]
    LabelCount { images: usize, labels: usize },
    #[error("label {label} at index {index} is outside 0..{n_classes}")]
    Label {
        index: usize,
        label: usize,
        n_classes: usize,
    },
    #[error("non-finite loss in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
}

pub type Result<T> = std::result::Result<T, CnnError>;

/// Layer dimensions. [`Architecture::default`] is the full-size network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub input_height: usize,
    pub input_width: usize,
    pub conv1_channels: usize,
    pub conv1_kernel: usize,
    pub conv2_channels: usize,
    pub conv2_kernel: usize,
    pub dense_width: usize,
    pub n_classes: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            input_height: 48,
            input_width: 64,
            conv1_channels: 32,
            conv1_kernel: 5,
            conv2_channels: 64,
            conv2_kernel: 5,
            dense_width: 128,
            n_classes: crate::NUM_CLASSES,
        }
    }
}

pub const PARAM_NAMES: [&str; 8] = [
    "conv1.weight",
    "conv1.bias",
    "conv2.weight",
    "conv2.bias",
    "conv1x1.weight",
    "conv1x1.bias",
    "head.weight",
    "head.bias",
];

const CONV1_W: usize = 0;
const CONV1_B: usize = 1;
const CONV2_W: usize = 2;
const CONV2_B: usize = 3;
const CONV3_W: usize = 4;
const CONV3_B: usize = 5;
const HEAD_W: usize = 6;
const HEAD_B: usize = 7;

/// The head starts near zero so an untrained model predicts close to
/// uniformly (loss ~ ln 10) instead of amplifying the unbounded max-pooled
/// features into large random logits.
pub const HEAD_INIT_STD: f32 = 0.01;

impl Architecture {
    /// Spatial dims after each stage: conv1, pool1, conv2, pool2.
    pub fn stage_dims(&self) -> Result<[(usize, usize); 4]> {
        let conv = |(h, w): (usize, usize), k: usize, name: &str| {
            if k == 0 || h < k || w < k {
                return Err(CnnError::Architecture(format!("{name}: kernel {k} does not fit {h}x{w}")));
            }
            Ok((h - k + 1, w - k + 1))
        };
        let pool = |(h, w): (usize, usize), name: &str| {
            if h % 2 != 0 || w % 2 != 0 {
                return Err(CnnError::Architecture(format!("{name}: {h}x{w} is not divisible by 2")));
            }
            Ok((h / 2, w / 2))
        };
        let c1 = conv((self.input_height, self.input_width), self.conv1_kernel, "conv1")?;
        let p1 = pool(c1, "pool1")?;
        let c2 = conv(p1, self.conv2_kernel, "conv2")?;
        let p2 = pool(c2, "pool2")?;
        Ok([c1, p1, c2, p2])
    }

    pub fn param_shapes(&self) -> [Vec<usize>; 8] {
        let (c1, c2, d) = (self.conv1_channels, self.conv2_channels, self.dense_width);
        [
            vec![c1, 1, self.conv1_kernel, self.conv1_kernel],
            vec![c1],
            vec![c2, c1, self.conv2_kernel, self.conv2_kernel],
            vec![c2],
            vec![d, c2, 1, 1],
            vec![d],
            vec![self.n_classes, d],
            vec![self.n_classes],
        ]
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|s| s.iter().product::<usize>()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.conv1_channels,
            self.conv2_channels,
            self.dense_width,
            self.n_classes,
        ];
        if dims.contains(&0) {
            return Err(CnnError::Architecture("channel counts must be positive".into()));
        }
        self.stage_dims().map(|_| ())
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [1, self.input_height, self.input_width]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub dropout: f32,
    pub seed: u64,
    /// Reduce per-image gradients in fixed image order so results do not
    /// depend on the thread count.
    pub strict: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 128,
            adam: AdamConfig::default(),
            dropout: 0.5,
            seed: 0,
            strict: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let a = &self.adam;
        let bad = if self.epochs == 0 {
            Some("epochs must be positive")
        } else if self.batch_size == 0 {
            Some("batch_size must be positive")
        } else if !(a.alpha > 0.0 && a.epsilon > 0.0) {
            Some("alpha and epsilon must be positive")
        } else if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            Some("beta1 and beta2 must lie in [0, 1)")
        } else if !(0.0..1.0).contains(&self.dropout) {
            Some("dropout must lie in [0, 1)")
        } else {
            None
        };
        match bad {
            Some(msg) => Err(CnnError::Config(msg.into())),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Inference-mode accuracy on the training set after the epoch.
    pub train_accuracy: f64,
}

/// Whether a forward pass is stochastic.
pub enum Mode<'a> {
    Inference,
    Training(&'a mut Rng),
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    pub logits: Tensor,
    pub features: Tensor,
}

/// Intermediate values kept for the backward pass.
struct Cache {
    input: Tensor,
    pool1: Tensor,
    pool1_idx: PoolIndices,
    pool2: Tensor,
    pool2_idx: PoolIndices,
    conv3: Tensor,
    gmp_idx: PoolIndices,
    map_mask: DropoutMask,
    feature_mask: DropoutMask,
    features: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriveNetCnn {
    arch: Architecture,
    params: Vec<Tensor>,
    pub dropout_rate: f32,
    pub seed: u64,
}

impl DriveNetCnn {
    /// He-initialized weights (`N(0, 2 / fan_in)`) and zero biases.
    pub fn build(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = Rng::new(seed);
        let params = arch
            .param_shapes()
            .iter()
            .enumerate()
            .map(|(i, shape)| {
                if i % 2 == 1 {
                    return Tensor::zeros(shape);
                }
                let fan_in: usize = shape[1..].iter().product();
                let std = if i == HEAD_W { HEAD_INIT_STD } else { (2.0 / fan_in as f32).sqrt() };
                let normal = Normal::new(0.0f32, std).expect("positive std");
                Tensor::from_fn(shape, |_| normal.sample(&mut rng))
            })
            .collect();
        Ok(DriveNetCnn {
            arch,
            params,
            dropout_rate: 0.5,
            seed,
        })
    }

    /// Rebuilds a model from stored parameters, checking every shape.
    pub fn from_params(arch: Architecture, params: Vec<Tensor>, dropout_rate: f32, seed: u64) -> Result<Self> {
        arch.validate()?;
        let shapes = arch.param_shapes();
        if params.len() != shapes.len() {
            return Err(CnnError::Architecture(format!(
                "expected {} parameter tensors, got {}",
                shapes.len(),
                params.len()
            )));
        }
        for ((p, s), name) in params.iter().zip(&shapes).zip(PARAM_NAMES) {
            if p.shape() != s.as_slice() {
                return Err(CnnError::Architecture(format!(
                    "{name}: expected shape {s:?}, got {:?}",
                    p.shape()
                )));
            }
        }
        Ok(DriveNetCnn {
            arch,
            params,
            dropout_rate,
            seed,
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn feature_width(&self) -> usize {
        self.arch.dense_width
    }

    fn check_input(&self, image: &Tensor) -> Result<()> {
        let want = self.arch.input_shape();
        if image.shape() != want {
            return Err(TensorError::mismatch("DriveNetCnn::forward", format!("{want:?}"), format!("{:?}", image.shape())).into());
        }
        Ok(())
    }

    fn forward_cached(&self, image: &Tensor, mut mode: Mode<'_>) -> Result<(Tensor, Cache)> {
        self.check_input(image)?;
        let p = &self.params;
        let a1 = conv2d_forward(image, &p[CONV1_W], &p[CONV1_B])?;
        let (pool1, pool1_idx) = maxpool2x2_forward(&a1)?;
        let a2 = conv2d_forward(&pool1, &p[CONV2_W], &p[CONV2_B])?;
        let (pool2, pool2_idx) = maxpool2x2_forward(&a2)?;
        let r2 = relu(&pool2);
        let conv3 = conv2d_forward(&r2, &p[CONV3_W], &p[CONV3_B])?;
        let r3 = relu(&conv3);

        let (map, map_mask, gmp_idx, features, feature_mask);
        match &mut mode {
            Mode::Inference => {
                (features, gmp_idx) = global_maxpool_forward(&r3)?;
                map_mask = DropoutMask::all_keep(r3.len());
                feature_mask = DropoutMask::all_keep(features.len());
            }
            Mode::Training(rng) => {
                (map, map_mask) = dropout(&r3, self.dropout_rate, rng, true)?;
                let (pooled, idx) = global_maxpool_forward(&map)?;
                gmp_idx = idx;
                (features, feature_mask) = dropout(&pooled, self.dropout_rate, rng, true)?;
            }
        }
        let logits = dense_forward(&features, &p[HEAD_W], &p[HEAD_B])?;
        let cache = Cache {
            input: image.clone(),
            pool1,
            pool1_idx,
            pool2,
            pool2_idx,
            conv3,
            gmp_idx,
            map_mask,
            feature_mask,
            features,
        };
        Ok((logits, cache))
    }

    pub fn forward(&self, image: &Tensor, mode: Mode<'_>) -> Result<ForwardOutput> {
        let (logits, cache) = self.forward_cached(image, mode)?;
        Ok(ForwardOutput {
            logits,
            features: cache.features,
        })
    }

    /// Applies the dense head to a feature vector.
    pub fn head(&self, features: &Tensor) -> Result<Tensor> {
        Ok(dense_forward(features, &self.params[HEAD_W], &self.params[HEAD_B])?)
    }

    fn backward(&self, cache: &Cache, grad_logits: &Tensor) -> Result<Vec<Tensor>> {
        let p = &self.params;
        let head = dense_backward(&cache.features, &p[HEAD_W], grad_logits)?;
        let g = dropout_backward(&cache.feature_mask, &head.input)?;
        let g = maxpool_backward(&cache.gmp_idx, &g)?;
        let g = dropout_backward(&cache.map_mask, &g)?;
        let g = relu_backward(&cache.conv3, &g)?;
        let r2 = relu(&cache.pool2);
        let c3 = conv2d_backward(&r2, &p[CONV3_W], &g)?;
        let g = relu_backward(&cache.pool2, &c3.input)?;
        let g = maxpool_backward(&cache.pool2_idx, &g)?;
        let c2 = conv2d_backward(&cache.pool1, &p[CONV2_W], &g)?;
        let g = maxpool_backward(&cache.pool1_idx, &c2.input)?;
        let c1 = conv2d_backward(&cache.input, &p[CONV1_W], &g)?;
        Ok(vec![
            c1.kernels, c1.bias, c2.kernels, c2.bias, c3.kernels, c3.bias, head.weights, head.bias,
        ])
    }

    /// Softmax cross-entropy of one image and its gradient with respect to
    /// every parameter tensor (ordered as [`PARAM_NAMES`]).
    pub fn loss_and_grad(&self, image: &Tensor, label: usize, mode: Mode<'_>) -> Result<(f32, Tensor, Vec<Tensor>)> {
        let (logits, cache) = self.forward_cached(image, mode)?;
        let (loss, grad_logits) = softmax_cross_entropy(&logits, label)?;
        let grads = self.backward(&cache, &grad_logits)?;
        Ok((loss, logits, grads))
    }

    pub fn predict(&self, image: &Tensor) -> Result<usize> {
        Ok(self.forward(image, Mode::Inference)?.logits.argmax())
    }

    /// Inference-mode features, one row per image.
    pub fn extract_features(&self, images: &[&Tensor]) -> Result<FeatureMatrix> {
        let rows: Vec<Tensor> = images
            .par_iter()
            .map(|img| self.forward(img, Mode::Inference).map(|o| o.features))
            .collect::<Result<_>>()?;
        let mut data = Vec::with_capacity(rows.len() * self.feature_width());
        for r in &rows {
            data.extend_from_slice(r.data());
        }
        Ok(FeatureMatrix::new(rows.len(), self.feature_width(), data))
    }

    /// Inference-mode logits, one row per image.
    pub fn extract_logits(&self, images: &[&Tensor]) -> Result<FeatureMatrix> {
        let rows: Vec<Tensor> = images
            .par_iter()
            .map(|img| self.forward(img, Mode::Inference).map(|o| o.logits))
            .collect::<Result<_>>()?;
        let data = rows.iter().flat_map(|r| r.data().iter().copied()).collect();
        Ok(FeatureMatrix::new(rows.len(), self.arch.n_classes, data))
    }

    /// Mini-batch Adam on softmax cross-entropy.
    ///
    /// Each epoch reshuffles (seeded) and walks the batches in order; the
    /// final partial batch is trained. Every image in a batch gets its own
    /// dropout stream keyed by (seed, epoch, batch, position).
    pub fn train(&mut self, images: &[&Tensor], labels: &[usize], config: &TrainConfig) -> Result<Vec<EpochStats>> {
        config.validate()?;
        if images.is_empty() {
            return Err(CnnError::EmptyDataset);
        }
        if images.len() != labels.len() {
            return Err(CnnError::LabelCount {
                images: images.len(),
                labels: labels.len(),
            });
        }
        for (index, &label) in labels.iter().enumerate() {
            if label >= self.arch.n_classes {
                return Err(CnnError::Label {
                    index,
                    label,
                    n_classes: self.arch.n_classes,
                });
            }
        }
        for img in images {
            self.check_input(img)?;
        }

        self.dropout_rate = config.dropout;
        let mut adam = AdamState::new(config.adam, &self.params);
        let mut order: Vec<usize> = (0..images.len()).collect();
        let mut shuffle_rng = Rng::derived(config.seed, 0);
        let dropout_seed = derive_seed(config.seed, 1);
        let mut log = Vec::with_capacity(config.epochs);

        for epoch in 0..config.epochs {
            order.shuffle(&mut shuffle_rng);
            let epoch_seed = derive_seed(dropout_seed, epoch as u64);
            let mut loss_sum = 0.0f64;
            for (batch, chunk) in order.chunks(config.batch_size).enumerate() {
                let batch_seed = derive_seed(epoch_seed, batch as u64);
                let per_image = |(pos, &idx): (usize, &usize)| {
                    let mut rng = Rng::derived(batch_seed, pos as u64);
                    self.loss_and_grad(images[idx], labels[idx], Mode::Training(&mut rng))
                        .map(|(loss, _, grads)| (loss as f64, grads))
                };
                let (loss, mut grads) = if config.strict {
                    reduce_ordered(chunk.par_iter().enumerate().map(per_image).collect::<Result<Vec<_>>>()?)
                } else {
                    chunk
                        .par_iter()
                        .enumerate()
                        .map(per_image)
                        .try_reduce_with(|a, b| Ok(sum_pair(a, b)))
                        .expect("non-empty batch")?
                };
                if !loss.is_finite() {
                    return Err(CnnError::NonFiniteLoss { epoch, batch });
                }
                loss_sum += loss;
                let scale = 1.0 / chunk.len() as f32;
                grads.iter_mut().for_each(|g| g.scale(scale));
                adam_step(&mut self.params, &grads, &mut adam)?;
            }

            let correct = images
                .par_iter()
                .zip(labels.par_iter())
                .map(|(img, &label)| self.predict(img).map(|p| usize::from(p == label)))
                .try_reduce(|| 0, |a, b| Ok(a + b))?;
            log.push(EpochStats {
                epoch: epoch + 1,
                mean_loss: loss_sum / images.len() as f64,
                train_accuracy: correct as f64 / images.len() as f64,
            });
        }
        Ok(log)
    }
}

type LossGrads = (f64, Vec<Tensor>);

fn sum_pair(mut a: LossGrads, b: LossGrads) -> LossGrads {
    a.0 += b.0;
    for (x, y) in a.1.iter_mut().zip(&b.1) {
        x.add_assign(y).expect("gradient shapes agree");
    }
    a
}

fn reduce_ordered(items: Vec<LossGrads>) -> LossGrads {
    let mut it = items.into_iter();
    let first = it.next().expect("non-empty batch");
    it.fold(first, sum_pair)
}
