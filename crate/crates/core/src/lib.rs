pub mod adam;
pub mod cascade;
pub mod cnn;
pub mod container;
pub mod dataset;
pub mod features;
pub mod forest;
pub mod kernels;
pub mod metrics;
pub mod rng;
pub mod tensor;

pub use features::FeatureMatrix;

/// Number of image classes (c0 through c9).
pub const NUM_CLASSES: usize = 10;
