//! Image ingestion, manifests, fold plans and the synthetic fixture.
//!
//! Camera frames are 640x480 grayscale (or RGB reduced to luma) and are
//! block-averaged by a factor of 10 into the 1x48x64 tensors the network
//! consumes.

mod kfold;
mod manifest;
pub mod netpbm;
mod synth;

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::tensor::Tensor;

pub use kfold::{kfold_split, FoldPlan};
pub use manifest::{format_label, parse_label, DatasetManifest, ManifestRecord};
pub use synth::{synth_dataset, write_synth_dataset, SynthSpec};

pub const FRAME_WIDTH: usize = 640;
pub const FRAME_HEIGHT: usize = 480;
pub const DOWNSCALE: usize = 10;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error("truncated image: {0}")]
    Truncated(String),
    #[error("malformed image header: {0}")]
    Malformed(String),
    #[error("image is {got_width}x{got_height}, expected {want_width}x{want_height}")]
    Dimensions {
        want_width: usize,
        want_height: usize,
        got_width: usize,
        got_height: usize,
    },
    #[error("{height}x{width} is not divisible by {factor}")]
    Indivisible { height: usize, width: usize, factor: usize },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("invalid label {0:?}, expected c0..c9")]
    Label(String),
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: Box<DatasetError>,
    },
    #[error("{0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// A network-ready image with its class.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `1 x 48 x 64`, values in `[0, 1]`.
    pub image: Tensor,
    pub label: usize,
    pub source: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Decodes a 640x480 PGM/PPM into a `1 x 480 x 640` tensor in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    decode_frame(&bytes)
}

pub fn decode_frame(bytes: &[u8]) -> Result<Tensor> {
    let raw = netpbm::decode(bytes)?;
    if (raw.width, raw.height) != (FRAME_WIDTH, FRAME_HEIGHT) {
        return Err(DatasetError::Dimensions {
            want_width: FRAME_WIDTH,
            want_height: FRAME_HEIGHT,
            got_width: raw.width,
            got_height: raw.height,
        });
    }
    Ok(Tensor::new(&[1, raw.height, raw.width], raw.to_gray_f32()).expect("decoded size"))
}

/// Mean of each `factor x factor` block of a `1 x H x W` image.
pub fn downscale(image: &Tensor, factor: usize) -> Result<Tensor> {
    let &[1, h, w] = image.shape() else {
        return Err(DatasetError::InvalidArgument(format!(
            "downscale expects a 1xHxW image, got {:?}",
            image.shape()
        )));
    };
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(DatasetError::Indivisible { height: h, width: w, factor });
    }
    let (oh, ow) = (h / factor, w / factor);
    let src = image.data();
    let mut sums = vec![0.0f64; oh * ow];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let acc = &mut sums[(y / factor) * ow..(y / factor + 1) * ow];
        for (block, a) in row.chunks_exact(factor).zip(acc.iter_mut()) {
            *a += block.iter().map(|&v| v as f64).sum::<f64>();
        }
    }
    let inv = 1.0 / (factor * factor) as f64;
    let out = sums.into_iter().map(|s| (s * inv) as f32).collect();
    Ok(Tensor::new(&[1, oh, ow], out).expect("block count"))
}

pub fn downscale10(image: &Tensor) -> Result<Tensor> {
    downscale(image, DOWNSCALE)
}

/// `load_image` followed by `downscale10`.
pub fn load_frame(path: &Path) -> Result<Tensor> {
    let full = load_image(path).map_err(|e| match e {
        DatasetError::Io { .. } => e,
        other => DatasetError::Image {
            path: path.to_path_buf(),
            source: Box::new(other),
        },
    })?;
    downscale10(&full)
}

/// Loads every manifest record, in manifest order.
pub fn load_samples(manifest: &DatasetManifest) -> Result<Vec<Sample>> {
    manifest
        .records
        .par_iter()
        .map(|rec| {
            Ok(Sample {
                image: load_frame(&manifest.root.join(&rec.path))?,
                label: rec.label,
                source: rec.path.clone(),
            })
        })
        .collect()
}
