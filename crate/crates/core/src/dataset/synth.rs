//! Deterministic synthetic stand-in for dashboard frames.
//!
//! Class `c` is a bright rectangle on a dark 48x64 canvas, placed in cell
//! `c` of a 2x5 grid. Its shape is class-specific too (height grows along
//! the grid row, width doubles on the second row): the network's global max
//! pool discards position, so position alone would not separate classes.
//! Gaussian noise is added and the result is clipped to
//! `[0, 1]` and quantized to 8 bits, so an in-memory sample equals the one
//! read back from the PGM files [`write_synth_dataset`] produces.

use std::path::Path;

use rand_distr::{Distribution, Normal};

use super::{format_label, netpbm, DatasetError, DatasetManifest, ManifestRecord, Result, Sample};
use super::{DOWNSCALE, FRAME_HEIGHT, FRAME_WIDTH};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;
use crate::NUM_CLASSES;

const HEIGHT: usize = FRAME_HEIGHT / DOWNSCALE;
const WIDTH: usize = FRAME_WIDTH / DOWNSCALE;
const BACKGROUND: f32 = 0.1;
const FOREGROUND: f32 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub per_class: usize,
    pub noise_sigma: f32,
    pub seed: u64,
}

/// `(top, left, height, width)` of the class rectangle.
fn class_rect(class: usize) -> (usize, usize, usize, usize) {
    let (row, col) = (class / 5, class % 5);
    let (cell_h, cell_w) = (HEIGHT / 2, 12);
    let (h, w) = (4 + 3 * col, 5 + 5 * row);
    (row * cell_h + (cell_h - h) / 2, 2 + col * cell_w + (cell_w - w) / 2, h, w)
}

fn render(class: usize, noise: Option<(Normal<f32>, &mut Rng)>) -> Vec<u8> {
    let (top, left, h, w) = class_rect(class);
    let mut px = vec![BACKGROUND; HEIGHT * WIDTH];
    for y in top..top + h {
        px[y * WIDTH + left..y * WIDTH + left + w].fill(FOREGROUND);
    }
    if let Some((dist, rng)) = noise {
        for p in &mut px {
            *p += dist.sample(rng);
        }
    }
    px.into_iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

fn to_tensor(bytes: &[u8]) -> Tensor {
    Tensor::new(&[1, HEIGHT, WIDTH], bytes.iter().map(|&b| b as f32 / 255.0).collect()).expect("canvas size")
}

fn rendered(spec: &SynthSpec) -> Result<Vec<(usize, usize, Vec<u8>)>> {
    if spec.per_class == 0 {
        return Err(DatasetError::InvalidArgument("per_class must be at least 1".into()));
    }
    if !(spec.noise_sigma >= 0.0 && spec.noise_sigma.is_finite()) {
        return Err(DatasetError::InvalidArgument(format!(
            "noise sigma must be finite and non-negative, got {}",
            spec.noise_sigma
        )));
    }
    let dist = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
    let mut out = Vec::with_capacity(spec.per_class * NUM_CLASSES);
    for class in 0..NUM_CLASSES {
        for i in 0..spec.per_class {
            let mut rng = Rng::derived(derive_seed(spec.seed, class as u64), i as u64);
            let noise = (spec.noise_sigma > 0.0).then_some((dist, &mut rng));
            out.push((class, i, render(class, noise)));
        }
    }
    Ok(out)
}

fn file_name(class: usize, index: usize) -> String {
    format!("{}/{}_{index:04}.pgm", format_label(class), format_label(class))
}

/// `per_class` samples of every class, grouped by class.
pub fn synth_dataset(spec: &SynthSpec) -> Result<Vec<Sample>> {
    Ok(rendered(spec)?
        .into_iter()
        .map(|(class, i, bytes)| Sample {
            image: to_tensor(&bytes),
            label: class,
            source: file_name(class, i),
        })
        .collect())
}

/// Writes the fixture as full-size 640x480 PGM frames (each pixel repeated
/// over a 10x10 block) plus `manifest.csv`, so the files load through the
/// same path as camera frames and reproduce [`synth_dataset`] exactly.
pub fn write_synth_dataset(dir: &Path, spec: &SynthSpec) -> Result<DatasetManifest> {
    let images = rendered(spec)?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DatasetError::Io { path, source }
    };
    let mut records = Vec::with_capacity(images.len());
    let mut frame = vec![0u8; FRAME_WIDTH * FRAME_HEIGHT];
    for (class, i, small) in images {
        for (y, row) in frame.chunks_exact_mut(FRAME_WIDTH).enumerate() {
            for (x, p) in row.iter_mut().enumerate() {
                *p = small[(y / DOWNSCALE) * WIDTH + x / DOWNSCALE];
            }
        }
        let rel = file_name(class, i);
        let path = dir.join(&rel);
        std::fs::create_dir_all(path.parent().expect("class dir")).map_err(io(&path))?;
        let mut bytes = Vec::with_capacity(frame.len() + 16);
        netpbm::encode_pgm(FRAME_WIDTH, FRAME_HEIGHT, &frame, &mut bytes).expect("vec write");
        std::fs::write(&path, bytes).map_err(io(&path))?;
        records.push(ManifestRecord { path: rel, label: class });
    }
    let manifest = DatasetManifest::new(dir.to_path_buf(), records)?;
    manifest.write(&dir.join("manifest.csv"))?;
    Ok(manifest)
}
