//! `DRVN` model files.
//!
//! All integers and floats are little-endian. Layout:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "DRVN"
//! 4       4     u32 format version (currently 1)
//! 8       4     u32 section count (3)
//! 12      ...   sections, each:
//!                 4      tag: "META", "CNN " or "FRST"
//!                 8      u64 payload length L
//!                 L      payload
//! ```
//!
//! `META` is UTF-8 text, one `key=value` per line (see [`Metadata`]).
//! Floats are written in shortest round-trip form, so parsing is exact.
//!
//! `CNN ` payload:
//!
//! ```text
//! 8 x u32   input_height input_width conv1_channels conv1_kernel
//!           conv2_channels conv2_kernel dense_width n_classes
//! f32       dropout rate
//! u64       init seed
//! u32       tensor count T
//! T x       u16 name length, name bytes, u32 ndim, ndim x u32 dims,
//!           prod(dims) x f32 values
//! ```
//!
//! `FRST` payload:
//!
//! ```text
//! u32       feature dimension
//! u32       tree count
//! per tree: u32 node count, then nodes in arena order (root first):
//!   u8 0 = split: u32 k, k x u32 feature indices, k x f32 weights,
//!                 f32 threshold, u32 left child, u32 right child
//!   u8 1 = leaf:  10 x f64 posterior
//! ```
//!
//! Sections must each appear exactly once, may come in any order, and the
//! file must end after the last one.

use std::collections::HashMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::cascade::{DriveNetModel, FeatureMode, Metadata};
use crate::cnn::{Architecture, DriveNetCnn, TrainConfig, PARAM_NAMES};
use crate::adam::AdamConfig;
use crate::forest::{DecisionTree, ForestConfig, Node, Projection, RandomForest, SplitTest};
use crate::tensor::Tensor;
use crate::NUM_CLASSES;

pub const MAGIC: [u8; 4] = *b"DRVN";
pub const FORMAT_VERSION: u32 = 1;

const TAG_META: [u8; 4] = *b"META";
const TAG_CNN: [u8; 4] = *b"CNN ";
const TAG_FOREST: [u8; 4] = *b"FRST";

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a DRVN model file")]
    BadMagic,
    #[error("model format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("model file truncated in {0}")]
    Truncated(&'static str),
    #[error("corrupt model file: {0}")]
    Corrupt(String),
}

pub type Result<T> = std::result::Result<T, ContainerError>;

fn corrupt(msg: impl Into<String>) -> ContainerError {
    ContainerError::Corrupt(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    section: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() < n {
            return Err(ContainerError::Truncated(self.section));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    /// A count that must be backed by at least `unit` bytes per item.
    fn count(&mut self, unit: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(unit) > self.bytes.len() {
            return Err(ContainerError::Truncated(self.section));
        }
        Ok(n)
    }

    fn finish(&self) -> Result<()> {
        if self.bytes.is_empty() {
            Ok(())
        } else {
            Err(corrupt(format!("{} trailing bytes after {}", self.bytes.len(), self.section)))
        }
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("value fits in u32").to_le_bytes());
}

fn encode_meta(m: &Metadata) -> Vec<u8> {
    let t = &m.train;
    let f = &m.forest;
    let lines = [
        ("master_seed", m.master_seed.to_string()),
        ("feature_mode", m.feature_mode.to_string()),
        ("n_train_samples", m.n_train_samples.to_string()),
        ("epochs", t.epochs.to_string()),
        ("batch_size", t.batch_size.to_string()),
        ("alpha", t.adam.alpha.to_string()),
        ("beta1", t.adam.beta1.to_string()),
        ("beta2", t.adam.beta2.to_string()),
        ("epsilon", t.adam.epsilon.to_string()),
        ("dropout", t.dropout.to_string()),
        ("cnn_seed", t.seed.to_string()),
        ("strict", t.strict.to_string()),
        ("n_trees", f.n_trees.to_string()),
        ("max_depth", f.max_depth.to_string()),
        ("n_candidate_tests", f.n_candidate_tests.to_string()),
        ("n_features_per_test", f.n_features_per_test.to_string()),
        ("min_gain", f.min_gain.to_string()),
        ("min_samples_leaf", f.min_samples_leaf.to_string()),
        ("forest_seed", f.seed.to_string()),
    ];
    let mut s = String::new();
    for (k, v) in lines {
        s.push_str(k);
        s.push('=');
        s.push_str(&v);
        s.push('\n');
    }
    s.into_bytes()
}

fn decode_meta(bytes: &[u8]) -> Result<Metadata> {
    let text = std::str::from_utf8(bytes).map_err(|_| corrupt("metadata is not UTF-8"))?;
    let mut map = HashMap::new();
    for line in text.lines() {
        let (k, v) = line.split_once('=').ok_or_else(|| corrupt(format!("metadata line {line:?}")))?;
        if map.insert(k, v).is_some() {
            return Err(corrupt(format!("metadata key {k} repeated")));
        }
    }
    fn get<T: std::str::FromStr>(map: &HashMap<&str, &str>, key: &str) -> Result<T> {
        map.get(key)
            .ok_or_else(|| corrupt(format!("metadata lacks {key}")))?
            .parse()
            .map_err(|_| corrupt(format!("metadata {key} is malformed")))
    }
    Ok(Metadata {
        master_seed: get(&map, "master_seed")?,
        feature_mode: get::<FeatureMode>(&map, "feature_mode")?,
        n_train_samples: get(&map, "n_train_samples")?,
        train: TrainConfig {
            epochs: get(&map, "epochs")?,
            batch_size: get(&map, "batch_size")?,
            adam: AdamConfig {
                alpha: get(&map, "alpha")?,
                beta1: get(&map, "beta1")?,
                beta2: get(&map, "beta2")?,
                epsilon: get(&map, "epsilon")?,
            },
            dropout: get(&map, "dropout")?,
            seed: get(&map, "cnn_seed")?,
            strict: get(&map, "strict")?,
        },
        forest: ForestConfig {
            n_trees: get(&map, "n_trees")?,
            max_depth: get(&map, "max_depth")?,
            n_candidate_tests: get(&map, "n_candidate_tests")?,
            n_features_per_test: get(&map, "n_features_per_test")?,
            min_gain: get(&map, "min_gain")?,
            min_samples_leaf: get(&map, "min_samples_leaf")?,
            seed: get(&map, "forest_seed")?,
        },
    })
}

fn encode_cnn(cnn: &DriveNetCnn) -> Vec<u8> {
    let mut out = Vec::new();
    let a = cnn.architecture();
    for v in [
        a.input_height,
        a.input_width,
        a.conv1_channels,
        a.conv1_kernel,
        a.conv2_channels,
        a.conv2_kernel,
        a.dense_width,
        a.n_classes,
    ] {
        put_u32(&mut out, v);
    }
    out.extend_from_slice(&cnn.dropout_rate.to_le_bytes());
    out.extend_from_slice(&cnn.seed.to_le_bytes());
    put_u32(&mut out, cnn.params().len());
    for (name, t) in PARAM_NAMES.iter().zip(cnn.params()) {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rank());
        for &d in t.shape() {
            put_u32(&mut out, d);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn decode_cnn(bytes: &[u8]) -> Result<DriveNetCnn> {
    let mut r = Reader { bytes, section: "CNN section" };
    let mut dims = [0usize; 8];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let arch = Architecture {
        input_height: dims[0],
        input_width: dims[1],
        conv1_channels: dims[2],
        conv1_kernel: dims[3],
        conv2_channels: dims[4],
        conv2_kernel: dims[5],
        dense_width: dims[6],
        n_classes: dims[7],
    };
    let dropout_rate = r.f32()?;
    let seed = r.u64()?;
    let n = r.count(6)?;
    let mut params = Vec::with_capacity(n);
    for i in 0..n {
        let len = r.u16()? as usize;
        let name = r.take(len)?;
        if PARAM_NAMES.get(i).map(|p| p.as_bytes()) != Some(name) {
            return Err(corrupt(format!("tensor {i} is named {:?}", String::from_utf8_lossy(name))));
        }
        let ndim = r.count(4)?;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| corrupt("tensor size overflows"))?;
        let raw = r.take(len.checked_mul(4).ok_or_else(|| corrupt("tensor size overflows"))?)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        params.push(Tensor::new(&shape, data).map_err(|e| corrupt(e.to_string()))?);
    }
    r.finish()?;
    DriveNetCnn::from_params(arch, params, dropout_rate, seed).map_err(|e| corrupt(e.to_string()))
}

fn encode_forest(forest: &RandomForest) -> Vec<u8> {
    let mut out = Vec::new();
    put_u32(&mut out, forest.feature_dim());
    put_u32(&mut out, forest.trees().len());
    for tree in forest.trees() {
        put_u32(&mut out, tree.nodes().len());
        for node in tree.nodes() {
            match node {
                Node::Split { test, left, right } => {
                    out.push(0);
                    let p = &test.projection;
                    put_u32(&mut out, p.feature_indices.len());
                    for &i in &p.feature_indices {
                        out.extend_from_slice(&i.to_le_bytes());
                    }
                    for w in &p.weights {
                        out.extend_from_slice(&w.to_le_bytes());
                    }
                    out.extend_from_slice(&test.threshold.to_le_bytes());
                    out.extend_from_slice(&left.to_le_bytes());
                    out.extend_from_slice(&right.to_le_bytes());
                }
                Node::Leaf { posterior } => {
                    out.push(1);
                    for p in posterior {
                        out.extend_from_slice(&p.to_le_bytes());
                    }
                }
            }
        }
    }
    out
}

fn decode_forest(bytes: &[u8]) -> Result<RandomForest> {
    let mut r = Reader { bytes, section: "FRST section" };
    let feature_dim = r.u32()? as usize;
    let n_trees = r.count(4)?;
    let mut trees = Vec::with_capacity(n_trees);
    for _ in 0..n_trees {
        let n_nodes = r.count(1)?;
        let mut nodes = Vec::with_capacity(n_nodes);
        for _ in 0..n_nodes {
            nodes.push(match r.u8()? {
                0 => {
                    let k = r.count(8)?;
                    let indices = (0..k).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
                    let weights = (0..k).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
                    let threshold = r.f32()?;
                    let (left, right) = (r.u32()?, r.u32()?);
                    let projection = Projection::new(indices, weights).map_err(|e| corrupt(e.to_string()))?;
                    Node::Split {
                        test: SplitTest { projection, threshold },
                        left,
                        right,
                    }
                }
                1 => {
                    let mut posterior = [0.0; NUM_CLASSES];
                    for p in &mut posterior {
                        *p = r.f64()?;
                    }
                    Node::Leaf { posterior }
                }
                tag => return Err(corrupt(format!("unknown node tag {tag}"))),
            });
        }
        trees.push(DecisionTree::from_nodes(nodes, feature_dim).map_err(|e| corrupt(e.to_string()))?);
    }
    r.finish()?;
    RandomForest::from_trees(feature_dim, trees).map_err(|e| corrupt(e.to_string()))
}

pub fn encode_model(model: &DriveNetModel) -> Vec<u8> {
    let sections = [
        (TAG_META, encode_meta(model.metadata())),
        (TAG_CNN, encode_cnn(model.cnn())),
        (TAG_FOREST, encode_forest(model.forest())),
    ];
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_u32(&mut out, sections.len());
    for (tag, payload) in sections {
        out.extend_from_slice(&tag);
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
    }
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<DriveNetModel> {
    let mut r = Reader { bytes, section: "header" };
    if bytes.len() < 4 || r.array::<4>()? != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(ContainerError::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let count = r.u32()?;
    let (mut meta, mut cnn, mut forest) = (None, None, None);
    for _ in 0..count {
        r.section = "section header";
        let tag = r.array::<4>()?;
        let len = usize::try_from(r.u64()?).map_err(|_| corrupt("section length overflows"))?;
        let (slot, name) = match tag {
            TAG_META => (&mut meta, "META section"),
            TAG_CNN => (&mut cnn, "CNN section"),
            TAG_FOREST => (&mut forest, "FRST section"),
            other => return Err(corrupt(format!("unknown section {:?}", String::from_utf8_lossy(&other)))),
        };
        r.section = name;
        let payload = r.take(len)?;
        if slot.replace(payload).is_some() {
            return Err(corrupt(format!("duplicate {name}")));
        }
    }
    r.section = "file";
    r.finish()?;
    let missing = |name| corrupt(format!("missing {name}"));
    let metadata = decode_meta(meta.ok_or_else(|| missing("META section"))?)?;
    let cnn = decode_cnn(cnn.ok_or_else(|| missing("CNN section"))?)?;
    let forest = decode_forest(forest.ok_or_else(|| missing("FRST section"))?)?;
    DriveNetModel::new(cnn, forest, metadata).map_err(|e| corrupt(e.to_string()))
}

/// Writes through a temporary sibling file and renames it into place, so a
/// failed save never leaves a partial model at `path`.
pub fn save_model(model: &DriveNetModel, path: &Path) -> Result<()> {
    let io = |source| ContainerError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let mut f = std::fs::File::create(&tmp).map_err(io)?;
    f.write_all(&encode_model(model)).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn load_model(path: &Path) -> Result<DriveNetModel> {
    let bytes = std::fs::read(path).map_err(|source| ContainerError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_model(&bytes)
}
