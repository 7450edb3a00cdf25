//! MNIST IDX loading, train/validation split and mini-batching.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, IdxError, Result};
use crate::model::IMAGE_SIDE;
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// Images `[N, 1, 28, 28]` in `[0, 1]` and their digit labels. Labels are
/// only ever read by evaluation code.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor<f32>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<u8>) -> Result<Self> {
        if images.rank() != 4 || images.shape()[1..] != [1, IMAGE_SIDE, IMAGE_SIDE] {
            return Err(Error::dim(format!("dataset images must be [N,1,28,28], got {:?}", images.shape())));
        }
        if images.rows() != labels.len() {
            return Err(Error::dim(format!(
                "{} images but {} labels",
                images.rows(),
                labels.len()
            )));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        Ok(Self {
            images: self.images.select_rows(indices)?,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        })
    }

    /// First `n` samples (all of them when `n >= len`).
    pub fn head(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        self.subset(&(0..n).collect::<Vec<_>>())
    }

    /// Images flattened to `[N, 784]` in `f64`, for pixel-space baselines.
    pub fn flat_pixels(&self) -> Tensor<f64> {
        let n = self.len();
        self.images
            .cast::<f64>()
            .reshape(&[n, IMAGE_SIDE * IMAGE_SIDE])
            .expect("image size")
    }

    /// Per-digit sample counts.
    pub fn class_histogram(&self) -> [usize; 10] {
        let mut h = [0; 10];
        for &l in &self.labels {
            h[l as usize] += 1;
        }
        h
    }
}

fn be_u32(bytes: &[u8], at: usize) -> Option<u32> {
    bytes.get(at..at + 4).map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
}

fn header(bytes: &[u8], magic: u32, dims: usize) -> Result<Vec<usize>, IdxError> {
    let head_len = 4 + 4 * dims;
    let found = be_u32(bytes, 0).ok_or(IdxError::Truncated {
        expected: head_len,
        found: bytes.len(),
    })?;
    if found != magic {
        return Err(IdxError::BadMagic { expected: magic, found });
    }
    let sizes: Option<Vec<usize>> = (0..dims).map(|d| be_u32(bytes, 4 + 4 * d).map(|v| v as usize)).collect();
    let sizes = sizes.ok_or(IdxError::Truncated {
        expected: head_len,
        found: bytes.len(),
    })?;
    let expected = head_len + sizes.iter().product::<usize>();
    if bytes.len() != expected {
        return Err(IdxError::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    Ok(sizes)
}

/// Parse an IDX3 image file into `[N, 1, rows, cols]` floats in `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor<f32>, IdxError> {
    let dims = header(bytes, IMAGE_MAGIC, 3)?;
    let (n, rows, cols) = (dims[0], dims[1], dims[2]);
    let pixels = bytes[16..].iter().map(|&b| f32::from(b) / 255.0).collect();
    Ok(Tensor::new(&[n, 1, rows, cols], pixels).expect("header-checked size"))
}

/// Parse an IDX1 label file.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    header(bytes, LABEL_MAGIC, 1)?;
    let labels = bytes[8..].to_vec();
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(IdxError::BadLabel(bad));
    }
    Ok(labels)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))
}

/// Load a matching pair of IDX image and label files.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let idx_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| Error::Idx { path, source }
    };
    let images = parse_idx_images(&read(images_path)?).map_err(idx_err(images_path))?;
    let labels = parse_idx_labels(&read(labels_path)?).map_err(idx_err(labels_path))?;
    if images.rows() != labels.len() {
        return Err(Error::Idx {
            path: labels_path.to_path_buf(),
            source: IdxError::CountMismatch {
                images: images.rows(),
                labels: labels.len(),
            },
        });
    }
    if images.shape()[2..] != [IMAGE_SIDE, IMAGE_SIDE] {
        return Err(Error::dim(format!("expected 28x28 images, got {:?}", &images.shape()[2..])));
    }
    Dataset::new(images, labels)
}

/// The four standard MNIST files inside one directory.
#[derive(Debug, Clone)]
pub struct MnistDir(pub PathBuf);

impl MnistDir {
    pub fn files(&self) -> [PathBuf; 4] {
        [TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS].map(|f| self.0.join(f))
    }

    pub fn missing(&self) -> Vec<PathBuf> {
        self.files().into_iter().filter(|p| !p.is_file()).collect()
    }

    pub fn train(&self) -> Result<Dataset> {
        load_idx(&self.0.join(TRAIN_IMAGES), &self.0.join(TRAIN_LABELS))
    }

    pub fn test(&self) -> Result<Dataset> {
        load_idx(&self.0.join(TEST_IMAGES), &self.0.join(TEST_LABELS))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            train_fraction: 0.8,
            seed,
        }
    }
}

/// Shuffled index partition: `ceil(fraction · N)` training indices, the rest
/// held out.
pub fn split_indices(n: usize, spec: SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::InsufficientData(format!("cannot split {n} samples")));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction {} not in (0, 1)", spec.train_fraction)));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n_train = ((spec.train_fraction * n as f64).ceil() as usize).clamp(1, n - 1);
    let held_out = idx.split_off(n_train);
    Ok((idx, held_out))
}

pub fn split(ds: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    let (train, val) = split_indices(ds.len(), spec)?;
    Ok((ds.subset(&train)?, ds.subset(&val)?))
}

/// One epoch's worth of batch index lists. Every index appears exactly once;
/// the last batch may be short.
pub fn batch_indices(n: usize, batch_size: usize, shuffle: bool, seed: u64) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Image batches `[B, 1, 28, 28]` for one epoch.
pub fn batches<'a>(
    ds: &'a Dataset,
    batch_size: usize,
    shuffle: bool,
    seed: u64,
) -> impl Iterator<Item = Tensor<f32>> + 'a {
    batch_indices(ds.len(), batch_size, shuffle, seed)
        .into_iter()
        .map(move |idx| ds.images.select_rows(&idx).expect("indices in range"))
}

/// Serialise images and labels as IDX byte streams.
pub fn encode_idx(images: &[u8], n: usize, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::with_capacity(16 + images.len());
    img.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for d in [n, IMAGE_SIDE, IMAGE_SIDE] {
        img.extend_from_slice(&(d as u32).to_be_bytes());
    }
    img.extend_from_slice(images);
    let mut lab = Vec::with_capacity(8 + labels.len());
    lab.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    (img, lab)
}
