//! Dataset ingestion, normalisation and deterministic batching.

pub mod cifar;
mod synthetic;

use std::path::{Path, PathBuf};

use ndarray::Array4;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use cifar::{read_cifar10, read_cifar100, CifarLayout};
pub use synthetic::{make_synthetic, SyntheticParams};

use crate::augment::ImageBatch;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

pub const CHANNELS: usize = 3;
pub const HEIGHT: usize = 32;
pub const WIDTH: usize = 32;

/// Raw 8-bit images in CIFAR plane order plus labels.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Split {
    /// `len * 3072` bytes, one `[3, 32, 32]` image per record.
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
    /// CIFAR-100 coarse labels, carried only for lossless re-encoding.
    pub coarse: Option<Vec<u8>>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_bytes(&self, i: usize) -> &[u8] {
        &self.pixels[i * cifar::IMAGE_BYTES..(i + 1) * cifar::IMAGE_BYTES]
    }

    fn extend(&mut self, other: Split) {
        match (&mut self.coarse, other.coarse) {
            (Some(a), Some(b)) => a.extend(b),
            (None, Some(b)) if self.labels.is_empty() => self.coarse = Some(b),
            _ => {}
        }
        self.pixels.extend(other.pixels);
        self.labels.extend(other.labels);
    }

    /// Gathers `indices` into a normalised batch.
    pub fn batch(&self, indices: &[usize], norm: &Normalization, num_classes: usize) -> Result<ImageBatch> {
        let mut pixels = Array4::<f32>::zeros((indices.len(), CHANNELS, HEIGHT, WIDTH));
        let plane = HEIGHT * WIDTH;
        for (dst, &i) in pixels
            .as_slice_mut()
            .expect("fresh array")
            .chunks_exact_mut(cifar::IMAGE_BYTES)
            .zip(indices)
        {
            for (c, (d, s)) in dst
                .chunks_exact_mut(plane)
                .zip(self.image_bytes(i).chunks_exact(plane))
                .enumerate()
            {
                for (dv, &sv) in d.iter_mut().zip(s) {
                    *dv = norm.normalize(c, sv);
                }
            }
        }
        let labels = indices.iter().map(|&i| self.labels[i] as usize).collect();
        ImageBatch::new(pixels, labels, num_classes)
    }
}

/// Per-channel mean and standard deviation of `[0, 1]`-scaled intensities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Normalization {
    pub fn from_split(split: &Split) -> Self {
        let plane = HEIGHT * WIDTH;
        let mut sum = [0f64; 3];
        let mut sq = [0f64; 3];
        for img in split.pixels.chunks_exact(cifar::IMAGE_BYTES) {
            for c in 0..CHANNELS {
                for &v in &img[c * plane..(c + 1) * plane] {
                    let x = v as f64 / 255.0;
                    sum[c] += x;
                    sq[c] += x * x;
                }
            }
        }
        let count = (split.len() * plane).max(1) as f64;
        let mut mean = [0f32; 3];
        let mut std = [0f32; 3];
        for c in 0..CHANNELS {
            let m = sum[c] / count;
            mean[c] = m as f32;
            std[c] = ((sq[c] / count - m * m).max(0.0).sqrt()).max(1e-3) as f32;
        }
        Self { mean, std }
    }

    #[inline]
    pub fn normalize(&self, channel: usize, byte: u8) -> f32 {
        (byte as f32 / 255.0 - self.mean[channel]) / self.std[channel]
    }

    #[inline]
    pub fn denormalize(&self, channel: usize, value: f32) -> f32 {
        value * self.std[channel] + self.mean[channel]
    }
}

/// A decoded dataset with its normalisation.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub num_classes: usize,
    pub train: Split,
    pub test: Split,
    pub norm: Normalization,
}

impl Dataset {
    /// Training batches in the order fixed by `(seed, epoch)`.
    pub fn train_batches(&self, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<ImageBatch>> {
        shuffled_batches(self.train.len(), batch_size, seed, epoch)?
            .iter()
            .map(|idx| self.train.batch(idx, &self.norm, self.num_classes))
            .collect()
    }

    /// Test batches in file order, keeping the short tail.
    pub fn test_batches(&self, batch_size: usize) -> Result<Vec<ImageBatch>> {
        if batch_size == 0 {
            return Err(Error::Parameter("batch size must be positive".into()));
        }
        let idx: Vec<usize> = (0..self.test.len()).collect();
        idx.chunks(batch_size)
            .map(|c| self.test.batch(c, &self.norm, self.num_classes))
            .collect()
    }
}

/// Batch index lists for one epoch; a final batch with fewer than two samples
/// is dropped.
pub fn shuffled_batches(len: usize, batch_size: usize, seed: u64, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size < 2 {
        return Err(Error::Parameter(format!("batch size must be >= 2, got {batch_size}")));
    }
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut rng::stream(seed, epoch as u64, Stream::Shuffle));
    Ok(order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Synthetic,
    Cifar10,
    Cifar100,
    /// Splits previously written with [`export`].
    Exported,
}

/// Where a dataset comes from and how it is normalised.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    /// Directory for file-backed datasets; relative paths resolve against the
    /// dataset root.
    pub path: Option<PathBuf>,
    pub num_classes: usize,
    pub synthetic: SyntheticParams,
    /// Filled in from the training split on first load.
    pub normalization: Option<Normalization>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Synthetic,
            path: None,
            num_classes: 10,
            synthetic: SyntheticParams::default(),
            normalization: None,
        }
    }
}

/// Environment variable naming the directory that holds dataset folders.
pub const DATA_ROOT_ENV: &str = "CUTNMIX_DATA";

/// Metadata written next to exported splits.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ExportMeta {
    layout: CifarLayout,
    num_classes: usize,
    name: String,
}

impl DatasetSpec {
    fn resolve_path(&self, default_dir: &str) -> PathBuf {
        let root = std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from);
        match (&self.path, root) {
            (Some(p), _) if p.is_absolute() => p.clone(),
            (Some(p), Some(r)) => r.join(p),
            (Some(p), None) => p.clone(),
            (None, Some(r)) => r.join(default_dir),
            (None, None) => PathBuf::from(default_dir),
        }
    }

    /// Loads the data and returns it with the spec's normalisation resolved.
    pub fn load(&self) -> Result<(Dataset, DatasetSpec)> {
        let (name, num_classes, train, test) = match self.kind {
            DatasetKind::Synthetic => {
                let (train, test) = make_synthetic(self.num_classes, &self.synthetic)?;
                ("synthetic".to_string(), self.num_classes, train, test)
            }
            DatasetKind::Cifar10 => {
                let (train, test) = read_cifar10(&self.resolve_path("cifar-10-batches-bin"))?;
                ("cifar10".to_string(), 10, train, test)
            }
            DatasetKind::Cifar100 => {
                let (train, test) = read_cifar100(&self.resolve_path("cifar-100-binary"))?;
                ("cifar100".to_string(), 100, train, test)
            }
            DatasetKind::Exported => {
                let dir = self.resolve_path("exported");
                let meta_path = dir.join("dataset.json");
                let raw = std::fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
                let meta: ExportMeta = serde_json::from_slice(&raw)?;
                let train = cifar::read_split(&dir.join("train.bin"), meta.layout, meta.num_classes)?;
                let test = cifar::read_split(&dir.join("test.bin"), meta.layout, meta.num_classes)?;
                (meta.name, meta.num_classes, train, test)
            }
        };
        if train.is_empty() || test.is_empty() {
            return Err(Error::Configuration("dataset has an empty split".into()));
        }
        let norm = self.normalization.unwrap_or_else(|| Normalization::from_split(&train));
        let resolved = DatasetSpec {
            num_classes,
            normalization: Some(norm),
            ..self.clone()
        };
        Ok((
            Dataset {
                name,
                num_classes,
                train,
                test,
                norm,
            },
            resolved,
        ))
    }
}

/// Writes both splits of `dataset` to `dir` in `layout`, readable back with
/// [`DatasetKind::Exported`].
pub fn export(dataset: &Dataset, layout: CifarLayout, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    cifar::write_split(&dataset.train, layout, &dir.join("train.bin"))?;
    cifar::write_split(&dataset.test, layout, &dir.join("test.bin"))?;
    let meta = ExportMeta {
        layout,
        num_classes: dataset.num_classes,
        name: dataset.name.clone(),
    };
    let path = dir.join("dataset.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&meta)?).map_err(|e| Error::io(&path, e))
}
