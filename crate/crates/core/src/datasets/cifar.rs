//! CIFAR binary record codec.
//!
//! CIFAR-10 records are `1 label byte + 3072 pixel bytes`; CIFAR-100 records
//! carry a coarse and a fine label byte before the pixels. Pixels are stored
//! as three row-major 32x32 planes (R, G, B).

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Split;
use crate::error::{Error, Result};

pub const IMAGE_BYTES: usize = 3 * 32 * 32;
pub const RECORDS_PER_FILE: usize = 10_000;
pub const CIFAR10_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR10_TEST_FILE: &str = "test_batch.bin";
pub const CIFAR100_TRAIN_FILE: &str = "train.bin";
pub const CIFAR100_TEST_FILE: &str = "test.bin";
pub const CIFAR100_TRAIN_RECORDS: usize = 50_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CifarLayout {
    Cifar10,
    Cifar100,
}

impl CifarLayout {
    pub fn label_bytes(self) -> usize {
        match self {
            CifarLayout::Cifar10 => 1,
            CifarLayout::Cifar100 => 2,
        }
    }

    pub fn record_len(self) -> usize {
        self.label_bytes() + IMAGE_BYTES
    }

    pub fn num_classes(self) -> usize {
        match self {
            CifarLayout::Cifar10 => 10,
            CifarLayout::Cifar100 => 100,
        }
    }
}

fn format_error(path: &Path, reason: String) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason,
    }
}

/// Decodes a whole number of records. Labels must be below `num_classes`.
pub fn decode(bytes: &[u8], layout: CifarLayout, num_classes: usize, path: &Path) -> Result<Split> {
    let rec = layout.record_len();
    if bytes.is_empty() || bytes.len() % rec != 0 {
        return Err(format_error(
            path,
            format!("length {} is not a positive multiple of the {rec}-byte record", bytes.len()),
        ));
    }
    let n = bytes.len() / rec;
    let mut labels = Vec::with_capacity(n);
    let mut coarse = (layout == CifarLayout::Cifar100).then(|| Vec::with_capacity(n));
    let mut pixels = Vec::with_capacity(n * IMAGE_BYTES);
    for (i, r) in bytes.chunks_exact(rec).enumerate() {
        let fine = r[layout.label_bytes() - 1];
        if fine as usize >= num_classes {
            return Err(format_error(path, format!("record {i} has label {fine} >= {num_classes}")));
        }
        if let Some(c) = coarse.as_mut() {
            c.push(r[0]);
        }
        labels.push(fine);
        pixels.extend_from_slice(&r[layout.label_bytes()..]);
    }
    Ok(Split { pixels, labels, coarse })
}

/// Inverse of [`decode`]. Missing coarse labels are written as zero.
pub fn encode(split: &Split, layout: CifarLayout) -> Vec<u8> {
    let mut out = Vec::with_capacity(split.len() * layout.record_len());
    for i in 0..split.len() {
        if layout == CifarLayout::Cifar100 {
            out.push(split.coarse.as_ref().map_or(0, |c| c[i]));
        }
        out.push(split.labels[i]);
        out.extend_from_slice(split.image_bytes(i));
    }
    out
}

fn read_exact_file(path: &Path, expected: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected {
        return Err(format_error(
            path,
            format!("expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    Ok(bytes)
}

fn locate(dir: &Path, sub: &str, probe: &str) -> PathBuf {
    let nested = dir.join(sub);
    if nested.join(probe).exists() {
        nested
    } else {
        dir.to_path_buf()
    }
}

/// Reads `data_batch_{1..5}.bin` and `test_batch.bin` from `dir` (or from
/// `dir/cifar-10-batches-bin`). Each file must hold exactly 10,000 records.
pub fn read_cifar10(dir: &Path) -> Result<(Split, Split)> {
    let dir = locate(dir, "cifar-10-batches-bin", CIFAR10_TEST_FILE);
    let layout = CifarLayout::Cifar10;
    let expected = RECORDS_PER_FILE * layout.record_len();
    let mut train = Split::default();
    for name in CIFAR10_TRAIN_FILES {
        let path = dir.join(name);
        let bytes = read_exact_file(&path, expected)?;
        train.extend(decode(&bytes, layout, 10, &path)?);
    }
    let path = dir.join(CIFAR10_TEST_FILE);
    let test = decode(&read_exact_file(&path, expected)?, layout, 10, &path)?;
    Ok((train, test))
}

/// Reads `train.bin` (50,000 records) and `test.bin` (10,000 records) from
/// `dir` (or `dir/cifar-100-binary`). Only the fine label feeds training.
pub fn read_cifar100(dir: &Path) -> Result<(Split, Split)> {
    let dir = locate(dir, "cifar-100-binary", CIFAR100_TEST_FILE);
    let layout = CifarLayout::Cifar100;
    let path = dir.join(CIFAR100_TRAIN_FILE);
    let train = decode(
        &read_exact_file(&path, CIFAR100_TRAIN_RECORDS * layout.record_len())?,
        layout,
        100,
        &path,
    )?;
    let path = dir.join(CIFAR100_TEST_FILE);
    let test = decode(
        &read_exact_file(&path, RECORDS_PER_FILE * layout.record_len())?,
        layout,
        100,
        &path,
    )?;
    Ok((train, test))
}

/// Writes a split to `path` in `layout`.
pub fn write_split(split: &Split, layout: CifarLayout, path: &Path) -> Result<()> {
    fs::write(path, encode(split, layout)).map_err(|e| Error::io(path, e))
}

/// Reads a split written by [`write_split`] (any record count).
pub fn read_split(path: &Path, layout: CifarLayout, num_classes: usize) -> Result<Split> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, layout, num_classes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split(n: usize, coarse: bool) -> Split {
        Split {
            pixels: (0..n * IMAGE_BYTES).map(|i| (i * 7 % 251) as u8).collect(),
            labels: (0..n).map(|i| (i % 10) as u8).collect(),
            coarse: coarse.then(|| (0..n).map(|i| (i % 20) as u8).collect()),
        }
    }

    #[test]
    fn record_sizes() {
        assert_eq!(RECORDS_PER_FILE * CifarLayout::Cifar10.record_len(), 30_730_000);
        assert_eq!(CIFAR100_TRAIN_RECORDS * CifarLayout::Cifar100.record_len(), 153_700_000);
    }

    #[test]
    fn codec_roundtrip() {
        let p = Path::new("mem");
        for (layout, coarse) in [(CifarLayout::Cifar10, false), (CifarLayout::Cifar100, true)] {
            let s = split(5, coarse);
            let bytes = encode(&s, layout);
            assert_eq!(bytes.len(), 5 * layout.record_len());
            let back = decode(&bytes, layout, layout.num_classes(), p).unwrap();
            assert_eq!(back, s);
            assert_eq!(encode(&back, layout), bytes);
        }
    }

    #[test]
    fn coarse_label_is_not_the_training_label() {
        let s = split(3, true);
        let bytes = encode(&s, CifarLayout::Cifar100);
        let d = decode(&bytes, CifarLayout::Cifar100, 100, Path::new("mem")).unwrap();
        assert_eq!(d.labels, s.labels);
        assert_eq!(d.coarse, s.coarse);
    }

    #[test]
    fn rejects_partial_records_and_bad_labels() {
        let p = Path::new("mem");
        let bytes = encode(&split(2, false), CifarLayout::Cifar10);
        let err = decode(&bytes[..bytes.len() - 1], CifarLayout::Cifar10, 10, p).unwrap_err();
        assert!(err.to_string().contains("3073"));
        let mut bad = bytes.clone();
        bad[0] = 10;
        assert!(decode(&bad, CifarLayout::Cifar10, 10, p).is_err());
    }
}
