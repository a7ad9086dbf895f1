//! MNIST IDX and CIFAR-10 binary loaders.
//!
//! MNIST IDX (big-endian): images are `u32 0x00000803, u32 count, u32 rows,
//! u32 cols` followed by `count·rows·cols` bytes; labels are
//! `u32 0x00000801, u32 count` followed by `count` bytes.
//!
//! CIFAR-10 binary: a sequence of 3073-byte records, each one label byte
//! (0–9) followed by 1024 red, 1024 green and 1024 blue bytes (row-major
//! 32×32 planes).
//!
//! Pixel bytes are scaled to `[0, 1]` by `/255`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::augment::{Image, ValueDomain};
use crate::error::{Error, Result};
use crate::rng::RngStream;

pub const MNIST_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const MNIST_LABEL_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD: usize = 3073;
pub const CLASS_COUNT: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(DatasetKind::Mnist),
            "cifar10" => Ok(DatasetKind::Cifar10),
            other => Err(Error::invalid(format!("unknown dataset kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    images: Vec<Image>,
    labels: Vec<usize>,
    class_count: usize,
    provenance: Provenance,
}

impl LabeledDataset {
    pub fn new(images: Vec<Image>, labels: Vec<usize>, class_count: usize, provenance: Provenance) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::CountMismatch {
                images: images.len(),
                labels: labels.len(),
            });
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::invalid(format!("label {bad} out of range for {class_count} classes")));
        }
        Ok(Self {
            images,
            labels,
            class_count,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &Image {
        &self.images[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_count: self.class_count,
            provenance: self.provenance,
        }
    }

    /// The first `n` items (or all, if fewer).
    pub fn truncate(mut self, n: usize) -> Self {
        self.images.truncate(n);
        self.labels.truncate(n);
        self
    }

    pub fn map_images(self, f: impl FnMut(Image) -> Result<Image>) -> Result<Self> {
        Ok(Self {
            images: self.images.into_iter().map(f).collect::<Result<_>>()?,
            ..self
        })
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Truncated {
            path: path.to_path_buf(),
            detail: format!("header ends at byte {}", bytes.len()),
        })
}

pub fn load_mnist_idx(image_path: &Path, label_path: &Path) -> Result<LabeledDataset> {
    decode_mnist_idx(&read(image_path)?, image_path, &read(label_path)?, label_path)
}

pub fn decode_mnist_idx(images: &[u8], image_path: &Path, labels: &[u8], label_path: &Path) -> Result<LabeledDataset> {
    let magic = be_u32(images, 0, image_path)?;
    if magic != MNIST_IMAGE_MAGIC {
        return Err(Error::WrongMagic {
            path: image_path.to_path_buf(),
            found: magic,
            expected: MNIST_IMAGE_MAGIC,
        });
    }
    let magic = be_u32(labels, 0, label_path)?;
    if magic != MNIST_LABEL_MAGIC {
        return Err(Error::WrongMagic {
            path: label_path.to_path_buf(),
            found: magic,
            expected: MNIST_LABEL_MAGIC,
        });
    }
    let count = be_u32(images, 4, image_path)? as usize;
    let rows = be_u32(images, 8, image_path)? as usize;
    let cols = be_u32(images, 12, image_path)? as usize;
    let label_count = be_u32(labels, 4, label_path)? as usize;
    if count != label_count {
        return Err(Error::CountMismatch {
            images: count,
            labels: label_count,
        });
    }
    let pixels = rows * cols;
    if rows == 0 || cols == 0 {
        return Err(Error::invalid(format!("{}: empty image size {rows}x{cols}", image_path.display())));
    }
    let body = &images[16..];
    if body.len() != count * pixels {
        return Err(Error::Truncated {
            path: image_path.to_path_buf(),
            detail: format!("expected {} pixel bytes, found {}", count * pixels, body.len()),
        });
    }
    let lbody = &labels[8..];
    if lbody.len() != count {
        return Err(Error::Truncated {
            path: label_path.to_path_buf(),
            detail: format!("expected {count} label bytes, found {}", lbody.len()),
        });
    }
    let mut out_images = Vec::with_capacity(count);
    let mut out_labels = Vec::with_capacity(count);
    for (i, (chunk, &label)) in body.chunks_exact(pixels).zip(lbody).enumerate() {
        if label as usize >= CLASS_COUNT {
            return Err(Error::BadLabel {
                path: label_path.to_path_buf(),
                label,
                record: i,
            });
        }
        let px = chunk.iter().map(|&b| b as f32 / 255.0).collect();
        out_images.push(Image::new(rows, cols, 1, px, ValueDomain::UnitInterval)?);
        out_labels.push(label as usize);
    }
    LabeledDataset::new(out_images, out_labels, CLASS_COUNT, Provenance::Train)
}

fn to_byte(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Inverse of [`decode_mnist_idx`]: `(image file bytes, label file bytes)`.
pub fn encode_mnist_idx(ds: &LabeledDataset) -> (Vec<u8>, Vec<u8>) {
    let (rows, cols) = ds
        .images
        .first()
        .map(|i| (i.height(), i.width()))
        .unwrap_or((28, 28));
    let mut img = Vec::with_capacity(16 + ds.len() * rows * cols);
    img.extend_from_slice(&MNIST_IMAGE_MAGIC.to_be_bytes());
    img.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    for im in &ds.images {
        img.extend(im.pixels().iter().map(|&v| to_byte(v)));
    }
    let mut lab = Vec::with_capacity(8 + ds.len());
    lab.extend_from_slice(&MNIST_LABEL_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(ds.len() as u32).to_be_bytes());
    lab.extend(ds.labels.iter().map(|&l| l as u8));
    (img, lab)
}

pub fn load_cifar10_bin<P: AsRef<Path>>(paths: &[P]) -> Result<LabeledDataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for p in paths {
        let p = p.as_ref();
        let ds = decode_cifar10_bin(&read(p)?, p)?;
        images.extend(ds.images);
        labels.extend(ds.labels);
    }
    LabeledDataset::new(images, labels, CLASS_COUNT, Provenance::Train)
}

pub fn decode_cifar10_bin(bytes: &[u8], path: &Path) -> Result<LabeledDataset> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD != 0 {
        return Err(Error::BadRecordLength {
            path: path.to_path_buf(),
            len: bytes.len(),
            record: CIFAR_RECORD,
        });
    }
    let mut images = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    let mut labels = Vec::with_capacity(bytes.len() / CIFAR_RECORD);
    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        if rec[0] as usize >= CLASS_COUNT {
            return Err(Error::BadLabel {
                path: PathBuf::from(path),
                label: rec[0],
                record: i,
            });
        }
        labels.push(rec[0] as usize);
        let px = rec[1..].iter().map(|&b| b as f32 / 255.0).collect();
        images.push(Image::new(32, 32, 3, px, ValueDomain::UnitInterval)?);
    }
    LabeledDataset::new(images, labels, CLASS_COUNT, Provenance::Train)
}

pub fn encode_cifar10_bin(ds: &LabeledDataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(ds.len() * CIFAR_RECORD);
    for (im, &l) in ds.images.iter().zip(&ds.labels) {
        out.push(l as u8);
        out.extend(im.pixels().iter().map(|&v| to_byte(v)));
    }
    out
}

/// Disjoint index partition of a dataset into training pool and held-out
/// validation originals.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidationSplit {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
}

impl ValidationSplit {
    pub fn parts(&self, ds: &LabeledDataset) -> (LabeledDataset, LabeledDataset) {
        (ds.subset(&self.train), ds.subset(&self.validation))
    }
}

/// Seed-deterministic shuffle split; `round(fraction·N)` items go to
/// validation. Both parts are returned in ascending index order.
pub fn split_validation(n: usize, fraction: f64, rng: &mut RngStream) -> Result<ValidationSplit> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("validation fraction must lie in (0, 1), got {fraction}")));
    }
    let n_val = (fraction * n as f64).round() as usize;
    if n_val == 0 || n_val == n {
        return Err(Error::invalid(format!(
            "validation fraction {fraction} leaves an empty part for {n} samples"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let mut validation = idx[..n_val].to_vec();
    let mut train = idx[n_val..].to_vec();
    validation.sort_unstable();
    train.sort_unstable();
    Ok(ValidationSplit { train, validation })
}
