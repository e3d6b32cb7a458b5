//! Dataset ingestion: IDX and CIFAR-10 binary files, a synthetic Gaussian
//! blob generator, and a small binary fixture format.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::stats::RngStream;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORD_LEN: usize = 3073;
pub const FIXTURE_MAGIC: &[u8; 8] = b"CRTDATA1";

/// Distance of each blob center from the simplex centroid before squashing.
const BLOB_SEPARATION: f64 = 1.5;
/// Spread used by configurations that do not specify one.
pub const DEFAULT_BLOB_SPREAD: f64 = 0.35;

/// A labelled dataset with inputs scaled into `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetHandle {
    inputs: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    name: String,
}

impl DatasetHandle {
    pub fn new(name: &str, inputs: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.shape().len() < 2 {
            return Err(Error::Shape(format!(
                "dataset inputs need a leading sample axis, got {:?}",
                inputs.shape()
            )));
        }
        if inputs.shape()[0] != labels.len() {
            return Err(Error::format(
                "labels",
                format!("{} labels for {} inputs", labels.len(), inputs.shape()[0]),
            ));
        }
        if num_classes < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {num_classes}")));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::format(
                "labels",
                format!("label {bad} outside [0, {num_classes})"),
            ));
        }
        if let Some(bad) = inputs.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::format("inputs", format!("value {bad} outside [0, 1]")));
        }
        Ok(Self {
            inputs,
            labels,
            num_classes,
            name: name.to_string(),
        })
    }

    pub fn inputs(&self) -> &Tensor {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Per-sample input shape.
    pub fn sample_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn input(&self, i: usize) -> &[f64] {
        self.inputs.row(i)
    }

    /// Inputs and labels for the given sample indices.
    pub fn batch(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        (
            self.inputs.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// Raises the class count, e.g. when a split lacks the highest label.
    pub fn with_num_classes(mut self, k: usize) -> Result<Self> {
        if let Some(bad) = self.labels.iter().find(|&&y| y >= k) {
            return Err(Error::invalid(format!("label {bad} outside [0, {k})")));
        }
        self.num_classes = k;
        Ok(self)
    }
}

fn read_be_u32(bytes: &[u8], offset: usize, field: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::format(field, "truncated header"))
}

/// Loads an IDX image/label file pair (MNIST family). Pixels are scaled by
/// 1/255; images keep a `[N, 1, rows, cols]` shape. The class count is one
/// past the largest label.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<DatasetHandle> {
    let images = fs::read(images_path)?;
    let labels = fs::read(labels_path)?;
    parse_idx(&images, &labels)
}

pub fn parse_idx(images: &[u8], labels: &[u8]) -> Result<DatasetHandle> {
    let magic = read_be_u32(images, 0, "images.magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::format(
            "images.magic",
            format!("expected {IDX_IMAGES_MAGIC:#010x}, found {magic:#010x}"),
        ));
    }
    let n = read_be_u32(images, 4, "images.count")? as usize;
    let rows = read_be_u32(images, 8, "images.rows")? as usize;
    let cols = read_be_u32(images, 12, "images.cols")? as usize;
    let pixels = &images[16..];
    let expected = n.checked_mul(rows).and_then(|v| v.checked_mul(cols));
    if expected != Some(pixels.len()) {
        return Err(Error::format(
            "images.data",
            format!(
                "expected {n} images of {rows}x{cols} pixels, found {} pixel bytes",
                pixels.len()
            ),
        ));
    }
    let magic = read_be_u32(labels, 0, "labels.magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::format(
            "labels.magic",
            format!("expected {IDX_LABELS_MAGIC:#010x}, found {magic:#010x}"),
        ));
    }
    let n_labels = read_be_u32(labels, 4, "labels.count")? as usize;
    let label_bytes = &labels[8..];
    if label_bytes.len() != n_labels {
        return Err(Error::format(
            "labels.data",
            format!("header says {n_labels} labels, found {}", label_bytes.len()),
        ));
    }
    if n_labels != n {
        return Err(Error::format(
            "labels.count",
            format!("{n_labels} labels for {n} images"),
        ));
    }
    let data = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    let inputs = Tensor::from_vec(&[n, 1, rows, cols], data)?;
    let labels: Vec<usize> = label_bytes.iter().map(|&b| b as usize).collect();
    let k = labels.iter().max().map_or(2, |m| (m + 1).max(2));
    DatasetHandle::new("idx", inputs, labels, k)
}

/// Loads one or more CIFAR-10 binary batch files (3073-byte records: a label
/// byte followed by 3x32x32 channel-planar pixels).
pub fn load_cifar10_binary<P: AsRef<Path>>(batch_paths: &[P]) -> Result<DatasetHandle> {
    let mut bytes = Vec::new();
    for p in batch_paths {
        let chunk = fs::read(p.as_ref())?;
        if chunk.len() % CIFAR_RECORD_LEN != 0 {
            return Err(Error::format(
                "cifar10.record",
                format!(
                    "{} has {} bytes, not a multiple of {CIFAR_RECORD_LEN}",
                    p.as_ref().display(),
                    chunk.len()
                ),
            ));
        }
        bytes.extend_from_slice(&chunk);
    }
    parse_cifar10(&bytes)
}

pub fn parse_cifar10(bytes: &[u8]) -> Result<DatasetHandle> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD_LEN) {
        return Err(Error::format(
            "cifar10.record",
            format!("{} bytes is not a positive multiple of {CIFAR_RECORD_LEN}", bytes.len()),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD_LEN;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * 3072);
    for rec in bytes.chunks_exact(CIFAR_RECORD_LEN) {
        labels.push(rec[0] as usize);
        data.extend(rec[1..].iter().map(|&b| f64::from(b) / 255.0));
    }
    let inputs = Tensor::from_vec(&[n, 3, 32, 32], data)?;
    DatasetHandle::new("cifar10", inputs, labels, 10)
}

/// `K` Gaussian clusters in `d` dimensions.
///
/// Cluster `k` is centered at `s * (e_k - 1/K)` (the vertices of a centered
/// simplex scaled by a fixed separation `s`), perturbed per coordinate by
/// `spread * N(0, 1)` and squashed into `(0, 1)` by `x -> (1 + tanh(x)) / 2`.
/// Samples are interleaved by class.
pub fn synth_blobs(num_classes: usize, dim: usize, per_class: usize, spread: f64, seed: u64) -> Result<DatasetHandle> {
    synth_blobs_from(num_classes, dim, per_class, spread, &mut RngStream::new(seed, 0))
}

/// Train and test draws from the same blob distribution, using independent
/// streams of `seed`.
pub fn synth_blobs_split(
    num_classes: usize,
    dim: usize,
    train_per_class: usize,
    test_per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<(DatasetHandle, DatasetHandle)> {
    let train = synth_blobs_from(num_classes, dim, train_per_class, spread, &mut RngStream::new(seed, 0))?;
    let test = synth_blobs_from(num_classes, dim, test_per_class, spread, &mut RngStream::new(seed, 1))?;
    Ok((train, test))
}

fn synth_blobs_from(
    num_classes: usize,
    dim: usize,
    per_class: usize,
    spread: f64,
    rng: &mut RngStream,
) -> Result<DatasetHandle> {
    if num_classes < 2 || dim < 2 {
        return Err(Error::invalid(format!(
            "synth_blobs needs K >= 2 and d >= 2, got K={num_classes}, d={dim}"
        )));
    }
    if num_classes > dim {
        return Err(Error::invalid(format!(
            "synth_blobs places centers on simplex vertices and needs K <= d, got K={num_classes}, d={dim}"
        )));
    }
    if !(spread > 0.0) || !spread.is_finite() {
        return Err(Error::invalid(format!("spread must be > 0, got {spread}")));
    }
    if per_class == 0 {
        return Err(Error::invalid("per_class must be >= 1"));
    }
    let n = num_classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    let offset = BLOB_SEPARATION / num_classes as f64;
    for _ in 0..per_class {
        for k in 0..num_classes {
            for j in 0..dim {
                let center = if j == k {
                    BLOB_SEPARATION - offset
                } else if j < num_classes {
                    -offset
                } else {
                    0.0
                };
                let u = center + spread * rng.standard_normal();
                data.push(0.5 * (1.0 + u.tanh()));
            }
            labels.push(k);
        }
    }
    let inputs = Tensor::from_vec(&[n, dim], data)?;
    DatasetHandle::new("synth-blobs", inputs, labels, num_classes)
}

/// Blob center of class `k` in input space (the image of the pre-squash
/// center), useful for nearest-centroid baselines.
pub fn blob_center(num_classes: usize, dim: usize, k: usize) -> Vec<f64> {
    let offset = BLOB_SEPARATION / num_classes as f64;
    (0..dim)
        .map(|j| {
            let c = if j == k {
                BLOB_SEPARATION - offset
            } else if j < num_classes {
                -offset
            } else {
                0.0
            };
            0.5 * (1.0 + f64::tanh(c))
        })
        .collect()
}

/// Serializes a dataset in the fixture format:
///
/// ```text
/// magic        8 bytes "CRTDATA1"
/// name         u32 length + UTF-8
/// num_classes  u32
/// sample rank  u32, then rank x u32 dims
/// count        u32
/// labels       count x u32
/// inputs       count x prod(dims) x f64
/// ```
///
/// All integers and reals little-endian.
pub fn encode_fixture(ds: &DatasetHandle) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(FIXTURE_MAGIC);
    out.extend_from_slice(&(ds.name.len() as u32).to_le_bytes());
    out.extend_from_slice(ds.name.as_bytes());
    out.extend_from_slice(&(ds.num_classes as u32).to_le_bytes());
    let shape = ds.sample_shape();
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    for &y in &ds.labels {
        out.extend_from_slice(&(y as u32).to_le_bytes());
    }
    for v in ds.inputs.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_fixture(bytes: &[u8]) -> Result<DatasetHandle> {
    let mut pos = 0usize;
    let mut take = |n: usize, field: &str| -> Result<&[u8]> {
        let s = pos
            .checked_add(n)
            .and_then(|end| bytes.get(pos..end))
            .ok_or_else(|| Error::format(field, "unexpected end of fixture"))?;
        pos += n;
        Ok(s)
    };
    if take(8, "magic")? != FIXTURE_MAGIC {
        return Err(Error::format("magic", "not a dataset fixture"));
    }
    let le = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize;
    let name_len = le(take(4, "name")?);
    let name =
        String::from_utf8(take(name_len, "name")?.to_vec()).map_err(|_| Error::format("name", "invalid UTF-8"))?;
    let k = le(take(4, "num_classes")?);
    let rank = le(take(4, "shape")?);
    let mut shape = vec![0];
    for _ in 0..rank {
        shape.push(le(take(4, "shape")?));
    }
    let n = le(take(4, "count")?);
    shape[0] = n;
    let mut labels = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        labels.push(le(take(4, "labels")?));
    }
    let total = shape
        .iter()
        .try_fold(8usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format("shape", "dimensions overflow"))?;
    let raw = take(total, "inputs")?;
    let data = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    if pos != bytes.len() {
        return Err(Error::format("inputs", "trailing bytes after inputs"));
    }
    DatasetHandle::new(&name, Tensor::from_vec(&shape, data)?, labels, k)
}

pub fn write_fixture(path: &Path, ds: &DatasetHandle) -> Result<()> {
    crate::fsutil::atomic_write(path, &encode_fixture(ds))
}

pub fn read_fixture(path: &Path) -> Result<DatasetHandle> {
    decode_fixture(&fs::read(path)?)
}
