//! Synthetic datasets, the IDX image format and dataset digests.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NtkError, Result};
use crate::limit_kernel::EmpiricalMeasure;
use crate::numerics::RngStream;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Divisor applied to raw IDX pixel bytes.
pub const PIXEL_SCALE: f64 = 255.0;

/// Where a dataset came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum Provenance {
    Circle {
        count: usize,
        angle_offset: f64,
    },
    Sphere {
        count: usize,
        n0: usize,
        stream: RngStream,
    },
    Gaussian {
        count: usize,
        n0: usize,
        stream: RngStream,
    },
    IdxFile {
        images: PathBuf,
        labels: PathBuf,
        images_digest: String,
        labels_digest: String,
        limit: Option<usize>,
    },
}

#[derive(Clone, Debug)]
pub struct LabeledDataset {
    pub measure: EmpiricalMeasure,
    /// `N × n_L` regression targets.
    pub targets: Option<DMatrix<f64>>,
    /// Raw class labels for IDX data.
    pub labels: Option<Vec<u8>>,
    pub provenance: Provenance,
}

impl LabeledDataset {
    fn unlabeled(points: DMatrix<f64>, provenance: Provenance) -> Result<Self> {
        Ok(LabeledDataset {
            measure: EmpiricalMeasure::new(points)?,
            targets: None,
            labels: None,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.measure.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measure.is_empty()
    }

    /// Rows `indices` in order, keeping the provenance.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Ok(LabeledDataset {
            measure: self.measure.select(indices)?,
            targets: self
                .targets
                .as_ref()
                .map(|t| DMatrix::from_fn(indices.len(), t.ncols(), |r, c| t[(indices[r], c)])),
            labels: self.labels.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect()),
            provenance: self.provenance.clone(),
        })
    }

    pub fn digest(&self) -> String {
        digest_matrix(self.measure.points())
    }

    pub fn manifest(&self, scaling: &str) -> DatasetManifest {
        DatasetManifest {
            provenance: self.provenance.clone(),
            n: self.len(),
            n0: self.measure.input_dim(),
            digest: self.digest(),
            scaling: scaling.to_string(),
        }
    }
}

/// Reproducibility record for a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub provenance: Provenance,
    pub n: usize,
    pub n0: usize,
    pub digest: String,
    pub scaling: String,
}

/// `(cos γ_i, sin γ_i)` with `γ_i = angle_offset + 2πi / count`.
pub fn circle_dataset(count: usize, angle_offset: f64) -> Result<LabeledDataset> {
    if count == 0 {
        return Err(NtkError::arg("circle dataset needs at least one point"));
    }
    let points = DMatrix::from_fn(count, 2, |i, c| {
        let gamma = angle_offset + 2.0 * PI * i as f64 / count as f64;
        if c == 0 {
            gamma.cos()
        } else {
            gamma.sin()
        }
    });
    LabeledDataset::unlabeled(points, Provenance::Circle { count, angle_offset })
}

/// Points `(cos γ, sin γ)` for the given angles.
pub fn circle_points(angles: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(angles.len(), 2, |i, c| if c == 0 { angles[i].cos() } else { angles[i].sin() })
}

/// Uniform points on `S^{n0−1}` from normalized Gaussians, pairwise distinct.
pub fn sphere_dataset(count: usize, n0: usize, stream: RngStream) -> Result<LabeledDataset> {
    if n0 < 2 {
        return Err(NtkError::arg(format!("sphere dataset needs n0 >= 2, got {n0}")));
    }
    let mut rng = stream.rng();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut seen = HashSet::new();
    while rows.len() < count {
        let v: Vec<f64> = (0..n0).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            continue;
        }
        let row: Vec<f64> = v.iter().map(|x| x / norm).collect();
        let key: Vec<u64> = row.iter().map(|x| x.to_bits()).collect();
        if seen.insert(key) {
            rows.push(row);
        }
    }
    let points = DMatrix::from_fn(count, n0, |i, j| rows[i][j]);
    LabeledDataset::unlabeled(points, Provenance::Sphere { count, n0, stream })
}

/// Iid `N(0, Id_{n0})` rows, drawn row by row.
pub fn gaussian_dataset(count: usize, n0: usize, stream: RngStream) -> Result<LabeledDataset> {
    let mut rng = stream.rng();
    let values: Vec<f64> = (0..count * n0).map(|_| StandardNormal.sample(&mut rng)).collect();
    let points = DMatrix::from_row_slice(count, n0, &values);
    LabeledDataset::unlabeled(points, Provenance::Gaussian { count, n0, stream })
}

/// How IDX labels become regression targets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelEncoding {
    #[default]
    None,
    /// One column holding the digit value.
    Scalar,
    /// Ten columns, `1` at the digit.
    OneHot,
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| NtkError::IdxLength {
            path: path.to_path_buf(),
            expected: offset + 4,
            found: bytes.len(),
        })
}

fn check_magic(bytes: &[u8], expected: u32, path: &Path) -> Result<()> {
    let found = read_u32(bytes, 0, path)?;
    if found != expected {
        return Err(NtkError::IdxMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

fn check_length(bytes: &[u8], expected: usize, path: &Path) -> Result<()> {
    if bytes.len() < expected {
        return Err(NtkError::IdxLength {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    Ok(())
}

/// Raw contents of an IDX image file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count · rows · cols` bytes, image-major, row-major within an image.
    pub pixels: Vec<u8>,
}

pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<IdxImages> {
    check_magic(bytes, IDX_IMAGES_MAGIC, path)?;
    let count = read_u32(bytes, 4, path)? as usize;
    let rows = read_u32(bytes, 8, path)? as usize;
    let cols = read_u32(bytes, 12, path)? as usize;
    let len = count * rows * cols;
    check_length(bytes, 16 + len, path)?;
    Ok(IdxImages {
        count,
        rows,
        cols,
        pixels: bytes[16..16 + len].to_vec(),
    })
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    check_magic(bytes, IDX_LABELS_MAGIC, path)?;
    let count = read_u32(bytes, 4, path)? as usize;
    check_length(bytes, 8 + count, path)?;
    Ok(bytes[8..8 + count].to_vec())
}

pub fn encode_idx_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IDX_IMAGES_MAGIC, images.count as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

pub fn write_idx_images(path: &Path, images: &IdxImages) -> Result<()> {
    fs::write(path, encode_idx_images(images))?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    fs::write(path, encode_idx_labels(labels))?;
    Ok(())
}

/// Loads an image/label IDX pair, scaling pixels by `1/255`.
pub fn load_idx(images_path: &Path, labels_path: &Path, limit: Option<usize>, encoding: LabelEncoding) -> Result<LabeledDataset> {
    let image_bytes = fs::read(images_path)?;
    let label_bytes = fs::read(labels_path)?;
    let images = parse_idx_images(&image_bytes, images_path)?;
    let labels = parse_idx_labels(&label_bytes, labels_path)?;
    if images.count != labels.len() {
        return Err(NtkError::IdxConsistency(format!(
            "{} holds {} images but {} holds {} labels",
            images_path.display(),
            images.count,
            labels_path.display(),
            labels.len()
        )));
    }
    let n = limit.map_or(images.count, |l| l.min(images.count));
    let dim = images.rows * images.cols;
    let points = DMatrix::from_fn(n, dim, |i, j| images.pixels[i * dim + j] as f64 / PIXEL_SCALE);
    let labels = labels[..n].to_vec();
    let targets = match encoding {
        LabelEncoding::None => None,
        LabelEncoding::Scalar => Some(DMatrix::from_fn(n, 1, |i, _| labels[i] as f64)),
        LabelEncoding::OneHot => Some(DMatrix::from_fn(n, 10, |i, c| if labels[i] as usize == c { 1.0 } else { 0.0 })),
    };
    Ok(LabeledDataset {
        measure: EmpiricalMeasure::new(points)?,
        targets,
        labels: Some(labels),
        provenance: Provenance::IdxFile {
            images: images_path.to_path_buf(),
            labels: labels_path.to_path_buf(),
            images_digest: digest_bytes(&image_bytes),
            labels_digest: digest_bytes(&label_bytes),
            limit,
        },
    })
}

/// Standard MNIST training file names inside `dir`, if both exist.
pub fn locate_mnist(dir: &Path) -> Option<(PathBuf, PathBuf)> {
    let pairs = [
        ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        ("train-images.idx3-ubyte", "train-labels.idx1-ubyte"),
    ];
    pairs.iter().find_map(|(i, l)| {
        let (i, l) = (dir.join(i), dir.join(l));
        (i.is_file() && l.is_file()).then_some((i, l))
    })
}

/// `size` rows chosen by a seeded shuffle of all indices.
pub fn shuffled_batch(dataset: &LabeledDataset, size: usize, stream: RngStream) -> Result<LabeledDataset> {
    if size > dataset.len() {
        return Err(NtkError::arg(format!(
            "batch of {size} requested from a dataset of {}",
            dataset.len()
        )));
    }
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    indices.shuffle(&mut stream.rng());
    indices.truncate(size);
    dataset.select(&indices)
}

pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 over the shape and the little-endian bytes of the entries in row-major order.
pub fn digest_matrix(m: &DMatrix<f64>) -> String {
    let mut hasher = Sha256::new();
    hasher.update((m.nrows() as u64).to_le_bytes());
    hasher.update((m.ncols() as u64).to_le_bytes());
    for i in 0..m.nrows() {
        for x in m.row(i).iter() {
            hasher.update(x.to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}
