//! Datasets: a seeded synthetic generator and an IDX reader/writer.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::seeds::{SeedStreams, Stream};
use crate::trainer::Dataset;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Train, validation and test portions of one dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

/// Gaussian clusters in `[0, 1]^dim`.
///
/// Class `k` is centred at `0.5 + s_kj * a_j` with `s_kj = ±1`. The first
/// `robust_dims` coordinates have half-separation `margin / 2` and noise
/// `sigma`; the rest are weak features with half-separation
/// `weak_margin / 2` and noise `weak_sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub dim: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub margin: f64,
    pub sigma: f64,
    pub robust_dims: usize,
    pub weak_margin: f64,
    pub weak_sigma: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 2,
            dim: 16,
            n_train: 20000,
            n_test: 1000,
            margin: 0.35,
            sigma: 0.07,
            robust_dims: 1,
            weak_margin: 0.1,
            weak_sigma: 0.03,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::config(format!("dataset.{field}"), msg));
        if self.n_classes < 2 {
            return bad("n_classes", format!("need at least 2 classes, got {}", self.n_classes));
        }
        if self.dim < 2 {
            return bad("dim", format!("need at least 2 dimensions, got {}", self.dim));
        }
        if self.n_train < 10 {
            return bad("n_train", format!("need at least 10 examples, got {}", self.n_train));
        }
        if self.n_test == 0 {
            return bad("n_test", "must be at least 1".into());
        }
        if self.robust_dims > self.dim {
            return bad("robust_dims", format!("{} exceeds dim {}", self.robust_dims, self.dim));
        }
        for (field, m) in [("margin", self.margin), ("weak_margin", self.weak_margin)] {
            if !(0.0..=1.0).contains(&m) {
                return bad(field, format!("{m} does not fit class means inside the [0, 1] box"));
            }
        }
        for (field, s) in [("sigma", self.sigma), ("weak_sigma", self.weak_sigma)] {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(field, format!("must be a non-negative number, got {s}"));
            }
        }
        Ok(())
    }
}

pub fn make_synthetic_dataset(spec: &SyntheticSpec, seed: u64) -> Result<Splits> {
    spec.validate()?;
    let mut rng = SeedStreams::new(seed).rng(Stream::Dataset);
    let (c, dim) = (spec.n_classes, spec.dim);

    let signs: Vec<Vec<f64>> = if c == 2 {
        vec![vec![-1.0; dim], vec![1.0; dim]]
    } else {
        (0..c)
            .map(|_| (0..dim).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect())
            .collect()
    };
    let half: Vec<f64> = (0..dim)
        .map(|j| if j < spec.robust_dims { spec.margin } else { spec.weak_margin } / 2.0)
        .collect();
    let noise: Vec<Normal<f64>> = (0..dim)
        .map(|j| {
            let s = if j < spec.robust_dims { spec.sigma } else { spec.weak_sigma };
            Normal::new(0.0, s).map_err(|e| Error::config("dataset.sigma", e.to_string()))
        })
        .collect::<Result<_>>()?;

    let total = spec.n_train + spec.n_test;
    let mut labels: Vec<usize> = (0..total).map(|i| i % c).collect();
    labels.shuffle(&mut rng);
    let mut data = Vec::with_capacity(total * dim);
    for &y in &labels {
        for j in 0..dim {
            let v = 0.5 + signs[y][j] * half[j] + noise[j].sample(&mut rng);
            data.push(v.clamp(0.0, 1.0));
        }
    }
    let all = Dataset::new(Tensor::new(vec![total, dim], data)?, labels, c)?;

    let n_val = spec.n_train / 10;
    let idx: Vec<usize> = (0..total).collect();
    Ok(Splits {
        validation: all.subset(&idx[..n_val])?,
        train: all.subset(&idx[n_val..spec.n_train])?,
        test: all.subset(&idx[spec.n_train..])?,
    })
}

/// IDX files for the optional real-data path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxSpec {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub train_count: usize,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    pub test_count: usize,
}

impl IdxSpec {
    pub fn load(&self) -> Result<Splits> {
        let full = load_idx_subset(&self.train_images, &self.train_labels, self.train_count)?;
        let test = load_idx_subset(&self.test_images, &self.test_labels, self.test_count)?;
        let n_classes = full.n_classes.max(test.n_classes);
        let n_val = full.len() / 10;
        let idx: Vec<usize> = (0..full.len()).collect();
        let relabel = |d: Dataset| Dataset::new(d.inputs, d.labels, n_classes);
        Ok(Splits {
            validation: relabel(full.subset(&idx[..n_val])?)?,
            train: relabel(full.subset(&idx[n_val..])?)?,
            test: relabel(test)?,
        })
    }
}

struct IdxHeader {
    dims: Vec<usize>,
    body: usize,
}

fn read_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{}: truncated header", path.display())))
}

fn parse_header(bytes: &[u8], magic: u32, path: &Path) -> Result<IdxHeader> {
    let found = read_u32(bytes, 0, path)?;
    if found != magic {
        return Err(Error::Format(format!(
            "{}: magic {found:#010x}, expected {magic:#010x}",
            path.display()
        )));
    }
    let rank = (magic & 0xff) as usize;
    let dims = (0..rank)
        .map(|k| read_u32(bytes, 4 + 4 * k, path).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    Ok(IdxHeader { dims, body: 4 + 4 * rank })
}

fn check_count(count: usize, available: usize, path: &Path) -> Result<()> {
    if count == 0 {
        return Err(Error::InvalidTask("example count must be at least 1".into()));
    }
    if count > available {
        return Err(Error::Range(format!(
            "{}: requested {count} examples, file holds {available}",
            path.display()
        )));
    }
    Ok(())
}

/// First `count` images as rows of `[count, rows * cols]` scaled to `[0, 1]`.
pub fn read_idx_images(path: &Path, count: usize) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    let h = parse_header(&bytes, IDX_IMAGES_MAGIC, path)?;
    check_count(count, h.dims[0], path)?;
    let width = h.dims[1] * h.dims[2];
    let pixels = bytes
        .get(h.body..h.body + count * width)
        .ok_or_else(|| Error::Format(format!("{}: truncated image data", path.display())))?;
    Tensor::new(vec![count, width], pixels.iter().map(|&p| p as f64 / 255.0).collect())
}

/// First `count` labels.
pub fn read_idx_labels(path: &Path, count: usize) -> Result<Vec<usize>> {
    let bytes = fs::read(path)?;
    let h = parse_header(&bytes, IDX_LABELS_MAGIC, path)?;
    check_count(count, h.dims[0], path)?;
    let labels = bytes
        .get(h.body..h.body + count)
        .ok_or_else(|| Error::Format(format!("{}: truncated label data", path.display())))?;
    Ok(labels.iter().map(|&l| l as usize).collect())
}

fn idx_count(path: &Path, magic: u32) -> Result<usize> {
    let bytes = fs::read(path)?;
    Ok(parse_header(&bytes, magic, path)?.dims[0])
}

pub fn load_idx_subset(images: &Path, labels: &Path, count: usize) -> Result<Dataset> {
    let (n_img, n_lab) = (idx_count(images, IDX_IMAGES_MAGIC)?, idx_count(labels, IDX_LABELS_MAGIC)?);
    if n_img != n_lab {
        return Err(Error::Consistency(format!(
            "{} holds {n_img} images but {} holds {n_lab} labels",
            images.display(),
            labels.display()
        )));
    }
    let inputs = read_idx_images(images, count)?;
    let labels = read_idx_labels(labels, count)?;
    let n_classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    Dataset::new(inputs, labels, n_classes)
}

pub fn write_idx_images(path: &Path, pixels: &[u8], count: usize, rows: usize, cols: usize) -> Result<()> {
    if pixels.len() != count * rows * cols {
        return Err(Error::Dimension(format!(
            "{} pixels for {count} images of {rows}x{cols}",
            pixels.len()
        )));
    }
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    fs::write(path, out)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out)?;
    Ok(())
}

/// Writes `data` back out as IDX with 8-bit pixels.
pub fn write_idx_dataset(data: &Dataset, rows: usize, cols: usize, images: &Path, labels: &Path) -> Result<()> {
    if rows * cols != data.dim() {
        return Err(Error::Dimension(format!("{rows}x{cols} images but {} features", data.dim())));
    }
    let pixels: Vec<u8> = data.inputs.data().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
    let labs = data
        .labels
        .iter()
        .map(|&l| u8::try_from(l).map_err(|_| Error::Range(format!("label {l} does not fit a byte"))))
        .collect::<Result<Vec<_>>>()?;
    write_idx_images(images, &pixels, data.len(), rows, cols)?;
    write_idx_labels(labels, &labs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_is_seeded() {
        let spec = SyntheticSpec { n_train: 100, n_test: 20, ..Default::default() };
        let a = make_synthetic_dataset(&spec, 3).unwrap();
        let b = make_synthetic_dataset(&spec, 3).unwrap();
        let c = make_synthetic_dataset(&spec, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train, c.train);
        assert_eq!((a.train.len(), a.validation.len(), a.test.len()), (90, 10, 20));
        assert!(a.train.inputs.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn synthetic_rejects_bad_specs() {
        let base = SyntheticSpec::default();
        for spec in [
            SyntheticSpec { n_test: 0, ..base.clone() },
            SyntheticSpec { margin: 1.5, ..base.clone() },
            SyntheticSpec { dim: 1, ..base.clone() },
            SyntheticSpec { n_classes: 1, ..base.clone() },
        ] {
            assert!(matches!(make_synthetic_dataset(&spec, 0), Err(Error::Config { .. })));
        }
    }

    #[test]
    fn idx_header_checks() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("img"), dir.path().join("lab"));
        write_idx_images(&img, &[0, 255, 128, 64, 1, 2, 3, 4], 2, 2, 2).unwrap();
        write_idx_labels(&lab, &[3, 7]).unwrap();
        let d = load_idx_subset(&img, &lab, 2).unwrap();
        assert_eq!(d.inputs.shape(), &[2, 4]);
        assert_eq!(d.inputs.data()[1], 1.0);
        assert_eq!(d.labels, vec![3, 7]);
        assert!(matches!(load_idx_subset(&img, &lab, 3), Err(Error::Range(_))));
        assert!(matches!(load_idx_subset(&img, &lab, 0), Err(Error::InvalidTask(_))));
        assert!(matches!(load_idx_subset(&lab, &lab, 1), Err(Error::Format(_))));
        write_idx_labels(&lab, &[3]).unwrap();
        assert!(matches!(load_idx_subset(&img, &lab, 1), Err(Error::Consistency(_))));
    }
}
