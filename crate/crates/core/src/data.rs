//! Dataset construction and ingestion.
//!
//! Three sources, one shape: a [`LabeledDataset`] is a labeled
//! [`SampleMatrix`] plus per-class counts and a provenance record that pins
//! down exactly where the bytes came from (generator seed or file digests).
//!
//! * Synthetic long-tailed Gaussian mixtures — class means on the unit
//!   sphere, isotropic spread, class counts decaying exponentially from
//!   `N_max` down by the imbalance factor.
//! * Long-tail subsampling of an existing balanced dataset.
//! * IDX image files (the MNIST container format), pixels scaled to [0, 1].

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::manifold::SampleMatrix;

/// Generator streams, so one experiment seed can drive every data concern
/// without overlap. Class means share a stream across the long-tailed train
/// split and the balanced evaluation split: same seed, same geometry.
pub const MEANS_STREAM: u64 = 1;
pub const TRAIN_SAMPLES_STREAM: u64 = 2;
pub const EVAL_SAMPLES_STREAM: u64 = 3;
pub const SUBSAMPLE_STREAM: u64 = 4;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

const CONTAINER_MAGIC: u32 = u32::from_le_bytes(*b"OURD");
const CONTAINER_VERSION: u8 = 1;

/// Where a dataset's bytes came from; echoed into run manifests so results
/// stay reproducible.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Seeded { seed: u64, descriptor: String },
    SourceFiles {
        images_sha256: String,
        labels_sha256: String,
    },
    ContainerFile { sha256: String },
}

/// A labeled point set with its class bookkeeping.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    pub samples: SampleMatrix,
    pub classes: usize,
    /// Per-class sample counts; sums to `samples.count()`.
    pub counts: Vec<usize>,
    pub provenance: Provenance,
    /// Raster shape `(rows, cols)` when the points are images.
    pub image_shape: Option<(usize, usize)>,
}

impl LabeledDataset {
    /// Wraps a labeled matrix, deriving and validating the per-class counts.
    pub fn from_samples(
        samples: SampleMatrix,
        classes: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        let labels = samples.labels().ok_or(Error::MissingLabels)?;
        if classes == 0 {
            return Err(Error::EmptyCounts);
        }
        let mut counts = vec![0usize; classes];
        for &y in labels {
            if y >= classes {
                return Err(Error::LabelOutOfRange { label: y, classes });
            }
            counts[y] += 1;
        }
        Ok(Self {
            samples,
            classes,
            counts,
            provenance,
            image_shape: None,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.count()
    }

    pub fn is_empty(&self) -> bool {
        false // SampleMatrix guarantees at least one column
    }

    pub fn dim(&self) -> usize {
        self.samples.dim()
    }

    pub fn labels(&self) -> &[usize] {
        self.samples.labels().expect("dataset labels are mandatory")
    }

    /// `max(Nᵢ)/min(Nᵢ)` over classes that actually hold samples.
    pub fn imbalance_factor(&self) -> f64 {
        let nonzero: Vec<usize> = self.counts.iter().copied().filter(|&c| c > 0).collect();
        let max = *nonzero.iter().max().unwrap_or(&0) as f64;
        let min = *nonzero.iter().min().unwrap_or(&0) as f64;
        max / min
    }
}

/// The exponential long-tail profile `Nᵢ = round(N_max · IF^(−i/(C−1)))`.
pub fn longtail_counts(classes: usize, n_max: usize, imbalance_factor: f64) -> Result<Vec<usize>> {
    if classes < 2 {
        return Err(Error::Config(format!(
            "long-tail profile needs at least 2 classes, got {classes}"
        )));
    }
    if !imbalance_factor.is_finite() || imbalance_factor < 1.0 {
        return Err(Error::InvalidImbalance(imbalance_factor));
    }
    let mut counts = Vec::with_capacity(classes);
    for i in 0..classes {
        let exponent = -(i as f64) / (classes as f64 - 1.0);
        let n = (n_max as f64 * imbalance_factor.powf(exponent)).round() as usize;
        if n == 0 {
            return Err(Error::ClassTooSmall {
                class_id: i,
                needed: 1,
                got: 0,
            });
        }
        counts.push(n);
    }
    Ok(counts)
}

/// Class means drawn seeded on the unit sphere in `dim` dimensions; shared
/// between the long-tailed train split and the balanced evaluation split.
pub fn class_means(classes: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(MEANS_STREAM);
    (0..classes)
        .map(|_| loop {
            let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        })
        .collect()
}

fn gaussian_blocks(
    means: &[Vec<f64>],
    counts: &[usize],
    cluster_spread: f64,
    rng: &mut ChaCha8Rng,
) -> (Vec<f64>, Vec<usize>) {
    let dim = means[0].len();
    let total: usize = counts.iter().sum();
    let mut data = Vec::with_capacity(total * dim);
    let mut labels = Vec::with_capacity(total);
    for (class, (&n, mean)) in counts.iter().zip(means).enumerate() {
        for _ in 0..n {
            for m in mean {
                let e: f64 = rng.sample(StandardNormal);
                data.push(m + cluster_spread * e);
            }
            labels.push(class);
        }
    }
    (data, labels)
}

/// Synthetic long-tailed Gaussian mixture: `classes` isotropic clusters with
/// unit-sphere means and the exponential count profile.
pub fn synth_gaussian_longtail(
    classes: usize,
    dim: usize,
    n_max: usize,
    imbalance_factor: f64,
    cluster_spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if dim == 0 {
        return Err(Error::DimensionZero);
    }
    if n_max < classes {
        return Err(Error::TooFewSamples {
            needed: classes,
            got: n_max,
        });
    }
    if !cluster_spread.is_finite() || cluster_spread < 0.0 {
        return Err(Error::Config(format!(
            "cluster_spread must be a non-negative real, got {cluster_spread}"
        )));
    }
    let counts = longtail_counts(classes, n_max, imbalance_factor)?;
    let means = class_means(classes, dim, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TRAIN_SAMPLES_STREAM);
    let (data, labels) = gaussian_blocks(&means, &counts, cluster_spread, &mut rng);
    let samples = SampleMatrix::with_labels(dim, data, labels)?;
    LabeledDataset::from_samples(
        samples,
        classes,
        Provenance::Seeded {
            seed,
            descriptor: format!(
                "synth_gaussian_longtail(C={classes}, d={dim}, n_max={n_max}, \
                 if={imbalance_factor}, spread={cluster_spread})"
            ),
        },
    )
}

/// Balanced split from the same cluster geometry as
/// [`synth_gaussian_longtail`] with the same seed — held-out evaluation data
/// drawn from an independent generator stream.
pub fn synth_balanced_eval(
    classes: usize,
    dim: usize,
    per_class: usize,
    cluster_spread: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if dim == 0 {
        return Err(Error::DimensionZero);
    }
    if per_class == 0 {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let counts = vec![per_class; classes];
    let means = class_means(classes, dim, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(EVAL_SAMPLES_STREAM);
    let (data, labels) = gaussian_blocks(&means, &counts, cluster_spread, &mut rng);
    let samples = SampleMatrix::with_labels(dim, data, labels)?;
    LabeledDataset::from_samples(
        samples,
        classes,
        Provenance::Seeded {
            seed,
            descriptor: format!(
                "synth_balanced_eval(C={classes}, d={dim}, per_class={per_class}, \
                 spread={cluster_spread})"
            ),
        },
    )
}

/// Seeded long-tail subsample of a balanced dataset: class `i` keeps
/// `round(base · IF^(−i/(C−1)))` of its samples, where `base` is the
/// smallest class count of the input (so every target is attainable).
pub fn subsample_longtail(
    balanced: &LabeledDataset,
    imbalance_factor: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    let max = *balanced.counts.iter().max().expect("counts non-empty");
    let min = *balanced.counts.iter().min().expect("counts non-empty");
    if max - min > 1 {
        return Err(Error::Config(format!(
            "subsample_longtail expects a balanced input (counts within ±1), \
             got spread {min}..{max}"
        )));
    }
    let targets = longtail_counts(balanced.classes, min, imbalance_factor)?;
    let labels = balanced.labels();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SUBSAMPLE_STREAM);
    let mut keep = Vec::new();
    for (class, &target) in targets.iter().enumerate() {
        let mut members: Vec<usize> = (0..balanced.len())
            .filter(|&i| labels[i] == class)
            .collect();
        // Seeded partial Fisher-Yates: the first `target` slots are an
        // unbiased sample of the class.
        for i in 0..target.min(members.len().saturating_sub(1)) {
            let j = rng.random_range(i..members.len());
            members.swap(i, j);
        }
        keep.extend_from_slice(&members[..target]);
    }
    let samples = balanced.samples.select_columns(&keep)?;
    let mut out = LabeledDataset::from_samples(
        samples,
        balanced.classes,
        Provenance::Seeded {
            seed,
            descriptor: format!("subsample_longtail(if={imbalance_factor})"),
        },
    )?;
    out.image_shape = balanced.image_shape;
    Ok(out)
}

/// Loads an IDX image/label file pair (the MNIST container format: big-endian
/// magic and dimensions, u8 payload). Pixels land in [0, 1] as `f64`.
pub fn load_idx_images(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let images_bytes = std::fs::read(images_path)?;
    let labels_bytes = std::fs::read(labels_path)?;

    let (count, rows, cols, pixels) = parse_idx_images(&images_bytes)?;
    let labels = parse_idx_labels(&labels_bytes)?;
    if labels.len() != count {
        return Err(Error::CountMismatch {
            images: count,
            labels: labels.len(),
        });
    }
    if count == 0 {
        return Err(Error::EmptyMatrix);
    }

    let dim = rows * cols;
    let data: Vec<f64> = pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let labels_usize: Vec<usize> = labels.iter().map(|&b| b as usize).collect();
    let classes = labels_usize.iter().max().map_or(0, |&m| m + 1);
    let samples = SampleMatrix::with_labels(dim, data, labels_usize)?;
    let mut ds = LabeledDataset::from_samples(
        samples,
        classes,
        Provenance::SourceFiles {
            images_sha256: sha256_hex(&images_bytes),
            labels_sha256: sha256_hex(&labels_bytes),
        },
    )?;
    ds.image_shape = Some((rows, cols));
    Ok(ds)
}

fn parse_idx_images(bytes: &[u8]) -> Result<(usize, usize, usize, &[u8])> {
    let magic = read_be_u32(bytes, 0, "IDX image header")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_IMAGES_MAGIC,
            got: magic,
        });
    }
    let count = read_be_u32(bytes, 4, "IDX image count")? as usize;
    let rows = read_be_u32(bytes, 8, "IDX image rows")? as usize;
    let cols = read_be_u32(bytes, 12, "IDX image cols")? as usize;
    let need = 16 + count * rows * cols;
    if bytes.len() < need {
        return Err(Error::Truncated {
            what: "IDX image payload",
        });
    }
    Ok((count, rows, cols, &bytes[16..need]))
}

fn parse_idx_labels(bytes: &[u8]) -> Result<&[u8]> {
    let magic = read_be_u32(bytes, 0, "IDX label header")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::BadMagic {
            expected: IDX_LABELS_MAGIC,
            got: magic,
        });
    }
    let count = read_be_u32(bytes, 4, "IDX label count")? as usize;
    let need = 8 + count;
    if bytes.len() < need {
        return Err(Error::Truncated {
            what: "IDX label payload",
        });
    }
    Ok(&bytes[8..need])
}

fn read_be_u32(bytes: &[u8], offset: usize, what: &'static str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or(Error::Truncated { what })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Writes the dataset to the binary container: magic, version, u32 classes,
/// u32 dim, u64 N, per-class u64 counts, column-major f64 payload, u16
/// labels — all little-endian.
pub fn save_container(ds: &LabeledDataset, path: &Path) -> Result<()> {
    if ds.classes > u16::MAX as usize + 1 {
        return Err(Error::Config(format!(
            "container labels are u16; {} classes exceed that",
            ds.classes
        )));
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&CONTAINER_MAGIC.to_le_bytes())?;
    w.write_all(&[CONTAINER_VERSION])?;
    w.write_all(&(ds.classes as u32).to_le_bytes())?;
    w.write_all(&(ds.dim() as u32).to_le_bytes())?;
    w.write_all(&(ds.len() as u64).to_le_bytes())?;
    for &c in &ds.counts {
        w.write_all(&(c as u64).to_le_bytes())?;
    }
    for v in ds.samples.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    for &y in ds.labels() {
        w.write_all(&(y as u16).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_container(path: &Path) -> Result<LabeledDataset> {
    let bytes = std::fs::read(path)?;
    let mut r = bytes.as_slice();
    let magic = read_le_u32(&mut r, "container magic")?;
    if magic != CONTAINER_MAGIC {
        return Err(Error::BadMagic {
            expected: CONTAINER_MAGIC,
            got: magic,
        });
    }
    let mut version = [0u8; 1];
    read_into(&mut r, &mut version, "container version")?;
    if version[0] != CONTAINER_VERSION {
        return Err(Error::UnsupportedVersion {
            what: "dataset container",
            got: version[0],
        });
    }
    let classes = read_le_u32(&mut r, "container classes")? as usize;
    let dim = read_le_u32(&mut r, "container dim")? as usize;
    let n = read_le_u64(&mut r, "container count")? as usize;
    let mut counts = Vec::with_capacity(classes);
    for _ in 0..classes {
        counts.push(read_le_u64(&mut r, "container class counts")? as usize);
    }
    let mut data = Vec::with_capacity(dim * n);
    let mut b8 = [0u8; 8];
    for _ in 0..dim * n {
        read_into(&mut r, &mut b8, "container payload")?;
        data.push(f64::from_le_bytes(b8));
    }
    let mut labels = Vec::with_capacity(n);
    let mut b2 = [0u8; 2];
    for _ in 0..n {
        read_into(&mut r, &mut b2, "container labels")?;
        labels.push(u16::from_le_bytes(b2) as usize);
    }
    let samples = SampleMatrix::with_labels(dim, data, labels)?;
    let ds = LabeledDataset::from_samples(
        samples,
        classes,
        Provenance::ContainerFile {
            sha256: sha256_hex(&bytes),
        },
    )?;
    if ds.counts != counts {
        return Err(Error::Config(
            "container class counts disagree with its labels".into(),
        ));
    }
    Ok(ds)
}

fn read_into(r: &mut &[u8], buf: &mut [u8], what: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::Truncated { what })
}

fn read_le_u32(r: &mut &[u8], what: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_into(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_le_u64(r: &mut &[u8], what: &'static str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_into(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

/// Builds an in-memory IDX image/label pair (test fixtures and demos).
pub fn encode_idx(images: &[Vec<u8>], rows: usize, cols: usize, labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let mut img = Vec::new();
    img.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&(images.len() as u32).to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    for im in images {
        assert_eq!(im.len(), rows * cols);
        img.extend_from_slice(im);
    }
    let mut lab = Vec::new();
    lab.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    lab.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lab.extend_from_slice(labels);
    (img, lab)
}
