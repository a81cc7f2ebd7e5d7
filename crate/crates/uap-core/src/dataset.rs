//! Synthetic blob datasets, class-balanced attack-set sampling, and the
//! dataset file format.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{Reader, Writer};
use crate::rng::Rng;
use crate::tensor::Tensor;

const DATASET_MAGIC: &str = "UAPD";
const DATASET_VERSION: u8 = 1;

/// Total center draws allowed before blob generation gives up.
const MAX_CENTER_ATTEMPTS: usize = 10_000;
/// Consecutive rejections for one center before the placement radius grows.
const INFLATE_AFTER: usize = 500;

/// Labelled feature vectors, immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    class_names: Vec<String>,
}

impl Dataset {
    /// Validates shapes, label range, and finiteness (via `Tensor`).
    pub fn new(images: Tensor, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        let shape = images.shape();
        if shape.len() != 2 {
            return Err(Error::InvalidParameter(format!(
                "images must be 2-dimensional [N, d], got shape {shape:?}"
            )));
        }
        let (n, d) = (shape[0], shape[1]);
        if n == 0 || d == 0 {
            return Err(Error::InvalidParameter(
                "dataset must contain at least one image with at least one feature".into(),
            ));
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: labels.len(),
            });
        }
        if class_names.is_empty() {
            return Err(Error::InvalidParameter("no class names".into()));
        }
        let num_classes = class_names.len();
        for &label in &labels {
            if label >= num_classes {
                return Err(Error::LabelOutOfRange { label, num_classes });
            }
        }
        Ok(Self {
            images,
            labels,
            class_names,
        })
    }

    pub fn num_images(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.images.shape()[1]
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// Row `i` as a borrowed slice of length `dim()`.
    pub fn row(&self, i: usize) -> &[f32] {
        let d = self.dim();
        &self.images.data()[i * d..(i + 1) * d]
    }

    /// Row `i` as an owned 1-D tensor.
    pub fn image(&self, i: usize) -> Tensor {
        Tensor::from_vec(self.row(i).to_vec())
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Global (min, max) over all feature values, used for clamping.
    pub fn value_range(&self) -> (f32, f32) {
        let mut lo = f32::INFINITY;
        let mut hi = f32::NEG_INFINITY;
        for &v in self.images.data() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        (lo, hi)
    }
}

/// Center subspace dimension: grows slowly with the class count so that
/// decision boundaries between different class pairs stay correlated.
fn subspace_dim(num_classes: usize, dim: usize) -> usize {
    dim.min(num_classes.div_ceil(3).max(2))
}

/// Orthonormal rows spanning a random `r`-dimensional subspace of R^dim.
fn orthonormal_basis(dim: usize, r: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    assert!(r <= dim);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(r);
    while basis.len() < r {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.standard_normal() as f64).collect();
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
            for (vi, bi) in v.iter_mut().zip(b) {
                *vi -= dot * bi;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        // A fresh Gaussian draw is almost never inside the current span; the
        // retry guards against the measure-zero case without biasing anything.
        if norm > 1e-9 {
            for vi in &mut v {
                *vi /= norm;
            }
            basis.push(v);
        }
    }
    basis
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `num_classes` Gaussian clusters in R^dim with pairwise center distance
/// at least `margin * noise_sigma`.
///
/// Cluster centers live in a shared random low-dimensional subspace. That
/// keeps the normals of all inter-class decision boundaries correlated: a
/// single well-chosen direction can cross boundaries of many classes, while
/// an isotropic random direction of the same norm spends most of its budget
/// outside the subspace. Points are `center + noise_sigma * N(0, I)` in the
/// full space.
pub fn generate_blobs(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    margin: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    if per_class < 1 {
        return Err(Error::InvalidParameter("per_class must be >= 1".into()));
    }
    if dim < 2 {
        return Err(Error::InvalidParameter(format!(
            "dim must be >= 2, got {dim}"
        )));
    }
    if !(margin > 0.0) || !(noise_sigma > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "margin and sigma must be positive, got margin={margin}, sigma={noise_sigma}"
        )));
    }

    let mut rng = Rng::new(seed);
    let r = subspace_dim(num_classes, dim);
    let basis = orthonormal_basis(dim, r, &mut rng);
    let min_distance = margin * noise_sigma;

    // Coefficient spread starts just above the rejection floor so accepted
    // centers sit near the requested separation; when a center cannot be
    // placed the spread grows and placement continues.
    let mut coeff_scale = 1.4 * min_distance / (2.0 * r as f64).sqrt();
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    let mut attempts = 0usize;
    while centers.len() < num_classes {
        let mut consecutive_failures = 0usize;
        loop {
            attempts += 1;
            if attempts > MAX_CENTER_ATTEMPTS {
                return Err(Error::CenterPlacement {
                    classes: num_classes,
                    min_distance,
                    attempts: attempts - 1,
                });
            }
            let mut cand = vec![0.0f64; dim];
            for b in &basis {
                let coef = coeff_scale * rng.standard_normal() as f64;
                for (ci, bi) in cand.iter_mut().zip(b) {
                    *ci += coef * bi;
                }
            }
            if centers.iter().all(|c| euclidean(c, &cand) >= min_distance) {
                centers.push(cand);
                break;
            }
            consecutive_failures += 1;
            if consecutive_failures >= INFLATE_AFTER {
                coeff_scale *= 1.3;
                consecutive_failures = 0;
            }
        }
    }
    for i in 0..centers.len() {
        for j in 0..i {
            assert!(
                euclidean(&centers[i], &centers[j]) >= min_distance,
                "center pair ({j}, {i}) violates the distance floor"
            );
        }
    }

    let n = num_classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (class, center) in centers.iter().enumerate() {
        for _ in 0..per_class {
            for &c in center {
                data.push((c + noise_sigma * rng.standard_normal() as f64) as f32);
            }
            labels.push(class);
        }
    }
    let class_names = (0..num_classes).map(|c| format!("blob-{c}")).collect();
    Dataset::new(Tensor::new(vec![n, dim], data)?, labels, class_names)
}

fn gather(dataset: &Dataset, indices: &[usize]) -> Result<Dataset> {
    let d = dataset.dim();
    let mut data = Vec::with_capacity(indices.len() * d);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        data.extend_from_slice(dataset.row(i));
        labels.push(dataset.label(i));
    }
    Dataset::new(
        Tensor::new(vec![indices.len(), d], data)?,
        labels,
        dataset.class_names().to_vec(),
    )
}

/// Splits `dataset` into a class-balanced attack set of exactly `per_class`
/// images per class and the held-out remainder (None when nothing is left).
/// Both halves are shuffled deterministically by `seed`.
pub fn split_attack_set(
    dataset: &Dataset,
    per_class: usize,
    seed: u64,
) -> Result<(Dataset, Option<Dataset>)> {
    if per_class < 1 {
        return Err(Error::InvalidParameter("per_class must be >= 1".into()));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.num_classes()];
    for (i, &label) in dataset.labels().iter().enumerate() {
        by_class[label].push(i);
    }
    for (class, members) in by_class.iter().enumerate() {
        if members.len() < per_class {
            return Err(Error::InsufficientClass {
                class,
                available: members.len(),
                needed: per_class,
            });
        }
    }
    let mut rng = Rng::new(seed);
    let mut attack = Vec::with_capacity(per_class * by_class.len());
    let mut held = Vec::new();
    for members in &mut by_class {
        rng.shuffle(members);
        attack.extend_from_slice(&members[..per_class]);
        held.extend_from_slice(&members[per_class..]);
    }
    rng.shuffle(&mut attack);
    rng.shuffle(&mut held);
    let attack_set = gather(dataset, &attack)?;
    let held_out = if held.is_empty() {
        None
    } else {
        Some(gather(dataset, &held)?)
    };
    Ok((attack_set, held_out))
}

/// Class-balanced sample of exactly `per_class` images per class.
pub fn sample_attack_set(dataset: &Dataset, per_class: usize, seed: u64) -> Result<Dataset> {
    Ok(split_attack_set(dataset, per_class, seed)?.0)
}

/// Median l2 norm over the rows; even counts average the middle pair.
pub fn median_l2_norm(dataset: &Dataset) -> f64 {
    let mut norms: Vec<f64> = (0..dataset.num_images())
        .map(|i| {
            dataset
                .row(i)
                .iter()
                .map(|&v| {
                    let v = v as f64;
                    v * v
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = norms.len();
    if n % 2 == 1 {
        norms[n / 2]
    } else {
        0.5 * (norms[n / 2 - 1] + norms[n / 2])
    }
}

pub fn dataset_to_bytes(dataset: &Dataset) -> Vec<u8> {
    let mut w = Writer::new();
    w.magic(DATASET_MAGIC);
    w.u8(DATASET_VERSION);
    w.u32(dataset.num_classes() as u32);
    for name in dataset.class_names() {
        w.string(name);
    }
    w.u32(dataset.num_images() as u32);
    w.u32(dataset.dim() as u32);
    w.f32_slice(dataset.images().data());
    for &label in dataset.labels() {
        w.u32(label as u32);
    }
    w.into_bytes()
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader::new(bytes);
    r.expect_magic(DATASET_MAGIC)?;
    let version = r.u8("version")?;
    if version != DATASET_VERSION {
        return Err(Error::Parse {
            offset: r.offset() - 1,
            what: format!("unsupported dataset version {version}"),
        });
    }
    let num_classes = r.u32("class count")? as usize;
    let mut class_names = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        class_names.push(r.string("class name")?);
    }
    let n = r.u32("image count")? as usize;
    let d = r.u32("feature dimension")? as usize;
    let at = r.offset();
    let data = r.f32_vec(n * d, "image data")?;
    let images = Tensor::new(vec![n, d], data).map_err(|e| Error::Parse {
        offset: at,
        what: format!("image data: {e}"),
    })?;
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(r.u32("label")? as usize);
    }
    r.finish("dataset")?;
    Dataset::new(images, labels, class_names)
}

pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, dataset_to_bytes(dataset))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    dataset_from_bytes(&std::fs::read(path)?)
}
