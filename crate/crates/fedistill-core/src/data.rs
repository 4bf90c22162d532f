//! Labeled datasets, a synthetic Gaussian generator, and the per-client
//! 60-20-20 train/validation/test partition.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math;
use crate::rng::{self, derive_seed, rng_from_seed};
use crate::split::largest_remainder;
use crate::tensor::Tensor;

/// In-memory classification dataset: `[n×d]` features (image data is
/// scaled to `[0,1]` at load time) plus class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if !features.is_matrix() {
            return Err(Error::dimension(format!(
                "dataset features must be [n×d], got shape {:?}",
                features.shape()
            )));
        }
        if features.rows() != labels.len() {
            return Err(Error::dimension(format!(
                "dataset has {} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::parameter("dataset needs at least one class"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::index(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label_of(&self, index: usize) -> usize {
        self.labels[index]
    }

    /// Copies the rows at `indices` into a dense batch.
    pub fn gather(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        if indices.is_empty() {
            return Err(Error::data("gather called with no indices"));
        }
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::index(format!(
                    "sample index {i} out of range for dataset of {}",
                    self.len()
                )));
            }
            data.extend_from_slice(&self.features.data()[i * d..(i + 1) * d]);
            labels.push(self.labels[i]);
        }
        Ok((Tensor::matrix(indices.len(), d, data)?, labels))
    }

    /// Indices of every sample with the given label.
    pub fn indices_of_class(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Per-client index sets into one dataset; pairwise disjoint,
/// sized 60:20:20 by largest-remainder rounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientData {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl ClientData {
    pub fn total(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn all_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .copied()
    }
}

/// Synthetic dataset: each class is an isotropic Gaussian around a
/// distinct seeded mean in `[0,1]^dim`. Means are re-drawn (up to 100
/// attempts each) until they sit at least `6·spread` apart, falling back
/// to the most separated candidate seen — small spreads give cleanly
/// separable classes, large spreads deliberately overlapping ones.
pub fn synth_gaussian(
    num_classes: usize,
    per_class: usize,
    dim: usize,
    spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes == 0 || per_class == 0 || dim == 0 {
        return Err(Error::parameter(
            "synth_gaussian: num_classes, per_class, dim must be positive",
        ));
    }
    if !(spread > 0.0) {
        return Err(Error::parameter(format!(
            "synth_gaussian: spread must be positive, got {spread}"
        )));
    }
    let mut rng = rng_from_seed(derive_seed(seed, &[rng::stream::SYNTH]));

    let min_sep = 6.0 * spread;
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(num_classes);
    for _ in 0..num_classes {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for _ in 0..100 {
            let candidate: Vec<f64> = (0..dim).map(|_| rng.random_range(0.0..1.0)).collect();
            let sep = means
                .iter()
                .map(|m| dist(m, &candidate))
                .fold(f64::INFINITY, math::min);
            if sep >= min_sep {
                best = Some((sep, candidate));
                break;
            }
            if best.as_ref().is_none_or(|(s, _)| sep > *s) {
                best = Some((sep, candidate));
            }
        }
        means.push(best.expect("at least one candidate drawn").1);
    }

    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let n = num_classes * per_class;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (class, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            for &m in mean {
                data.push(m + spread * normal.sample(&mut rng));
            }
            labels.push(class);
        }
    }
    Dataset::new(Tensor::matrix(n, dim, data)?, labels, num_classes)
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += (x - y) * (x - y);
    }
    math::sqrt(acc)
}

/// Seeded shuffle, then 60/20/20 split by largest-remainder rounding with
/// remainders awarded in train > val > test order.
pub fn partition_client(indices: &[usize], seed: u64) -> Result<ClientData> {
    if indices.len() < 5 {
        return Err(Error::size(format!(
            "partition_client needs at least 5 samples, got {}",
            indices.len()
        )));
    }
    let mut shuffled = indices.to_vec();
    let mut rng = rng_from_seed(derive_seed(seed, &[rng::stream::PARTITION]));
    shuffled.shuffle(&mut rng);

    let sizes = largest_remainder(shuffled.len(), &[0.6, 0.2, 0.2]);
    let (train_n, val_n) = (sizes[0], sizes[1]);
    Ok(ClientData {
        train: shuffled[..train_n].to_vec(),
        val: shuffled[train_n..train_n + val_n].to_vec(),
        test: shuffled[train_n + val_n..].to_vec(),
    })
}

/// [`partition_client`] with a coverage retry: re-shuffles (up to 100
/// derived seeds) until the train and val subsets each contain every
/// label present in `indices`. Returns the partition and whether coverage
/// was achieved.
pub fn partition_client_covering(
    indices: &[usize],
    dataset: &Dataset,
    seed: u64,
) -> Result<(ClientData, bool)> {
    let mut wanted: Vec<usize> = indices.iter().map(|&i| dataset.label_of(i)).collect();
    wanted.sort_unstable();
    wanted.dedup();

    let mut fallback = None;
    for attempt in 0..100u64 {
        let client = partition_client(indices, derive_seed(seed, &[attempt]))?;
        let covers = |set: &[usize]| {
            wanted
                .iter()
                .all(|&l| set.iter().any(|&i| dataset.label_of(i) == l))
        };
        if covers(&client.train) && covers(&client.val) {
            return Ok((client, true));
        }
        if fallback.is_none() {
            fallback = Some(client);
        }
    }
    Ok((fallback.expect("at least one attempt ran"), false))
}
