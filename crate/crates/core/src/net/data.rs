//! Labelled datasets and the seedable synthetic tasks used for pretraining
//! and fine-tuning.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::NetError;
use crate::matrix::Matrix;
use crate::tensor_io::{self, read_json, read_tensor, write_json, write_tensor, TensorFile};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Matrix,
    y: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<usize>, num_classes: usize) -> Result<Self, NetError> {
        if x.rows() != y.len() {
            return Err(NetError::ShapeMismatch(format!(
                "{} feature rows but {} labels",
                x.rows(),
                y.len()
            )));
        }
        if num_classes == 0 {
            return Err(NetError::InvalidDataset(
                "num_classes must be positive".into(),
            ));
        }
        if let Some(&bad) = y.iter().find(|&&c| c >= num_classes) {
            return Err(NetError::InvalidDataset(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        if !x.is_finite() {
            return Err(NetError::InvalidDataset(
                "features contain non-finite values".into(),
            ));
        }
        Ok(Self { x, y, num_classes })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &[usize] {
        &self.y
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn features(&self) -> usize {
        self.x.cols()
    }

    /// Rows in the given order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Seeded shuffle, then the first `train_fraction` of rows become the
    /// training split.
    pub fn split(&self, train_fraction: f64, seed: u64) -> (Dataset, Dataset) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = ((self.len() as f64) * train_fraction).round() as usize;
        let cut = cut.min(self.len());
        (self.subset(&idx[..cut]), self.subset(&idx[cut..]))
    }
}

/// Synthetic classification task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticTask {
    /// Isotropic Gaussian clusters around random centres.
    Blobs {
        samples_per_class: usize,
        num_classes: usize,
        features: usize,
        /// Standard deviation of the centres.
        separation: f64,
        /// Standard deviation of points around their centre.
        spread: f64,
    },
    /// Concentric rings in the first two features, Gaussian noise elsewhere.
    Rings {
        samples_per_class: usize,
        num_classes: usize,
        features: usize,
        noise: f64,
    },
}

impl SyntheticTask {
    pub fn num_classes(&self) -> usize {
        match *self {
            SyntheticTask::Blobs { num_classes, .. } | SyntheticTask::Rings { num_classes, .. } => {
                num_classes
            }
        }
    }

    pub fn features(&self) -> usize {
        match *self {
            SyntheticTask::Blobs { features, .. } | SyntheticTask::Rings { features, .. } => {
                features
            }
        }
    }

    pub fn generate(&self, seed: u64) -> Result<Dataset, NetError> {
        match *self {
            SyntheticTask::Blobs {
                samples_per_class,
                num_classes,
                features,
                separation,
                spread,
            } => blobs(
                samples_per_class,
                num_classes,
                features,
                separation,
                spread,
                seed,
            ),
            SyntheticTask::Rings {
                samples_per_class,
                num_classes,
                features,
                noise,
            } => rings(samples_per_class, num_classes, features, noise, seed),
        }
    }
}

fn normal(std: f64) -> Result<Normal<f64>, NetError> {
    Normal::new(0.0, std).map_err(|e| NetError::InvalidDataset(format!("bad deviation {std}: {e}")))
}

pub fn blobs(
    samples_per_class: usize,
    num_classes: usize,
    features: usize,
    separation: f64,
    spread: f64,
    seed: u64,
) -> Result<Dataset, NetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centre_dist = normal(separation)?;
    let noise = normal(spread)?;
    let centres: Vec<Vec<f64>> = (0..num_classes)
        .map(|_| {
            (0..features)
                .map(|_| centre_dist.sample(&mut rng))
                .collect()
        })
        .collect();
    let mut data = Vec::with_capacity(samples_per_class * num_classes * features);
    let mut y = Vec::with_capacity(samples_per_class * num_classes);
    for (class, centre) in centres.iter().enumerate() {
        for _ in 0..samples_per_class {
            data.extend(centre.iter().map(|c| c + noise.sample(&mut rng)));
            y.push(class);
        }
    }
    let x = Matrix::from_vec(y.len(), features, data).expect("sized above");
    Dataset::new(x, y, num_classes)
}

pub fn rings(
    samples_per_class: usize,
    num_classes: usize,
    features: usize,
    noise: f64,
    seed: u64,
) -> Result<Dataset, NetError> {
    if features < 2 {
        return Err(NetError::InvalidDataset(
            "rings need at least two features".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = normal(noise)?;
    let mut data = Vec::with_capacity(samples_per_class * num_classes * features);
    let mut y = Vec::with_capacity(samples_per_class * num_classes);
    for class in 0..num_classes {
        let radius = (class + 1) as f64;
        for _ in 0..samples_per_class {
            let angle = rng.random_range(0.0..std::f64::consts::TAU);
            data.push(radius * angle.cos() + jitter.sample(&mut rng));
            data.push(radius * angle.sin() + jitter.sample(&mut rng));
            data.extend((2..features).map(|_| jitter.sample(&mut rng)));
            y.push(class);
        }
    }
    let x = Matrix::from_vec(y.len(), features, data).expect("sized above");
    Dataset::new(x, y, num_classes)
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetMeta {
    num_classes: usize,
}

/// Reads `x`, `y` and `meta.json` from a dataset directory. Labels are stored
/// as integral floats.
pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset, NetError> {
    let dir = dir.as_ref();
    let x = read_tensor(dir.join("x"))?.to_matrix()?;
    let raw_y = read_tensor(dir.join("y"))?.to_vector()?;
    let meta: DatasetMeta = read_json(&dir.join("meta.json"))?;
    let y = raw_y
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && v < usize::MAX as f64 {
                Ok(v as usize)
            } else {
                Err(NetError::InvalidDataset(format!(
                    "label {v} is not a class index"
                )))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Dataset::new(x, y, meta.num_classes)
}

pub fn write_dataset(dir: impl AsRef<Path>, data: &Dataset) -> Result<(), NetError> {
    let dir = dir.as_ref();
    tensor_io::ensure_dir(dir)?;
    write_tensor(dir.join("x"), &TensorFile::from_matrix(&data.x))?;
    let y: Vec<f64> = data.y.iter().map(|&c| c as f64).collect();
    write_tensor(dir.join("y"), &TensorFile::from_f64(vec![y.len()], y)?)?;
    write_json(
        &dir.join("meta.json"),
        &DatasetMeta {
            num_classes: data.num_classes,
        },
    )?;
    Ok(())
}
