//! Datasets: MNIST from IDX files and the synthetic heatmap task.

pub mod idx;

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::refactor::TaskDefinition;
use crate::tasks::{BinaryApTask, Joint, MulticlassTask, PoseTask, TaskKind};

pub const MNIST_FILES: [&str; 4] = [
    "train-images-idx3-ubyte",
    "train-labels-idx1-ubyte",
    "t10k-images-idx3-ubyte",
    "t10k-labels-idx1-ubyte",
];

/// Training images held out for validation.
pub const MNIST_VALIDATION: usize = 6000;

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Labels(Vec<usize>),
    Binary(Vec<bool>),
    Joints(Vec<Joint>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Labels(v) => v.len(),
            Targets::Binary(v) => v.len(),
            Targets::Joints(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn select(&self, idx: &[usize]) -> Targets {
        match self {
            Targets::Labels(v) => Targets::Labels(idx.iter().map(|&i| v[i]).collect()),
            Targets::Binary(v) => Targets::Binary(idx.iter().map(|&i| v[i]).collect()),
            Targets::Joints(v) => Targets::Joints(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Row-major inputs (`len x dim`) and their targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<f64>,
    pub dim: usize,
    pub targets: Targets,
}

impl Dataset {
    pub fn new(inputs: Vec<f64>, dim: usize, targets: Targets) -> Result<Self> {
        if dim == 0 || inputs.len() != dim * targets.len() {
            return Err(Error::invalid(format!(
                "{} input values do not form {} rows of width {dim}",
                inputs.len(),
                targets.len()
            )));
        }
        Ok(Dataset {
            inputs,
            dim,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: self.gather_rows(idx),
            dim: self.dim,
            targets: self.targets.select(idx),
        }
    }

    pub fn range(&self, start: usize, end: usize) -> Dataset {
        self.subset(&(start..end).collect::<Vec<_>>())
    }

    fn gather_rows(&self, idx: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            out.extend_from_slice(self.row(i));
        }
        out
    }

    pub fn batch_inputs(&self, idx: &[usize]) -> Tensor {
        Tensor::matrix(idx.len(), self.dim, self.gather_rows(idx)).expect("batch shape")
    }

    /// Task definition for the examples at `idx`.
    pub fn task_for(&self, kind: TaskKind, idx: &[usize]) -> Result<Box<dyn TaskDefinition>> {
        match (kind, &self.targets) {
            (TaskKind::Multiclass { classes }, Targets::Labels(y)) => Ok(Box::new(
                MulticlassTask::new(idx.iter().map(|&i| y[i]).collect(), classes)?,
            )),
            (TaskKind::BinaryAp, Targets::Binary(f)) => Ok(Box::new(BinaryApTask::new(
                idx.iter().map(|&i| f[i]).collect(),
            )?)),
            (TaskKind::Pose { grid, radius }, Targets::Joints(j)) => Ok(Box::new(PoseTask::new(
                grid,
                radius,
                idx.iter().map(|&i| j[i]).collect(),
            )?)),
            (kind, _) => Err(Error::invalid(format!(
                "dataset targets do not fit task {kind}"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Option<Dataset>,
}

impl Splits {
    /// Shifts and scales every split by the mean and standard deviation of
    /// all training input values. Returns `(mean, std)`.
    pub fn standardize(&mut self) -> (f64, f64) {
        let n = self.train.inputs.len().max(1) as f64;
        let mean = self.train.inputs.iter().sum::<f64>() / n;
        let var = self
            .train
            .inputs
            .iter()
            .map(|x| (x - mean) * (x - mean))
            .sum::<f64>()
            / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        let sets = [
            Some(&mut self.train),
            Some(&mut self.val),
            self.test.as_mut(),
        ];
        for d in sets.into_iter().flatten() {
            for x in d.inputs.iter_mut() {
                *x = (*x - mean) / std;
            }
        }
        (mean, std)
    }
}

/// Raw MNIST: images scaled to [0, 1] and digit labels.
#[derive(Debug, Clone)]
pub struct Mnist {
    pub train_images: Vec<f64>,
    pub train_labels: Vec<u8>,
    pub test_images: Vec<f64>,
    pub test_labels: Vec<u8>,
}

pub const MNIST_DIM: usize = 28 * 28;

fn mnist_hint(dir: &Path) -> String {
    format!(
        "put the four uncompressed MNIST IDX files ({}) in {} and verify them with `uniloss fetch-mnist-check --data-dir {}`",
        MNIST_FILES.join(", "),
        dir.display(),
        dir.display()
    )
}

pub fn mnist_paths(dir: &Path) -> Result<[PathBuf; 4]> {
    let paths = MNIST_FILES.map(|f| dir.join(f));
    if let Some(missing) = paths.iter().find(|p| !p.is_file()) {
        return Err(Error::MissingDataset {
            path: missing.clone(),
            hint: mnist_hint(dir),
        });
    }
    Ok(paths)
}

pub fn load_mnist(dir: &Path) -> Result<Mnist> {
    let [tri, trl, tei, tel] = mnist_paths(dir)?;
    let train = idx::load_images(&tri)?;
    let test = idx::load_images(&tei)?;
    let train_labels = idx::load_labels(&trl)?;
    let test_labels = idx::load_labels(&tel)?;
    for (imgs, labels, what) in [
        (&train, &train_labels, "train"),
        (&test, &test_labels, "test"),
    ] {
        if imgs.rows * imgs.cols != MNIST_DIM {
            return Err(Error::invalid(format!(
                "{what} images are {}x{}, expected 28x28",
                imgs.rows, imgs.cols
            )));
        }
        if imgs.count != labels.len() {
            return Err(Error::invalid(format!(
                "{what}: {} images but {} labels",
                imgs.count,
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y > 9) {
            return Err(Error::InvalidLabel {
                label: bad as usize,
                classes: 10,
            });
        }
    }
    Ok(Mnist {
        train_images: train.pixels,
        train_labels,
        test_images: test.pixels,
        test_labels,
    })
}

/// Zero is the positive class.
pub fn make_binary_labels(labels: &[u8]) -> Vec<bool> {
    labels.iter().map(|&y| y == 0).collect()
}

impl Mnist {
    /// Train / validation (last 6000 training images) / test splits, with
    /// pixels standardized by the training split's statistics.
    pub fn splits(&self, kind: TaskKind) -> Result<Splits> {
        let targets = |labels: &[u8]| -> Result<Targets> {
            match kind {
                TaskKind::Multiclass { classes: 10 } => Ok(Targets::Labels(
                    labels.iter().map(|&y| y as usize).collect(),
                )),
                TaskKind::BinaryAp => Ok(Targets::Binary(make_binary_labels(labels))),
                other => Err(Error::invalid(format!(
                    "MNIST does not provide task {other:?}"
                ))),
            }
        };
        let full = Dataset::new(
            self.train_images.clone(),
            MNIST_DIM,
            targets(&self.train_labels)?,
        )?;
        let cut = full.len() - MNIST_VALIDATION;
        let train = full.range(0, cut);
        let val = full.range(cut, full.len());
        let test = Dataset::new(
            self.test_images.clone(),
            MNIST_DIM,
            targets(&self.test_labels)?,
        )?;
        let mut splits = Splits {
            train,
            val,
            test: Some(test),
        };
        splits.standardize();
        Ok(splits)
    }
}

/// Parameters of the synthetic heatmap task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyPoseConfig {
    pub grid: usize,
    pub radius: f64,
    /// Standard deviation of the additive pixel noise.
    pub noise: f64,
    /// Spread of the bright blob in pixels.
    pub blob_sigma: f64,
}

impl Default for ToyPoseConfig {
    fn default() -> Self {
        ToyPoseConfig {
            grid: 16,
            radius: 2.0,
            noise: 0.3,
            blob_sigma: 1.0,
        }
    }
}

/// `count` images with one bright blob at a uniformly random pixel plus
/// Gaussian noise, clamped to [0, 1] and quantised to multiples of 1/255.
/// The blob center is the ground-truth joint.
pub fn gen_toy_pose(count: usize, config: ToyPoseConfig, seed: u64) -> Result<Dataset> {
    let g = config.grid;
    if g < 4 {
        return Err(Error::invalid(format!(
            "toy pose grid must be >= 4, got {g}"
        )));
    }
    if !(config.radius >= 1.0 && config.radius < g as f64 / 2.0) {
        return Err(Error::invalid(format!(
            "toy pose radius must satisfy 1 <= r < G/2, got {}",
            config.radius
        )));
    }
    if !(config.noise >= 0.0) || !(config.blob_sigma > 0.0) {
        return Err(Error::invalid("noise must be >= 0 and blob sigma > 0"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut inputs = Vec::with_capacity(count * g * g);
    let mut joints = Vec::with_capacity(count);
    let s2 = 2.0 * config.blob_sigma * config.blob_sigma;
    for _ in 0..count {
        let joint = (rng.random_range(0..g), rng.random_range(0..g));
        for p in 0..g * g {
            let (r, c) = ((p / g) as f64, (p % g) as f64);
            let d2 = (r - joint.0 as f64).powi(2) + (c - joint.1 as f64).powi(2);
            let mut v = (-d2 / s2).exp();
            if config.noise > 0.0 {
                v += config.noise * normal.sample(&mut rng);
            }
            inputs.push((v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
        }
        joints.push(joint);
    }
    Dataset::new(inputs, g * g, Targets::Joints(joints))
}
