//! Task streams: Gaussian-cluster synthetic streams and class-split streams.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::model::TaskId;
use crate::nn::Matrix;
use crate::rng::{derive, Purpose, Rng};
use crate::{Error, Result};

/// Isotropic standard deviation of every synthetic class cluster.
pub const CLUSTER_STD: f64 = 0.5;
/// Half-width of the cube cluster means are drawn from.
pub const MEAN_RANGE: f64 = 3.0;

/// Inputs with one class label per row.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dataset {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Vec<usize>) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {} inputs",
                labels.len(),
                inputs.rows()
            )));
        }
        Ok(Self { inputs, labels })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            inputs: Matrix::zeros(0, dim),
            labels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            inputs: self.inputs.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Dataset::new(self.inputs.vstack(&other.inputs)?, labels)
    }

    /// Index batches in dataset order; the last batch may be short.
    pub fn sequential_batches(&self, batch_size: usize) -> impl Iterator<Item = Vec<usize>> + '_ {
        let n = self.len();
        (0..n).step_by(batch_size.max(1)).map(move |s| (s..(s + batch_size).min(n)).collect())
    }

    /// Index batches over a fresh permutation drawn from `rng`.
    pub fn shuffled_batches<R: rand::Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Vec<Vec<usize>> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(rng);
        idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
    }
}

/// Train/validation/test proportions.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.8, val: 0.1 }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        if !(self.train > 0.0 && self.val >= 0.0 && self.train + self.val < 1.0) {
            return Err(Error::InvalidArgument(format!("bad split fractions {self:?}")));
        }
        Ok(())
    }

    /// Split counts for `n` samples; test receives the remainder.
    fn counts(&self, n: usize) -> (usize, usize) {
        let tr = libm::round(self.train * n as f64) as usize;
        let va = libm::round(self.val * n as f64) as usize;
        let tr = tr.min(n);
        (tr, va.min(n - tr))
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaskDataset {
    pub task_id: TaskId,
    pub num_classes: usize,
    /// Stream-wide identity of each local label.
    pub class_ids: Vec<usize>,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum StreamKind {
    Dissimilar,
    Similar,
    SplitIdx,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaskStream {
    pub kind: StreamKind,
    pub tasks: Vec<TaskDataset>,
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.tasks.first().map_or(0, |t| t.train.dim())
    }

    /// One dataset covering every class of the stream, labelled by class
    /// identity. Used as the downstream set for representation probes.
    pub fn merged(&self, task_id: TaskId) -> Result<TaskDataset> {
        let mut global: Vec<usize> = self.tasks.iter().flat_map(|t| t.class_ids.iter().copied()).collect();
        global.sort_unstable();
        global.dedup();
        let index: BTreeMap<usize, usize> = global.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        let dim = self.input_dim();
        let mut parts = [Dataset::empty(dim), Dataset::empty(dim), Dataset::empty(dim)];
        for t in &self.tasks {
            for (slot, split) in parts.iter_mut().zip([&t.train, &t.val, &t.test]) {
                let relabeled = Dataset {
                    inputs: split.inputs.clone(),
                    labels: split.labels.iter().map(|&l| index[&t.class_ids[l]]).collect(),
                };
                *slot = slot.concat(&relabeled)?;
            }
        }
        let [train, val, test] = parts;
        Ok(TaskDataset {
            task_id,
            num_classes: global.len(),
            class_ids: global,
            train,
            val,
            test,
        })
    }
}

/// Parameters shared by the synthetic generators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticParams {
    pub n_tasks: usize,
    pub classes_per_task: usize,
    pub dim: usize,
    pub samples_per_class: usize,
    pub seed: u64,
    pub cluster_std: f64,
    pub split: SplitFractions,
}

impl SyntheticParams {
    pub fn new(n_tasks: usize, classes_per_task: usize, dim: usize, samples_per_class: usize, seed: u64) -> Self {
        Self {
            n_tasks,
            classes_per_task,
            dim,
            samples_per_class,
            seed,
            cluster_std: CLUSTER_STD,
            split: SplitFractions::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_tasks == 0 || self.classes_per_task == 0 || self.dim == 0 || self.samples_per_class == 0 {
            return Err(Error::InvalidArgument(format!("synthetic stream sizes must be positive: {self:?}")));
        }
        if !(self.cluster_std > 0.0 && self.cluster_std.is_finite()) {
            return Err(Error::InvalidArgument("cluster std must be positive".into()));
        }
        self.split.validate()
    }
}

fn uniform_point(rng: &mut Rng, dim: usize) -> Vec<f64> {
    let u = Uniform::new_inclusive(-MEAN_RANGE, MEAN_RANGE).expect("finite bounds");
    (0..dim).map(|_| u.sample(rng)).collect()
}

/// Draw `samples_per_class` points around each mean and split per class.
fn sample_task(
    task_id: TaskId,
    means: &[Vec<f64>],
    class_ids: Vec<usize>,
    p: &SyntheticParams,
    rng: &mut Rng,
) -> Result<TaskDataset> {
    let dim = p.dim;
    let mut splits: [(Vec<f64>, Vec<usize>); 3] = Default::default();
    for (label, mu) in means.iter().enumerate() {
        let mut rows: Vec<Vec<f64>> = (0..p.samples_per_class)
            .map(|_| {
                mu.iter()
                    .map(|&m| {
                        let e: f64 = StandardNormal.sample(rng);
                        m + p.cluster_std * e
                    })
                    .collect()
            })
            .collect();
        rows.shuffle(rng);
        let (ntr, nva) = p.split.counts(rows.len());
        for (k, row) in rows.into_iter().enumerate() {
            let s = if k < ntr {
                0
            } else if k < ntr + nva {
                1
            } else {
                2
            };
            splits[s].0.extend(row);
            splits[s].1.push(label);
        }
    }
    let [train, val, test] = splits.map(|(x, y)| {
        let rows = y.len();
        Dataset::new(Matrix::new(rows, dim, x).expect("row-major fill"), y).expect("aligned")
    });
    Ok(TaskDataset {
        task_id,
        num_classes: means.len(),
        class_ids,
        train,
        val,
        test,
    })
}

/// Every task gets its own fresh Gaussian clusters, so no class is shared.
pub fn gen_dissimilar_stream(
    n_tasks: usize,
    classes_per_task: usize,
    dim: usize,
    samples_per_class: usize,
    seed: u64,
) -> Result<TaskStream> {
    dissimilar_stream(&SyntheticParams::new(n_tasks, classes_per_task, dim, samples_per_class, seed))
}

pub fn dissimilar_stream(p: &SyntheticParams) -> Result<TaskStream> {
    p.validate()?;
    let mut tasks = Vec::with_capacity(p.n_tasks);
    for t in 0..p.n_tasks {
        let mut rng = derive(p.seed, Purpose::Data, t as u64);
        let means: Vec<Vec<f64>> = (0..p.classes_per_task).map(|_| uniform_point(&mut rng, p.dim)).collect();
        let ids = (t * p.classes_per_task..(t + 1) * p.classes_per_task).collect();
        tasks.push(sample_task(TaskId(t + 1), &means, ids, p, &mut rng)?);
    }
    Ok(TaskStream {
        kind: StreamKind::Dissimilar,
        tasks,
    })
}

/// One shared set of classes; each task sees them through a small random
/// rotation and per-class mean shift, both bounded by `drift`.
pub fn gen_similar_stream(
    n_tasks: usize,
    classes: usize,
    dim: usize,
    samples_per_class: usize,
    seed: u64,
    drift: f64,
) -> Result<TaskStream> {
    similar_stream(&SyntheticParams::new(n_tasks, classes, dim, samples_per_class, seed), drift)
}

pub fn similar_stream(p: &SyntheticParams, drift: f64) -> Result<TaskStream> {
    p.validate()?;
    if !(drift >= 0.0 && drift.is_finite()) {
        return Err(Error::InvalidArgument(format!("drift must be non-negative, got {drift}")));
    }
    let mut base_rng = derive(p.seed, Purpose::Data, u64::MAX);
    let base: Vec<Vec<f64>> = (0..p.classes_per_task).map(|_| uniform_point(&mut base_rng, p.dim)).collect();
    let mut tasks = Vec::with_capacity(p.n_tasks);
    for t in 0..p.n_tasks {
        let mut rng = derive(p.seed, Purpose::Data, t as u64);
        let means: Vec<Vec<f64>> = if drift == 0.0 {
            base.clone()
        } else {
            let rotations = random_rotation(&mut rng, p.dim, drift);
            base.iter()
                .map(|mu| {
                    let mut m = mu.clone();
                    for &(i, j, a) in &rotations {
                        let (c, s) = (libm::cos(a), libm::sin(a));
                        let (x, y) = (m[i], m[j]);
                        m[i] = c * x - s * y;
                        m[j] = s * x + c * y;
                    }
                    let shift = bounded_shift(&mut rng, p.dim, drift);
                    m.iter().zip(shift).map(|(a, b)| a + b).collect()
                })
                .collect()
        };
        tasks.push(sample_task(TaskId(t + 1), &means, (0..p.classes_per_task).collect(), p, &mut rng)?);
    }
    Ok(TaskStream {
        kind: StreamKind::Similar,
        tasks,
    })
}

/// `dim` Givens rotations on random planes with angles in `[-drift, drift]`.
fn random_rotation(rng: &mut Rng, dim: usize, drift: f64) -> Vec<(usize, usize, f64)> {
    if dim < 2 {
        return Vec::new();
    }
    let angle = Uniform::new_inclusive(-drift, drift).expect("finite bounds");
    (0..dim)
        .map(|_| {
            let i = rng.random_range(0..dim);
            let mut j = rng.random_range(0..dim - 1);
            if j >= i {
                j += 1;
            }
            (i, j, angle.sample(rng))
        })
        .collect()
}

/// Random direction with length uniform in `[0, drift]`.
fn bounded_shift(rng: &mut Rng, dim: usize, drift: f64) -> Vec<f64> {
    let dir: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let norm = libm::sqrt(dir.iter().map(|v| v * v).sum::<f64>());
    let len = drift * rng.random::<f64>();
    if norm == 0.0 {
        return alloc::vec![0.0; dim];
    }
    dir.into_iter().map(|v| v / norm * len).collect()
}

/// Partition the classes of a labelled dataset into `n_tasks` tasks.
///
/// Class ids are shuffled with `seed` and cut into contiguous groups; labels
/// are remapped to `0..classes_per_task` inside each task, and each class's
/// samples are split into train/val/test.
pub fn split_by_class(inputs: &Matrix, labels: &[usize], n_tasks: usize, seed: u64) -> Result<TaskStream> {
    split_by_class_with(inputs, labels, n_tasks, seed, SplitFractions::default())
}

pub fn split_by_class_with(
    inputs: &Matrix,
    labels: &[usize],
    n_tasks: usize,
    seed: u64,
    split: SplitFractions,
) -> Result<TaskStream> {
    split.validate()?;
    if inputs.rows() != labels.len() {
        return Err(Error::ShapeMismatch(format!("{} labels for {} inputs", labels.len(), inputs.rows())));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut classes: Vec<usize> = by_class.keys().copied().collect();
    if n_tasks == 0 || classes.is_empty() || !classes.len().is_multiple_of(n_tasks) {
        return Err(Error::InvalidArgument(format!(
            "{} classes cannot be split evenly into {n_tasks} tasks",
            classes.len()
        )));
    }
    let per_task = classes.len() / n_tasks;
    classes.shuffle(&mut derive(seed, Purpose::Split, 0));

    let mut tasks = Vec::with_capacity(n_tasks);
    for (t, group) in classes.chunks(per_task).enumerate() {
        let mut rng = derive(seed, Purpose::Split, t as u64 + 1);
        let mut parts: [Vec<usize>; 3] = Default::default();
        let mut local: [Vec<usize>; 3] = Default::default();
        for (local_label, class) in group.iter().enumerate() {
            let mut idx = by_class[class].clone();
            idx.shuffle(&mut rng);
            let (ntr, nva) = split.counts(idx.len());
            for (k, i) in idx.into_iter().enumerate() {
                let s = if k < ntr {
                    0
                } else if k < ntr + nva {
                    1
                } else {
                    2
                };
                parts[s].push(i);
                local[s].push(local_label);
            }
        }
        let mk = |s: usize| Dataset {
            inputs: inputs.select_rows(&parts[s]),
            labels: local[s].clone(),
        };
        tasks.push(TaskDataset {
            task_id: TaskId(t + 1),
            num_classes: group.len(),
            class_ids: group.to_vec(),
            train: mk(0),
            val: mk(1),
            test: mk(2),
        });
    }
    Ok(TaskStream {
        kind: StreamKind::SplitIdx,
        tasks,
    })
}
