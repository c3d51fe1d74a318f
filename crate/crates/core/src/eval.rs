//! Continual-learning metrics and the pruning and probing experiments.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::{Dataset, TaskDataset};
use crate::model::{TaskId, TilModel};
use crate::nn::{loss_cross_entropy, Matrix, Network};
use crate::rng::{derive, Purpose};
use crate::trainer::{fit_head_only, TrainConfig};
use crate::{Error, Result};

/// `α[i][j]`: test accuracy of task `i` right after learning task `j`, `i ≤ j`.
///
/// Stored by column: column `j` holds tasks `1..=j`.
#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AccuracyMatrix {
    columns: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build from complete columns (column `j` must have `j` entries, 1-based).
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new();
        for c in columns {
            m.push_column(c)?;
        }
        Ok(m)
    }

    /// Append the accuracies of tasks `1..=T+1` after learning task `T+1`.
    pub fn push_column(&mut self, column: Vec<f64>) -> Result<()> {
        let expect = self.columns.len() + 1;
        if column.len() != expect {
            return Err(Error::ShapeMismatch(format!(
                "column {expect} needs {expect} entries, got {}",
                column.len()
            )));
        }
        if let Some(v) = column.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("accuracy {v} outside [0, 1]")));
        }
        self.columns.push(column);
        Ok(())
    }

    pub fn num_tasks(&self) -> usize {
        self.columns.len()
    }

    /// `α_i^j` with 1-based `i ≤ j`.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        if i == 0 || i > j {
            return None;
        }
        self.columns.get(j - 1)?.get(i - 1).copied()
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.columns.iter().enumerate().map(|(j, c)| c[j]).collect()
    }

    pub fn final_column(&self) -> Option<&[f64]> {
        self.columns.last().map(Vec::as_slice)
    }
}

/// Per-task accuracies of independent single-task models.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OneReference {
    pub beta: Vec<f64>,
}

impl OneReference {
    pub fn from_matrix(a: &AccuracyMatrix) -> Self {
        Self { beta: a.diagonal() }
    }
}

/// Mean of the final column.
pub fn avg_accuracy(a: &AccuracyMatrix) -> Result<f64> {
    let last = a
        .final_column()
        .ok_or_else(|| Error::InvalidArgument("empty accuracy matrix".into()))?;
    Ok(last.iter().sum::<f64>() / last.len() as f64)
}

/// Mean of `α_t^t − β_t`.
pub fn forward_transfer(a: &AccuracyMatrix, reference: &OneReference) -> Result<f64> {
    let diag = a.diagonal();
    if diag.is_empty() || diag.len() != reference.beta.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} diagonal entries vs {} reference accuracies",
            diag.len(),
            reference.beta.len()
        )));
    }
    Ok(diag.iter().zip(&reference.beta).map(|(x, b)| x - b).sum::<f64>() / diag.len() as f64)
}

/// Mean of `α_t^T − α_t^t` over `t < T`; `None` for a single task.
pub fn backward_transfer(a: &AccuracyMatrix) -> Option<f64> {
    let t = a.num_tasks();
    if t < 2 {
        return None;
    }
    let last = a.final_column()?;
    let diag = a.diagonal();
    Some((0..t - 1).map(|i| last[i] - diag[i]).sum::<f64>() / (t - 1) as f64)
}

/// Index of the largest logit; the first one wins ties.
fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of `data` classified correctly by head `task`.
pub fn accuracy(model: &TilModel, task: TaskId, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let logits = model.forward_task(task, &data.inputs)?;
    Ok(accuracy_of_logits(&logits, &data.labels))
}

pub(crate) fn accuracy_of_logits(logits: &Matrix, labels: &[usize]) -> f64 {
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(b, &y)| argmax(logits.row(b)) == y)
        .count();
    hits as f64 / labels.len() as f64
}

/// Accuracy and mean cross-entropy of head `task` on `data`.
pub fn accuracy_and_loss(model: &TilModel, task: TaskId, data: &Dataset) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let logits = model.forward_task(task, &data.inputs)?;
    Ok((accuracy_of_logits(&logits, &data.labels), loss_cross_entropy(&logits, &data.labels)?))
}

pub fn chance_level(num_classes: usize) -> f64 {
    1.0 / num_classes.max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum PruneStrategy {
    Nothing,
    Lowest,
    Random,
    Highest,
}

impl PruneStrategy {
    pub const ALL: [PruneStrategy; 4] = [Self::Nothing, Self::Lowest, Self::Random, Self::Highest];

    pub fn name(self) -> &'static str {
        match self {
            Self::Nothing => "nothing",
            Self::Lowest => "lowest",
            Self::Random => "random",
            Self::Highest => "highest",
        }
    }
}

/// Copy of `model` with a share of extractor parameters set to zero.
///
/// Parameters are ranked globally across extractor layers by `importance`
/// (flattened weights then bias per layer). Ties keep flat-index order.
pub fn prune_model(
    model: &TilModel,
    importance: &[Vec<f64>],
    strategy: PruneStrategy,
    percent: f64,
    seed: u64,
) -> Result<TilModel> {
    let mut pruned = model.clone();
    if strategy == PruneStrategy::Nothing {
        return Ok(pruned);
    }
    if !(percent > 0.0 && percent <= 100.0) {
        return Err(Error::InvalidArgument(format!("prune percent must be in (0, 100], got {percent}")));
    }
    let sizes: Vec<usize> = model.extractor().layers().iter().map(|l| l.len()).collect();
    if importance.len() != sizes.len() || importance.iter().zip(&sizes).any(|(v, &n)| v.len() != n) {
        return Err(Error::ShapeMismatch("importance does not match the extractor".into()));
    }
    let flat: Vec<f64> = importance.iter().flatten().copied().collect();
    let n = flat.len();
    let k = libm::round(percent / 100.0 * n as f64) as usize;
    let mut order: Vec<usize> = (0..n).collect();
    match strategy {
        PruneStrategy::Lowest => order.sort_by(|&a, &b| flat[a].total_cmp(&flat[b])),
        PruneStrategy::Highest => order.sort_by(|&a, &b| flat[b].total_cmp(&flat[a])),
        PruneStrategy::Random => order.shuffle(&mut derive(seed, Purpose::Prune, 0)),
        PruneStrategy::Nothing => unreachable!(),
    }
    let mut kill = alloc::vec![false; n];
    for &i in &order[..k.min(n)] {
        kill[i] = true;
    }
    let mut offset = 0;
    for layer in pruned.extractor_mut().layers_mut() {
        let len = layer.len();
        for (v, &dead) in layer.iter_mut().zip(&kill[offset..offset + len]) {
            if dead {
                *v = 0.0;
            }
        }
        offset += len;
    }
    Ok(pruned)
}

/// Test accuracy of head `task` after pruning a copy of `model`.
pub fn pruning_experiment(
    model: &TilModel,
    task: TaskId,
    test: &Dataset,
    importance: &[Vec<f64>],
    strategy: PruneStrategy,
    percent: f64,
    seed: u64,
) -> Result<f64> {
    let pruned = prune_model(model, importance, strategy, percent, seed)?;
    accuracy(&pruned, task, test)
}

/// Train a fresh linear head on top of a frozen `extractor` and report its
/// test accuracy on `probe`.
pub fn representation_probe(extractor: &Network, probe: &TaskDataset, config: &TrainConfig) -> Result<f64> {
    if probe.train.dim() != extractor.input_dim() {
        return Err(Error::DimensionMismatch {
            layer: 0,
            expected: extractor.input_dim(),
            actual: probe.train.dim(),
        });
    }
    let mut model = TilModel::from_parts(extractor.clone(), Default::default())?;
    model.add_head(probe.task_id, probe.num_classes, &mut derive(config.seed, Purpose::Probe, 0))?;
    fit_head_only(&mut model, probe, config)?;
    accuracy(&model, probe.task_id, &probe.test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::vec;

    #[test]
    fn metric_examples() {
        let a = AccuracyMatrix::from_columns(vec![vec![0.9], vec![0.8, 0.7]]).unwrap();
        assert!((avg_accuracy(&a).unwrap() - 0.75).abs() < 1e-15);
        assert!((backward_transfer(&a).unwrap() + 0.1).abs() < 1e-12);
        let r = OneReference { beta: vec![0.9, 0.6] };
        assert!((forward_transfer(&a, &r).unwrap() - 0.05).abs() < 1e-12);
        assert_eq!(forward_transfer(&a, &OneReference::from_matrix(&a)).unwrap(), 0.0);
        assert!(forward_transfer(&a, &OneReference { beta: vec![0.5] }).is_err());
    }

    #[test]
    fn single_task_matrix() {
        let a = AccuracyMatrix::from_columns(vec![vec![0.6]]).unwrap();
        assert_eq!(backward_transfer(&a), None);
        assert!((forward_transfer(&a, &OneReference { beta: vec![0.5] }).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(avg_accuracy(&AccuracyMatrix::from_columns(vec![vec![1.0], vec![1.0, 1.0]]).unwrap()).unwrap(), 1.0);
    }

    #[test]
    fn unchanged_accuracy_means_zero_bwt() {
        let a = AccuracyMatrix::from_columns(vec![vec![0.7], vec![0.7, 0.4]]).unwrap();
        assert_eq!(backward_transfer(&a), Some(0.0));
    }

    #[test]
    fn malformed_columns_rejected() {
        let mut a = AccuracyMatrix::new();
        assert!(a.push_column(vec![0.5, 0.5]).is_err());
        assert!(a.push_column(vec![1.5]).is_err());
        assert!(avg_accuracy(&a).is_err());
        assert_eq!(a.get(1, 1), None);
    }

    #[test]
    fn argmax_prefers_first() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
