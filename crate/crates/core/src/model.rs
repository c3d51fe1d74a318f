//! Shared feature extractor with one classification head per task.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;

use crate::nn::{loss_and_grad, Activation, GradientSet, LayerParams, LossKind, Matrix, Network};
use crate::{Error, Result};

/// Identifier of a task in a stream (1-based in reports, any value here).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaskId(pub usize);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Gradients of one task's loss: extractor layers plus that task's head.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskGradients {
    pub extractor: GradientSet,
    pub head: LayerParams,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TilModel {
    extractor: Network,
    heads: BTreeMap<TaskId, LayerParams>,
}

impl TilModel {
    /// Extractor over `dims = [input, h1, ..., feature_dim]`, every layer ReLU.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        Ok(Self {
            extractor: Network::init(dims, Activation::Relu, rng)?,
            heads: BTreeMap::new(),
        })
    }

    pub fn from_parts(extractor: Network, heads: BTreeMap<TaskId, LayerParams>) -> Result<Self> {
        let fd = extractor.output_dim();
        if let Some((id, h)) = heads.iter().find(|(_, h)| h.in_dim() != fd) {
            return Err(Error::ShapeMismatch(alloc::format!(
                "head {id} expects {} features, extractor yields {fd}",
                h.in_dim()
            )));
        }
        Ok(Self { extractor, heads })
    }

    pub fn feature_dim(&self) -> usize {
        self.extractor.output_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.extractor.input_dim()
    }

    pub fn extractor(&self) -> &Network {
        &self.extractor
    }

    pub fn extractor_mut(&mut self) -> &mut Network {
        &mut self.extractor
    }

    pub fn heads(&self) -> &BTreeMap<TaskId, LayerParams> {
        &self.heads
    }

    pub fn head(&self, task: TaskId) -> Result<&LayerParams> {
        self.heads.get(&task).ok_or(Error::UnknownTask(task))
    }

    pub fn head_mut(&mut self, task: TaskId) -> Result<&mut LayerParams> {
        self.heads.get_mut(&task).ok_or(Error::UnknownTask(task))
    }

    pub fn add_head<R: Rng + ?Sized>(&mut self, task: TaskId, num_classes: usize, rng: &mut R) -> Result<()> {
        if self.heads.contains_key(&task) {
            return Err(Error::DuplicateTask(task));
        }
        if num_classes == 0 {
            return Err(Error::InvalidArgument("a head needs at least one class".into()));
        }
        let head = LayerParams::init(self.feature_dim(), num_classes, rng);
        self.heads.insert(task, head);
        Ok(())
    }

    /// Replace the extractor, keeping heads. Dimensions must agree.
    pub fn set_extractor(&mut self, extractor: Network) -> Result<()> {
        if extractor.output_dim() != self.feature_dim() || extractor.input_dim() != self.input_dim() {
            return Err(Error::ShapeMismatch("replacement extractor has different dims".into()));
        }
        self.extractor = extractor;
        Ok(())
    }

    pub fn features(&self, inputs: &Matrix) -> Result<Matrix> {
        self.extractor.forward(inputs)
    }

    pub fn forward_task(&self, task: TaskId, inputs: &Matrix) -> Result<Matrix> {
        let head = self.head(task)?;
        let feats = self.extractor.forward(inputs)?;
        Ok(head.affine(&feats))
    }

    /// Loss of head `task` on `inputs` and the gradients for the extractor and
    /// that head.
    pub fn backward_task(
        &self,
        task: TaskId,
        inputs: &Matrix,
        labels: Option<&[usize]>,
        kind: LossKind,
    ) -> Result<(f64, TaskGradients)> {
        let head = self.head(task)?;
        let trace = self.extractor.forward_trace(inputs)?;
        let logits = head.affine(trace.output());
        let (loss, d_logits) = loss_and_grad(kind, &logits, labels)?;
        let (head, d_feats) = head.affine_backward(trace.output(), &d_logits);
        let (extractor, _) = self.extractor.backward_from(&trace, d_feats)?;
        Ok((loss, TaskGradients { extractor, head }))
    }

    /// `(extractor parameter count, per-head counts in task order)`.
    pub fn param_count(&self) -> (usize, Vec<usize>) {
        (
            self.extractor.param_count(),
            self.heads.values().map(LayerParams::len).collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{derive, Purpose};
    use std::vec;

    fn model() -> TilModel {
        TilModel::new(&[4, 3], &mut derive(0, Purpose::ExtractorInit, 0)).unwrap()
    }

    #[test]
    fn add_head_shapes_and_duplicates() {
        let mut m = model();
        m.add_head(TaskId(1), 2, &mut derive(0, Purpose::HeadInit, 1)).unwrap();
        let h = m.head(TaskId(1)).unwrap();
        assert_eq!((h.out_dim(), h.in_dim()), (2, 3));
        assert_eq!(
            m.add_head(TaskId(1), 2, &mut derive(0, Purpose::HeadInit, 1)),
            Err(Error::DuplicateTask(TaskId(1)))
        );
    }

    #[test]
    fn adding_a_head_leaves_other_tasks_untouched() {
        let mut m = model();
        m.add_head(TaskId(1), 2, &mut derive(0, Purpose::HeadInit, 1)).unwrap();
        let x = Matrix::from_rows(&[vec![0.1, 0.2, -0.3, 1.0]]).unwrap();
        let before = m.forward_task(TaskId(1), &x).unwrap();
        m.add_head(TaskId(2), 5, &mut derive(0, Purpose::HeadInit, 2)).unwrap();
        assert_eq!(m.forward_task(TaskId(1), &x).unwrap(), before);
    }

    #[test]
    fn unknown_task_errors() {
        let m = model();
        assert_eq!(
            m.forward_task(TaskId(7), &Matrix::zeros(1, 4)),
            Err(Error::UnknownTask(TaskId(7)))
        );
    }

    #[test]
    fn identical_heads_give_identical_logits() {
        let mut m = model();
        m.add_head(TaskId(1), 2, &mut derive(0, Purpose::HeadInit, 1)).unwrap();
        let h = m.head(TaskId(1)).unwrap().clone();
        let mut heads = m.heads().clone();
        heads.insert(TaskId(2), h);
        let m = TilModel::from_parts(m.extractor().clone(), heads).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        assert_eq!(m.forward_task(TaskId(1), &x).unwrap(), m.forward_task(TaskId(2), &x).unwrap());
    }

    #[test]
    fn zero_extractor_yields_head_bias() {
        let ext = Network::from_layers(vec![LayerParams::zeros(4, 3)], vec![Activation::Relu]).unwrap();
        let head = LayerParams::new(3, 2, vec![1.0; 6], vec![0.25, -0.5]).unwrap();
        let mut heads = BTreeMap::new();
        heads.insert(TaskId(1), head);
        let m = TilModel::from_parts(ext, heads).unwrap();
        let out = m.forward_task(TaskId(1), &Matrix::from_rows(&[vec![9.0, -1.0, 2.0, 3.0]]).unwrap()).unwrap();
        assert_eq!(out.as_slice(), &[0.25, -0.5]);
    }

    #[test]
    fn param_counts() {
        let mut m = model();
        assert_eq!(m.param_count(), (15, vec![]));
        m.add_head(TaskId(1), 2, &mut derive(0, Purpose::HeadInit, 1)).unwrap();
        assert_eq!(m.param_count(), (15, vec![8]));
    }

    #[test]
    fn mismatched_head_rejected() {
        let ext = Network::from_layers(vec![LayerParams::zeros(4, 3)], vec![Activation::Relu]).unwrap();
        let mut heads = BTreeMap::new();
        heads.insert(TaskId(1), LayerParams::zeros(5, 2));
        assert!(TilModel::from_parts(ext, heads).is_err());
    }
}
