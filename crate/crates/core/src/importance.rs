//! Parameter importance from post-training gradients.
//!
//! For task `t` and every head `τ ≤ t` the gradient of a loss with respect to
//! each extractor layer is standardised within the layer and squashed with
//! `|tanh(·)|`. The loss is cross-entropy at the current head and the mean
//! logit sum at earlier heads (cross-head importance). The per-task importance
//! is the element-wise maximum over heads, and the accumulated importance is
//! the element-wise maximum over tasks.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::data::Dataset;
use crate::model::{TaskId, TilModel};
use crate::nn::{GradientSet, LayerParams, LossKind, Network};
use crate::{Error, Result};

/// Variance below which a layer is treated as carrying no relative signal.
pub const DEGENERATE_VARIANCE: f64 = 1e-24;

/// Standardise to zero mean and unit population variance.
///
/// A (numerically) constant vector maps to all zeros.
pub fn layer_normalize(g: &[f64]) -> Vec<f64> {
    if g.is_empty() {
        return Vec::new();
    }
    // Rounding in the mean would otherwise give a large constant layer a
    // spurious variance above the cutoff.
    if g.iter().all(|&x| x == g[0]) {
        return vec![0.0; g.len()];
    }
    let n = g.len() as f64;
    let mean = g.iter().sum::<f64>() / n;
    let var = g.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if var.is_nan() || var < DEGENERATE_VARIANCE {
        return vec![0.0; g.len()];
    }
    let sd = libm::sqrt(var);
    g.iter().map(|&x| (x - mean) / sd).collect()
}

/// `|tanh(layer_normalize(g))|`, element-wise.
pub fn raw_importance(g: &[f64]) -> Vec<f64> {
    layer_normalize(g).into_iter().map(|z| libm::fabs(libm::tanh(z))).collect()
}

fn layer_importances(grads: &GradientSet) -> Vec<Vec<f64>> {
    grads.layers().iter().map(|l| raw_importance(&l.to_flat())).collect()
}

fn elementwise_max_into(acc: &mut [Vec<f64>], other: &[Vec<f64>]) {
    for (a, b) in acc.iter_mut().zip(other) {
        for (x, &y) in a.iter_mut().zip(b) {
            if y > *x {
                *x = y;
            }
        }
    }
}

fn check_same_shape(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<()> {
    let ok = a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.len() == y.len());
    if ok {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "importance layers {:?} vs {:?}",
            a.iter().map(Vec::len).collect::<Vec<_>>(),
            b.iter().map(Vec::len).collect::<Vec<_>>()
        )))
    }
}

fn mean_of(layers: &[Vec<f64>]) -> f64 {
    let n: usize = layers.iter().map(Vec::len).sum();
    if n == 0 {
        return 0.0;
    }
    layers.iter().flatten().sum::<f64>() / n as f64
}

/// Accumulated importance of every extractor parameter over the tasks seen.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ImportanceState {
    per_layer: Vec<Vec<f64>>,
    tasks_seen: usize,
    mean_importance: f64,
}

impl ImportanceState {
    /// All-zero state shaped like `extractor`.
    pub fn zeros(extractor: &Network) -> Self {
        Self::zeros_with_sizes(&extractor.layers().iter().map(LayerParams::len).collect::<Vec<_>>())
    }

    pub fn zeros_with_sizes(sizes: &[usize]) -> Self {
        Self {
            per_layer: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            tasks_seen: 0,
            mean_importance: 0.0,
        }
    }

    /// Rebuild from stored values; entries must lie in `[0, 1]`.
    pub fn from_parts(per_layer: Vec<Vec<f64>>, tasks_seen: usize) -> Result<Self> {
        if let Some(v) = per_layer.iter().flatten().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!("importance {v} outside [0, 1]")));
        }
        let mean_importance = mean_of(&per_layer);
        Ok(Self {
            per_layer,
            tasks_seen,
            mean_importance,
        })
    }

    pub fn per_layer(&self) -> &[Vec<f64>] {
        &self.per_layer
    }

    pub fn tasks_seen(&self) -> usize {
        self.tasks_seen
    }

    /// Mean over every extractor parameter.
    pub fn mean_importance(&self) -> f64 {
        self.mean_importance
    }

    pub fn param_count(&self) -> usize {
        self.per_layer.iter().map(Vec::len).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.per_layer.iter().flatten()
    }

    /// Element-wise maximum with the new task's importance.
    pub fn accumulate(&mut self, task: &TaskImportance) -> Result<()> {
        check_same_shape(&self.per_layer, &task.per_layer)?;
        elementwise_max_into(&mut self.per_layer, &task.per_layer);
        self.tasks_seen += 1;
        self.mean_importance = mean_of(&self.per_layer);
        Ok(())
    }
}

/// Free-function form of [`ImportanceState::accumulate`].
pub fn accumulate(state: &ImportanceState, task: &TaskImportance) -> Result<ImportanceState> {
    let mut next = state.clone();
    next.accumulate(task)?;
    Ok(next)
}

/// Importance of one task, with the per-head components it was built from.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaskImportance {
    /// Element-wise max over `current` and every entry of `cross`.
    pub per_layer: Vec<Vec<f64>>,
    /// Importance through the task's own head.
    pub current: Vec<Vec<f64>>,
    /// Importance through each earlier head, in task order. Empty without CHI.
    pub cross: Vec<(TaskId, Vec<Vec<f64>>)>,
}

impl TaskImportance {
    /// Importance made of a single component (no cross-head terms).
    pub fn single(per_layer: Vec<Vec<f64>>) -> Self {
        Self {
            current: per_layer.clone(),
            per_layer,
            cross: Vec::new(),
        }
    }

    /// Combine the own-head component with cross-head components.
    pub fn combine(current: Vec<Vec<f64>>, cross: Vec<(TaskId, Vec<Vec<f64>>)>) -> Result<Self> {
        let mut per_layer = current.clone();
        for (_, c) in &cross {
            check_same_shape(&per_layer, c)?;
            elementwise_max_into(&mut per_layer, c);
        }
        Ok(Self {
            per_layer,
            current,
            cross,
        })
    }

    /// Overwrite statistics against the accumulated state before this task.
    pub fn chi_stats(&self, previous: &ImportanceState) -> Result<ChiStats> {
        let cross: Vec<Vec<Vec<f64>>> = self.cross.iter().map(|(_, c)| c.clone()).collect();
        chi_overwrite_stats(&self.current, &cross, previous.per_layer())
    }
}

/// Extractor gradient of `L^{t,τ}` averaged over the task's training set.
///
/// With `head == current` the loss is cross-entropy against the labels; with
/// an earlier head it is the mean logit sum of that head on the current
/// task's inputs. Gradients are summed over mini-batches of `batch_size` in
/// dataset order and divided by the number of batches. No parameters change.
pub fn importance_gradient(
    model: &TilModel,
    head: TaskId,
    data: &Dataset,
    current: TaskId,
    batch_size: usize,
) -> Result<GradientSet> {
    if head > current {
        return Err(Error::InvalidArgument(format!(
            "importance head {head} is later than current task {current}"
        )));
    }
    model.head(head)?;
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let kind = if head == current {
        LossKind::CrossEntropy
    } else {
        LossKind::LogitSum
    };
    let mut total = GradientSet::zeros_like(model.extractor().layers());
    let mut batches = 0usize;
    for idx in data.sequential_batches(batch_size) {
        let inputs = data.inputs.select_rows(&idx);
        let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
        let labels = (kind == LossKind::CrossEntropy).then_some(labels.as_slice());
        let (_, g) = model.backward_task(head, &inputs, labels, kind)?;
        total.add_assign(&g.extractor)?;
        batches += 1;
    }
    total.scale(1.0 / batches as f64);
    Ok(total)
}

/// Importance of every extractor parameter to task `task`.
///
/// With `cross_head` every stored head `τ < task` contributes its logit-sum
/// importance and the result is the element-wise maximum; without it only the
/// task's own head is used.
pub fn compute_task_importance(
    model: &TilModel,
    task: TaskId,
    data: &Dataset,
    cross_head: bool,
    batch_size: usize,
) -> Result<TaskImportance> {
    let own = importance_gradient(model, task, data, task, batch_size)?;
    let current = layer_importances(&own);
    let mut cross = Vec::new();
    if cross_head {
        for &prev in model.heads().keys().filter(|&&id| id < task) {
            let g = importance_gradient(model, prev, data, task, batch_size)?;
            cross.push((prev, layer_importances(&g)));
        }
    }
    TaskImportance::combine(current, cross)
}

/// Diagonal empirical Fisher of the extractor: mean over samples of squared
/// per-sample cross-entropy gradients at head `task`.
pub fn fisher_diagonal(model: &TilModel, task: TaskId, data: &Dataset) -> Result<GradientSet> {
    model.head(task)?;
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = GradientSet::zeros_like(model.extractor().layers());
    for i in 0..data.len() {
        let x = data.inputs.select_rows(&[i]);
        let (_, g) = model.backward_task(task, &x, Some(&[data.labels[i]]), LossKind::CrossEntropy)?;
        for (acc, layer) in total.layers_mut().iter_mut().zip(g.extractor.layers()) {
            for (a, &v) in acc.iter_mut().zip(layer.iter()) {
                *a += v * v;
            }
        }
    }
    total.scale(1.0 / data.len() as f64);
    Ok(total)
}

/// Fisher information mapped into `[0, 1)` with the same per-layer
/// standardise-and-squash used for gradient importance.
pub fn fisher_importance(model: &TilModel, task: TaskId, data: &Dataset) -> Result<TaskImportance> {
    let f = fisher_diagonal(model, task, data)?;
    Ok(TaskImportance::single(layer_importances(&f)))
}

/// How often and by how much cross-head importance overrides other terms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChiStats {
    /// Fraction of parameters where the best earlier head beats the own head.
    pub f_each: f64,
    /// Mean margin over those parameters (0 when there are none).
    pub g_each: f64,
    /// Fraction where the best earlier head beats the accumulated importance.
    pub f_total: f64,
    /// Mean margin over those parameters (0 when there are none).
    pub g_total: f64,
    pub each_empty: bool,
    pub total_empty: bool,
}

/// Overwrite frequencies and gaps of cross-head importance.
///
/// `cross` holds one per-layer importance per earlier head; it must be
/// non-empty (the current task is at least the second).
pub fn chi_overwrite_stats(
    current: &[Vec<f64>],
    cross: &[Vec<Vec<f64>>],
    accumulated: &[Vec<f64>],
) -> Result<ChiStats> {
    if cross.is_empty() {
        return Err(Error::TooFewTasks(1));
    }
    check_same_shape(current, accumulated)?;
    let mut best = cross[0].clone();
    for c in &cross[1..] {
        check_same_shape(&best, c)?;
        elementwise_max_into(&mut best, c);
    }
    check_same_shape(current, &best)?;

    let (mut n, mut each_hits, mut each_gap, mut total_hits, mut total_gap) = (0usize, 0usize, 0.0, 0usize, 0.0);
    for ((b, c), a) in best.iter().flatten().zip(current.iter().flatten()).zip(accumulated.iter().flatten()) {
        n += 1;
        if b > c {
            each_hits += 1;
            each_gap += b - c;
        }
        if b > a {
            total_hits += 1;
            total_gap += b - a;
        }
    }
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let gap = |s: f64, k: usize| if k == 0 { 0.0 } else { s / k as f64 };
    Ok(ChiStats {
        f_each: frac(each_hits),
        g_each: gap(each_gap, each_hits),
        f_total: frac(total_hits),
        g_total: gap(total_gap, total_hits),
        each_empty: each_hits == 0,
        total_empty: total_hits == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_dissimilar_stream;
    use crate::rng::{derive, Purpose};
    use proptest::prelude::*;
    use std::vec;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn normalize_one_two_three() {
        // (x - 2) / sqrt(2/3) = ±sqrt(3/2)
        let s = 1.5f64.sqrt();
        assert!(close(&layer_normalize(&[1.0, 2.0, 3.0]), &[-s, 0.0, s], 1e-15));
        assert!((s - 1.224_74).abs() < 1e-5);
    }

    #[test]
    fn normalize_constant_is_zero() {
        assert_eq!(layer_normalize(&[4.0; 5]), vec![0.0; 5]);
        assert_eq!(raw_importance(&[-0.3; 3]), vec![0.0; 3]);
    }

    #[test]
    fn raw_importance_one_two_three() {
        let t = 1.5f64.sqrt().tanh();
        let r = raw_importance(&[1.0, 2.0, 3.0]);
        assert!(close(&r, &[t, 0.0, t], 1e-15));
        assert!((t - 0.841_048_257_368_466).abs() < 1e-14);
    }

    #[test]
    fn elementwise_max_example() {
        let ti = TaskImportance::combine(vec![vec![0.2, 0.3]], vec![(TaskId(1), vec![vec![0.9, 0.1]])]).unwrap();
        assert_eq!(ti.per_layer, vec![vec![0.9, 0.3]]);
    }

    #[test]
    fn accumulate_rules() {
        let mut s = ImportanceState::zeros_with_sizes(&[2, 1]);
        let t1 = TaskImportance::single(vec![vec![0.5, 0.1], vec![0.7]]);
        s.accumulate(&t1).unwrap();
        assert_eq!(s.per_layer(), &t1.per_layer[..]);
        assert_eq!(s.tasks_seen(), 1);
        let snapshot = s.per_layer().to_vec();
        s.accumulate(&t1).unwrap();
        assert_eq!(s.per_layer(), &snapshot[..]);
        s.accumulate(&TaskImportance::single(vec![vec![0.0, 0.0], vec![0.0]])).unwrap();
        assert_eq!(s.per_layer(), &snapshot[..]);
        assert_eq!(s.tasks_seen(), 3);
        assert!((s.mean_importance() - (0.5 + 0.1 + 0.7) / 3.0).abs() < 1e-15);
        assert!(s.accumulate(&TaskImportance::single(vec![vec![0.0]])).is_err());
    }

    #[test]
    fn chi_stats_examples() {
        let s = chi_overwrite_stats(&[vec![0.2]], &[vec![vec![0.5]]], &[vec![0.4]]).unwrap();
        assert_eq!((s.f_each, s.f_total), (1.0, 1.0));
        assert!((s.g_each - 0.3).abs() < 1e-15);
        assert!((s.g_total - 0.1).abs() < 1e-15);

        let z = chi_overwrite_stats(&[vec![0.3, 0.1]], &[vec![vec![0.0, 0.0]]], &[vec![0.2, 0.2]]).unwrap();
        assert_eq!(z.f_each, 0.0);
        assert_eq!(z.g_each, 0.0);
        assert!(z.each_empty && z.total_empty);

        assert_eq!(chi_overwrite_stats(&[vec![0.1]], &[], &[vec![0.1]]), Err(Error::TooFewTasks(1)));
    }

    #[test]
    fn first_task_same_with_or_without_cross_head() {
        let stream = gen_dissimilar_stream(1, 2, 4, 20, 3).unwrap();
        let task = &stream.tasks[0];
        let mut m = TilModel::new(&[4, 6, 5], &mut derive(3, Purpose::ExtractorInit, 0)).unwrap();
        m.add_head(task.task_id, 2, &mut derive(3, Purpose::HeadInit, 1)).unwrap();
        let a = compute_task_importance(&m, task.task_id, &task.train, true, 8).unwrap();
        let b = compute_task_importance(&m, task.task_id, &task.train, false, 8).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_head_gives_zero_cross_gradient() {
        let stream = gen_dissimilar_stream(2, 2, 4, 10, 5).unwrap();
        let mut m = TilModel::new(&[4, 6, 5], &mut derive(5, Purpose::ExtractorInit, 0)).unwrap();
        m.add_head(TaskId(1), 2, &mut derive(5, Purpose::HeadInit, 1)).unwrap();
        m.add_head(TaskId(2), 2, &mut derive(5, Purpose::HeadInit, 2)).unwrap();
        *m.head_mut(TaskId(1)).unwrap() = LayerParams::zeros(5, 2);
        let g = importance_gradient(&m, TaskId(1), &stream.tasks[1].train, TaskId(2), 4).unwrap();
        assert!(g.layers().iter().all(|l| l.iter().all(|&v| v == 0.0)));
        assert!(importance_gradient(&m, TaskId(3), &stream.tasks[1].train, TaskId(2), 4).is_err());
        assert_eq!(
            importance_gradient(&m, TaskId(9), &stream.tasks[1].train, TaskId(9), 4),
            Err(Error::UnknownTask(TaskId(9)))
        );
    }

    proptest! {
        #[test]
        fn normalize_is_standard(v in prop::collection::vec(-1e3f64..1e3, 2..64)) {
            let z = layer_normalize(&v);
            let n = z.len() as f64;
            let mean = z.iter().sum::<f64>() / n;
            let var = z.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            if z.iter().any(|&x| x != 0.0) {
                prop_assert!(mean.abs() < 1e-9);
                prop_assert!((var - 1.0).abs() < 1e-9);
            }
        }

        #[test]
        fn normalize_is_scale_invariant(v in prop::collection::vec(-10f64..10.0, 2..64), c in 1e-3f64..1e3) {
            let scaled: Vec<f64> = v.iter().map(|x| x * c).collect();
            prop_assert!(close(&raw_importance(&v), &raw_importance(&scaled), 1e-12));
        }

        #[test]
        fn importance_is_even(v in prop::collection::vec(-10f64..10.0, 1..32)) {
            // mirror the vector around its mean
            let mut both = v.clone();
            both.extend(v.iter().map(|x| -x));
            let r = raw_importance(&both);
            let k = v.len();
            for i in 0..k {
                prop_assert!((r[i] - r[i + k]).abs() < 1e-12);
            }
        }

        #[test]
        fn chi_stats_in_range(
            cur in prop::collection::vec(0f64..1.0, 8),
            prev in prop::collection::vec(0f64..1.0, 8),
            acc in prop::collection::vec(0f64..1.0, 8),
        ) {
            let s = chi_overwrite_stats(&[cur], &[vec![prev]], &[acc]).unwrap();
            for f in [s.f_each, s.f_total, s.g_each, s.g_total] {
                prop_assert!((0.0..=1.0).contains(&f));
            }
        }
    }
}
