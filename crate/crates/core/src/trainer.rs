//! The continual training loop for soft-masking and every baseline.
//!
//! One [`ContinualRun`] walks a task stream task by task. For each task it
//! adds a head, trains with the method's gradient rewrite, updates whatever
//! cross-task state the method keeps, and evaluates every task seen so far.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::slice;

use crate::data::{Dataset, TaskDataset, TaskStream};
use crate::eval::{accuracy, accuracy_and_loss, AccuracyMatrix};
use crate::importance::{compute_task_importance, fisher_diagonal, fisher_importance, ChiStats, ImportanceState, TaskImportance};
use crate::masking::{blocked_fraction, harden, BlockedFraction, HardMask, HeadMask, SoftMask, HARD_MASK_THRESHOLDS};
use crate::model::{TaskId, TilModel};
use crate::nn::{sgd_step, GradientSet, IdentityTransform, LayerParams, LossKind, Matrix};
use crate::rng::{derive, Purpose};
use crate::{Error, Result};

/// Training method or ablation.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Method {
    #[cfg_attr(feature = "serde", serde(rename = "SPG"))]
    Spg,
    /// Importance from the current head only.
    #[cfg_attr(feature = "serde", serde(rename = "SPG_NO_CHI"))]
    SpgNoChi,
    /// No attenuation of the current head.
    #[cfg_attr(feature = "serde", serde(rename = "SPG_NO_SMH"))]
    SpgNoSmh,
    /// Binary extractor mask at the given importance threshold.
    #[cfg_attr(feature = "serde", serde(rename = "SPG_HARD"))]
    SpgHard(f64),
    /// Importance from the diagonal Fisher instead of gradients.
    #[cfg_attr(feature = "serde", serde(rename = "SPG_FI"))]
    SpgFi,
    #[cfg_attr(feature = "serde", serde(rename = "NCL"))]
    Ncl,
    #[cfg_attr(feature = "serde", serde(rename = "ONE"))]
    One,
    #[cfg_attr(feature = "serde", serde(rename = "MTL"))]
    Mtl,
    /// EWC with Fisher weights and strength λ.
    #[cfg_attr(feature = "serde", serde(rename = "EWC_FI"))]
    EwcFi(f64),
    /// EWC whose weights are the accumulated gradient importance.
    #[cfg_attr(feature = "serde", serde(rename = "EWC_GI"))]
    EwcGi(f64),
}

impl Method {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Method::SpgHard(t) if !HARD_MASK_THRESHOLDS.contains(&t) => Err(Error::InvalidArgument(format!(
                "hard-mask threshold {t} not in {HARD_MASK_THRESHOLDS:?}"
            ))),
            Method::EwcFi(l) | Method::EwcGi(l) if !(l > 0.0 && l.is_finite()) => {
                Err(Error::InvalidArgument(format!("EWC strength must be positive, got {l}")))
            }
            _ => Ok(()),
        }
    }

    /// Stable label used in records and file names.
    pub fn label(&self) -> String {
        match self {
            Method::Spg => "SPG".into(),
            Method::SpgNoChi => "SPG_NO_CHI".into(),
            Method::SpgNoSmh => "SPG_NO_SMH".into(),
            Method::SpgHard(t) => format!("SPG_HARD_{t}"),
            Method::SpgFi => "SPG_FI".into(),
            Method::Ncl => "NCL".into(),
            Method::One => "ONE".into(),
            Method::Mtl => "MTL".into(),
            Method::EwcFi(l) => format!("EWC_FI_{l}"),
            Method::EwcGi(l) => format!("EWC_GI_{l}"),
        }
    }

    /// Methods that soft- or hard-mask gradients by accumulated importance.
    pub fn is_spg_family(&self) -> bool {
        matches!(
            self,
            Method::Spg | Method::SpgNoChi | Method::SpgNoSmh | Method::SpgHard(_) | Method::SpgFi
        )
    }

    /// Methods that maintain an [`ImportanceState`].
    pub fn tracks_importance(&self) -> bool {
        self.is_spg_family() || matches!(self, Method::EwcGi(_))
    }

    fn cross_head(&self) -> bool {
        !matches!(self, Method::SpgNoChi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            epochs: 30,
            batch_size: 64,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::InvalidArgument(format!(
                "epochs, batch_size and patience must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Anchor and per-parameter weights of the EWC penalty, extractor only.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EwcState {
    pub anchor: Vec<Vec<f64>>,
    pub omega: Vec<Vec<f64>>,
}

impl EwcState {
    /// Anchor at `params` with `omega` added to any previous weights.
    fn refresh_additive(prev: Option<&EwcState>, params: &[LayerParams], omega: &GradientSet) -> Self {
        let mut w: Vec<Vec<f64>> = omega.layers().iter().map(LayerParams::to_flat).collect();
        if let Some(p) = prev {
            for (a, b) in w.iter_mut().zip(&p.omega) {
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
            }
        }
        Self {
            anchor: params.iter().map(LayerParams::to_flat).collect(),
            omega: w,
        }
    }

    fn refresh_with(params: &[LayerParams], omega: &ImportanceState) -> Self {
        Self {
            anchor: params.iter().map(LayerParams::to_flat).collect(),
            omega: omega.per_layer().to_vec(),
        }
    }
}

/// `(λ/2) Σ Ω (θ − θ*)²` and its gradient `λ Ω (θ − θ*)`.
pub fn ewc_penalty_grad(params: &[LayerParams], ewc: &EwcState, lambda: f64) -> Result<(f64, GradientSet)> {
    let ok = params.len() == ewc.anchor.len()
        && params.len() == ewc.omega.len()
        && params
            .iter()
            .zip(&ewc.anchor)
            .zip(&ewc.omega)
            .all(|((p, a), o)| p.len() == a.len() && p.len() == o.len());
    if !ok {
        return Err(Error::ShapeMismatch("EWC state does not match the extractor".into()));
    }
    let mut penalty = 0.0;
    let mut layers = Vec::with_capacity(params.len());
    for ((p, anchor), omega) in params.iter().zip(&ewc.anchor).zip(&ewc.omega) {
        let flat: Vec<f64> = p
            .iter()
            .zip(anchor)
            .zip(omega)
            .map(|((&th, &a), &w)| {
                let d = th - a;
                penalty += w * d * d;
                lambda * w * d
            })
            .collect();
        layers.push(LayerParams::from_flat(p.in_dim(), p.out_dim(), &flat)?);
    }
    Ok((0.5 * lambda * penalty, GradientSet::new(layers)))
}

/// What happened while fitting one task (or one joint set).
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainReport {
    pub epochs_run: usize,
    /// Epoch whose parameters were kept (1-based).
    pub best_epoch: usize,
    /// Mean training cross-entropy; entry 0 is before the first update.
    pub train_loss: Vec<f64>,
    pub best_val_accuracy: f64,
}

/// Keeps the parameters of the best validation epoch.
///
/// Higher validation accuracy wins; equal accuracy is broken by lower
/// validation loss.
struct EarlyStop {
    patience: usize,
    best: Option<(f64, f64)>,
    best_epoch: usize,
    snapshot: Option<TilModel>,
    since_best: usize,
}

impl EarlyStop {
    fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            snapshot: None,
            since_best: 0,
        }
    }

    /// Returns true when training should stop.
    fn observe(&mut self, epoch: usize, acc: f64, loss: f64, model: &TilModel) -> bool {
        let better = match self.best {
            None => true,
            Some((ba, bl)) => acc > ba || (acc == ba && loss < bl),
        };
        if better {
            self.best = Some((acc, loss));
            self.best_epoch = epoch;
            self.snapshot = Some(model.clone());
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.since_best >= self.patience
    }

    fn finish(self, model: &mut TilModel, epochs_run: usize, train_loss: Vec<f64>) -> TrainReport {
        if let Some(m) = self.snapshot {
            *model = m;
        }
        TrainReport {
            epochs_run,
            best_epoch: self.best_epoch,
            train_loss,
            best_val_accuracy: self.best.map_or(0.0, |b| b.0),
        }
    }
}

fn dataset_loss(model: &TilModel, task: TaskId, data: &Dataset) -> Result<f64> {
    let logits = model.forward_task(task, &data.inputs)?;
    crate::nn::loss_cross_entropy(&logits, &data.labels)
}

fn validation_set(task: &TaskDataset) -> &Dataset {
    if task.val.is_empty() {
        &task.train
    } else {
        &task.val
    }
}

/// Shuffled mini-batch epochs on one task with validation early stopping.
fn fit_task<F>(model: &mut TilModel, task: &TaskDataset, config: &TrainConfig, mut update: F) -> Result<TrainReport>
where
    F: FnMut(&mut TilModel, &Matrix, &[usize]) -> Result<()>,
{
    config.validate()?;
    if task.train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let tid = task.task_id;
    let val = validation_set(task);
    let mut rng = derive(config.seed, Purpose::Shuffle, tid.0 as u64);
    let mut stop = EarlyStop::new(config.patience);
    let mut train_loss = vec![dataset_loss(model, tid, &task.train)?];
    let mut epochs_run = 0;
    for epoch in 1..=config.epochs {
        for idx in task.train.shuffled_batches(config.batch_size, &mut rng) {
            let x = task.train.inputs.select_rows(&idx);
            let y: Vec<usize> = idx.iter().map(|&i| task.train.labels[i]).collect();
            update(model, &x, &y)?;
        }
        epochs_run = epoch;
        let l = dataset_loss(model, tid, &task.train)?;
        if !l.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        train_loss.push(l);
        let (acc, vloss) = accuracy_and_loss(model, tid, val)?;
        if stop.observe(epoch, acc, vloss, model) {
            break;
        }
    }
    Ok(stop.finish(model, epochs_run, train_loss))
}

/// Per-task context a method needs while training.
pub struct TaskContext<'a> {
    pub importance: &'a ImportanceState,
    pub ewc: Option<&'a EwcState>,
}

/// Train `model` on one task with `method`'s gradient rewrite.
///
/// Only the extractor and the head of `task` are updated; earlier heads
/// never change.
pub fn train_task(
    model: &mut TilModel,
    task: &TaskDataset,
    config: &TrainConfig,
    method: Method,
    ctx: &TaskContext<'_>,
) -> Result<TrainReport> {
    method.validate()?;
    let tid = task.task_id;
    model.head(tid)?;
    let imp = ctx.importance;
    let hard: Option<HardMask> = match method {
        Method::SpgHard(t) => Some(harden(imp, t)?),
        _ => None,
    };
    let head_scale = match method {
        Method::Spg | Method::SpgNoChi | Method::SpgHard(_) | Method::SpgFi => Some(imp.mean_importance()),
        _ => None,
    };
    let ewc = match method {
        Method::EwcFi(l) | Method::EwcGi(l) => ctx.ewc.map(|e| (e, l)),
        _ => None,
    };
    let lr = config.lr;

    fit_task(model, task, config, |m, x, y| {
        let (_, g) = m.backward_task(tid, x, Some(y), LossKind::CrossEntropy)?;
        let mut ext = g.extractor;
        if let Some((e, lambda)) = ewc {
            let (_, pg) = ewc_penalty_grad(m.extractor().layers(), e, lambda)?;
            ext.add_assign(&pg)?;
        }
        let layers = m.extractor_mut().layers_mut();
        match (&hard, method.is_spg_family()) {
            (Some(mask), _) => sgd_step(layers, ext, lr, mask)?,
            (None, true) => sgd_step(layers, ext, lr, &SoftMask(imp))?,
            (None, false) => sgd_step(layers, ext, lr, &IdentityTransform)?,
        }
        let head = GradientSet::new(vec![g.head]);
        let hp = slice::from_mut(m.head_mut(tid)?);
        match head_scale {
            Some(s) => sgd_step(hp, head, lr, &HeadMask(s)),
            None => sgd_step(hp, head, lr, &IdentityTransform),
        }
    })
}

/// Fit only the head of `task.task_id`; the extractor stays frozen.
pub fn fit_head_only(model: &mut TilModel, task: &TaskDataset, config: &TrainConfig) -> Result<TrainReport> {
    let tid = task.task_id;
    model.head(tid)?;
    let lr = config.lr;
    fit_task(model, task, config, |m, x, y| {
        let (_, g) = m.backward_task(tid, x, Some(y), LossKind::CrossEntropy)?;
        sgd_step(slice::from_mut(m.head_mut(tid)?), GradientSet::new(vec![g.head]), lr, &IdentityTransform)
    })
}

/// Joint training on several tasks at once (the multi-task reference).
///
/// Mini-batches of `batch_size × tasks.len()` are drawn from the pooled
/// training sets; each sample is routed to its own head and the loss is the
/// mean cross-entropy over the whole batch.
pub fn train_joint(model: &mut TilModel, tasks: &[TaskDataset], config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    if tasks.is_empty() {
        return Err(Error::InvalidArgument("joint training needs at least one task".into()));
    }
    for t in tasks {
        model.head(t.task_id)?;
    }
    let pool: Vec<(usize, usize)> = tasks
        .iter()
        .enumerate()
        .flat_map(|(k, t)| (0..t.train.len()).map(move |i| (k, i)))
        .collect();
    if pool.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let batch_size = config.batch_size * tasks.len();
    let mut rng = derive(config.seed, Purpose::Shuffle, 1_000_000 + tasks.len() as u64);
    let mut stop = EarlyStop::new(config.patience);
    let mut train_loss = vec![joint_loss(model, tasks, |t| &t.train)?];
    let mut epochs_run = 0;
    let order = Dataset::new(Matrix::zeros(pool.len(), 0), vec![0; pool.len()])?;
    for epoch in 1..=config.epochs {
        for batch in order.shuffled_batches(batch_size, &mut rng) {
            let total = batch.len() as f64;
            let mut ext = GradientSet::zeros_like(model.extractor().layers());
            let mut head_updates = Vec::new();
            for (k, t) in tasks.iter().enumerate() {
                let idx: Vec<usize> = batch.iter().map(|&b| pool[b]).filter(|p| p.0 == k).map(|p| p.1).collect();
                if idx.is_empty() {
                    continue;
                }
                let w = idx.len() as f64 / total;
                let x = t.train.inputs.select_rows(&idx);
                let y: Vec<usize> = idx.iter().map(|&i| t.train.labels[i]).collect();
                let (_, mut g) = model.backward_task(t.task_id, &x, Some(&y), LossKind::CrossEntropy)?;
                g.extractor.scale(w);
                ext.add_assign(&g.extractor)?;
                head_updates.push((t.task_id, g.head.map(|v| v * w)));
            }
            sgd_step(model.extractor_mut().layers_mut(), ext, config.lr, &IdentityTransform)?;
            for (tid, hg) in head_updates {
                sgd_step(slice::from_mut(model.head_mut(tid)?), GradientSet::new(vec![hg]), config.lr, &IdentityTransform)?;
            }
        }
        epochs_run = epoch;
        let l = joint_loss(model, tasks, |t| &t.train)?;
        if !l.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        train_loss.push(l);
        let mut acc = 0.0;
        let mut vloss = 0.0;
        for t in tasks {
            let (a, l) = accuracy_and_loss(model, t.task_id, validation_set(t))?;
            acc += a;
            vloss += l;
        }
        let n = tasks.len() as f64;
        if stop.observe(epoch, acc / n, vloss / n, model) {
            break;
        }
    }
    Ok(stop.finish(model, epochs_run, train_loss))
}

fn joint_loss(model: &TilModel, tasks: &[TaskDataset], pick: impl Fn(&TaskDataset) -> &Dataset) -> Result<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for t in tasks {
        let d = pick(t);
        if d.is_empty() {
            continue;
        }
        sum += dataset_loss(model, t.task_id, d)? * d.len() as f64;
        n += d.len();
    }
    Ok(sum / n.max(1) as f64)
}

/// Per-task record of everything the loop measured.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaskRecord {
    pub task: TaskId,
    pub report: TrainReport,
    /// Blocked fraction after accumulating this task (importance methods only).
    pub blocked: Option<BlockedFraction>,
    /// Fraction blocked by the hard mask built from the post-task state.
    pub hard_blocked: Option<f64>,
    /// Cross-head overwrite statistics (cross-head methods, from the second task).
    pub chi: Option<ChiStats>,
}

/// State of one continual run; [`ContinualRun::step`] learns the next task.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ContinualRun {
    pub method: Method,
    pub config: TrainConfig,
    pub hidden: Vec<usize>,
    pub blocked_eps: f64,
    pub model: TilModel,
    pub importance: ImportanceState,
    pub ewc: Option<EwcState>,
    pub accuracy: AccuracyMatrix,
    /// Accumulated importance after each task.
    pub importance_history: Vec<ImportanceState>,
    /// Per-task importance that was accumulated after each task.
    pub task_importance_history: Vec<TaskImportance>,
    pub records: Vec<TaskRecord>,
}

impl ContinualRun {
    /// Fresh run. `hidden` lists extractor widths; the last is the feature dim.
    pub fn new(method: Method, config: TrainConfig, input_dim: usize, hidden: &[usize], blocked_eps: f64) -> Result<Self> {
        method.validate()?;
        config.validate()?;
        if hidden.is_empty() {
            return Err(Error::InvalidArgument("extractor needs at least one layer".into()));
        }
        if !(blocked_eps > 0.0 && blocked_eps < 1.0) {
            return Err(Error::InvalidArgument(format!("blocked eps must be in (0, 1), got {blocked_eps}")));
        }
        let model = Self::fresh_model(config.seed, input_dim, hidden, 0)?;
        let importance = ImportanceState::zeros(model.extractor());
        Ok(Self {
            method,
            config,
            hidden: hidden.to_vec(),
            blocked_eps,
            model,
            importance,
            ewc: None,
            accuracy: AccuracyMatrix::new(),
            importance_history: Vec::new(),
            task_importance_history: Vec::new(),
            records: Vec::new(),
        })
    }

    fn fresh_model(seed: u64, input_dim: usize, hidden: &[usize], index: u64) -> Result<TilModel> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        TilModel::new(&dims, &mut derive(seed, Purpose::ExtractorInit, index))
    }

    pub fn tasks_done(&self) -> usize {
        self.accuracy.num_tasks()
    }

    /// Learn the next task of `stream` and evaluate all tasks seen so far.
    pub fn step(&mut self, stream: &TaskStream) -> Result<()> {
        let t = self.tasks_done();
        let task = stream
            .tasks
            .get(t)
            .ok_or_else(|| Error::InvalidArgument(format!("stream has only {} tasks", stream.len())))?;
        let seed = self.config.seed;
        let input_dim = stream.input_dim();
        let head_rng = |id: TaskId| derive(seed, Purpose::HeadInit, id.0 as u64);

        let mut record = TaskRecord {
            task: task.task_id,
            report: TrainReport {
                epochs_run: 0,
                best_epoch: 0,
                train_loss: Vec::new(),
                best_val_accuracy: 0.0,
            },
            blocked: None,
            hard_blocked: None,
            chi: None,
        };

        match self.method {
            Method::One => {
                let mut m = Self::fresh_model(seed, input_dim, &self.hidden, t as u64)?;
                m.add_head(task.task_id, task.num_classes, &mut head_rng(task.task_id))?;
                let ctx = TaskContext {
                    importance: &self.importance,
                    ewc: None,
                };
                record.report = train_task(&mut m, task, &self.config, Method::Ncl, &ctx)?;
                let own = accuracy(&m, task.task_id, &task.test)?;
                let mut column = self.accuracy.final_column().map(<[f64]>::to_vec).unwrap_or_default();
                column.push(own);
                self.model = m;
                self.accuracy.push_column(column)?;
                self.records.push(record);
                return Ok(());
            }
            Method::Mtl => {
                let seen = &stream.tasks[..=t];
                let mut m = Self::fresh_model(seed, input_dim, &self.hidden, t as u64)?;
                for s in seen {
                    m.add_head(s.task_id, s.num_classes, &mut head_rng(s.task_id))?;
                }
                record.report = train_joint(&mut m, seen, &self.config)?;
                self.model = m;
            }
            method => {
                self.model.add_head(task.task_id, task.num_classes, &mut head_rng(task.task_id))?;
                let ctx = TaskContext {
                    importance: &self.importance,
                    ewc: self.ewc.as_ref(),
                };
                record.report = train_task(&mut self.model, task, &self.config, method, &ctx)?;
                self.after_task(task, &mut record)?;
            }
        }

        let column = stream.tasks[..=t]
            .iter()
            .map(|s| accuracy(&self.model, s.task_id, &s.test))
            .collect::<Result<Vec<_>>>()?;
        self.accuracy.push_column(column)?;
        self.records.push(record);
        Ok(())
    }

    /// Importance, accumulation and EWC bookkeeping after training a task.
    fn after_task(&mut self, task: &TaskDataset, record: &mut TaskRecord) -> Result<()> {
        let bs = self.config.batch_size;
        let tid = task.task_id;
        let ti = match self.method {
            Method::SpgFi => Some(fisher_importance(&self.model, tid, &task.train)?),
            m if m.tracks_importance() => Some(compute_task_importance(&self.model, tid, &task.train, m.cross_head(), bs)?),
            _ => None,
        };
        if let Some(ti) = ti {
            if !ti.cross.is_empty() {
                record.chi = Some(ti.chi_stats(&self.importance)?);
            }
            self.importance.accumulate(&ti)?;
            record.blocked = Some(blocked_fraction(&self.importance, self.blocked_eps));
            if let Method::SpgHard(th) = self.method {
                record.hard_blocked = Some(harden(&self.importance, th)?.blocked_fraction());
            }
            self.importance_history.push(self.importance.clone());
            self.task_importance_history.push(ti);
        }
        match self.method {
            Method::EwcGi(_) => {
                self.ewc = Some(EwcState::refresh_with(self.model.extractor().layers(), &self.importance));
            }
            Method::EwcFi(_) => {
                let f = fisher_diagonal(&self.model, tid, &task.train)?;
                self.ewc = Some(EwcState::refresh_additive(self.ewc.as_ref(), self.model.extractor().layers(), &f));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Run `method` over the whole stream.
pub fn run_continual(stream: &TaskStream, method: Method, config: &TrainConfig, hidden: &[usize], blocked_eps: f64) -> Result<ContinualRun> {
    if stream.is_empty() {
        return Err(Error::InvalidArgument("empty task stream".into()));
    }
    let mut run = ContinualRun::new(method, *config, stream.input_dim(), hidden, blocked_eps)?;
    for _ in 0..stream.len() {
        run.step(stream)?;
    }
    Ok(run)
}
