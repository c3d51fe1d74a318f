//! The `run`, `prune` and `probe` drivers.
//!
//! Each (method, seed) pair is an independent job dispatched to the rayon
//! pool; results are collected in job order and written from one thread.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use spg_core::data::TaskStream;
use spg_core::eval::{chance_level, pruning_experiment, representation_probe, OneReference, PruneStrategy};
use spg_core::importance::compute_task_importance;
use spg_core::trainer::{ContinualRun, Method};
use spg_core::{Network, TaskId};

use crate::checkpoint::{load_checkpoint, load_for_resume, save_checkpoint, Checkpoint};
use crate::config::{hex, RunConfig};
use crate::error::{Error, Result};
use crate::records::{
    aggregate, blocked_rows, chi_rows, write_csv, write_json, AggregateRow, ProbeRow, PruneRow, RunRecord,
};

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seeds: Option<Vec<u64>>,
}

impl Overrides {
    pub fn apply(&self, mut cfg: RunConfig) -> Result<RunConfig> {
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = s.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Run `f` on a pool of `threads` workers, or on rayon's default pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::Config("thread count must be positive".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Invariant(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

fn streams(cfg: &RunConfig) -> Result<Vec<(u64, TaskStream)>> {
    cfg.seeds.par_iter().map(|&s| Ok((s, cfg.stream.build(s)?))).collect()
}

pub fn checkpoint_path(out: &Path, method: Method, seed: u64) -> PathBuf {
    out.join("checkpoints").join(format!("{}_seed{seed}.ckpt", method.label()))
}

/// Learn the whole stream, optionally checkpointing after every task and
/// resuming from an existing checkpoint.
fn run_one(
    cfg: &RunConfig,
    hash: &str,
    stream: &TaskStream,
    method: Method,
    seed: u64,
    checkpoint: Option<&Path>,
    resume: bool,
) -> Result<ContinualRun> {
    run_inner(cfg, hash, stream, method, seed, checkpoint, resume).map_err(|e| in_job(method, seed, e))
}

fn in_job(method: Method, seed: u64, e: Error) -> Error {
    match e {
        Error::Job { .. } => e,
        e => Error::Job { method: method.label(), seed, source: Box::new(e) },
    }
}

fn run_inner(
    cfg: &RunConfig,
    hash: &str,
    stream: &TaskStream,
    method: Method,
    seed: u64,
    checkpoint: Option<&Path>,
    resume: bool,
) -> Result<ContinualRun> {
    let tc = cfg.train.with_seed(seed);
    let mut run = match checkpoint {
        Some(p) if resume && p.exists() => {
            let cp = load_for_resume(p, hash)?;
            if cp.run.method != method || cp.run.config.seed != seed {
                return Err(Error::Invariant(format!(
                    "{} holds {} seed {}, expected {} seed {seed}",
                    p.display(),
                    cp.run.method.label(),
                    cp.run.config.seed,
                    method.label()
                )));
            }
            cp.run
        }
        _ => ContinualRun::new(method, tc, stream.input_dim(), &cfg.hidden, cfg.blocked_eps)?,
    };
    while run.tasks_done() < stream.len() {
        run.step(stream)?;
        if let Some(p) = checkpoint {
            save_checkpoint(p, &Checkpoint { config_hash: hash.into(), run: run.clone() })?;
        }
    }
    Ok(run)
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub records: Vec<RunRecord>,
    pub aggregate: Vec<AggregateRow>,
}

/// Every (method, seed) run, per-run JSON records and the summary CSVs.
pub fn cmd_run(cfg: &RunConfig, resume: bool) -> Result<RunOutput> {
    let hash = cfg.hash();
    let out = &cfg.out_dir;
    let streams = streams(cfg)?;

    // The single-task reference for forward transfer, one per seed.
    let refs: Vec<OneReference> = streams
        .par_iter()
        .map(|(seed, s)| {
            let one = run_one(cfg, &hash, s, Method::One, *seed, None, false)?;
            Ok(OneReference::from_matrix(&one.accuracy))
        })
        .collect::<Result<_>>()?;

    let jobs: Vec<(Method, usize)> = cfg
        .methods
        .iter()
        .flat_map(|&m| (0..streams.len()).map(move |k| (m, k)))
        .collect();
    let records: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(m, k)| {
            let (seed, s) = &streams[k];
            let ck = cfg.checkpoint.then(|| checkpoint_path(out, m, *seed));
            let run = run_one(cfg, &hash, s, m, *seed, ck.as_deref(), resume)?;
            RunRecord::from_run(&run, *seed, &hash, Some(&refs[k]))
        })
        .collect::<Result<_>>()?;

    for r in &records {
        write_json(&out.join("runs").join(r.file_name()), r)?;
    }
    let agg = aggregate(&records);
    write_csv(&out.join("aggregate.csv"), &agg)?;
    write_csv(&out.join("blocked.csv"), &blocked_rows(&records))?;
    write_csv(&out.join("chi.csv"), &chi_rows(&records))?;
    Ok(RunOutput { records, aggregate: agg })
}

/// Train on the first task, then zero parameters by importance rank.
pub fn cmd_prune(cfg: &RunConfig) -> Result<Vec<PruneRow>> {
    let streams = streams(cfg)?;
    let per_seed: Vec<Vec<PruneRow>> = streams
        .par_iter()
        .map(|(seed, stream)| {
            let first = TaskStream { kind: stream.kind, tasks: stream.tasks[..1].to_vec() };
            let task = &first.tasks[0];
            let run = run_one(cfg, "", &first, Method::Ncl, *seed, None, false)?;
            let imp = compute_task_importance(&run.model, task.task_id, &task.train, false, cfg.train.batch_size)?;
            let chance = chance_level(task.num_classes);
            let eval = |s: PruneStrategy, p: f64| {
                pruning_experiment(&run.model, task.task_id, &task.test, &imp.per_layer, s, p, *seed)
            };
            let mut rows = vec![PruneRow {
                seed: *seed,
                strategy: PruneStrategy::Nothing.name().into(),
                percent: None,
                accuracy: eval(PruneStrategy::Nothing, 100.0)?,
                chance,
            }];
            for s in [PruneStrategy::Lowest, PruneStrategy::Random, PruneStrategy::Highest] {
                for &p in &cfg.prune_percents {
                    rows.push(PruneRow { seed: *seed, strategy: s.name().into(), percent: Some(p), accuracy: eval(s, p)?, chance });
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let rows: Vec<PruneRow> = per_seed.into_iter().flatten().collect();
    write_csv(&cfg.out_dir.join("prune.csv"), &rows)?;
    Ok(rows)
}

/// SHA-256 over the little-endian bytes of every extractor parameter.
pub fn param_hash(net: &Network) -> String {
    let mut h = Sha256::new();
    for l in net.layers() {
        for v in l.iter() {
            h.update(v.to_le_bytes());
        }
    }
    hex(&h.finalize())
}

/// Task id given to the probe head; never collides with stream tasks.
pub const PROBE_TASK: TaskId = TaskId(0);

/// Checkpoint after each task, then fit a fresh head on every checkpoint's
/// frozen extractor using the merged stream as the probe set.
pub fn cmd_probe(cfg: &RunConfig) -> Result<Vec<ProbeRow>> {
    let hash = cfg.hash();
    let out = &cfg.out_dir;
    let streams = streams(cfg)?;
    let jobs: Vec<(Method, usize)> = cfg
        .methods
        .iter()
        .flat_map(|&m| (0..streams.len()).map(move |k| (m, k)))
        .collect();
    let per_job: Vec<Vec<ProbeRow>> = jobs
        .par_iter()
        .map(|&(m, k)| {
            let (seed, stream) = &streams[k];
            let probe = stream.merged(PROBE_TASK)?;
            let tc = cfg.train.with_seed(*seed);
            let mut run = ContinualRun::new(m, tc, stream.input_dim(), &cfg.hidden, cfg.blocked_eps)?;
            let mut paths = Vec::new();
            while run.tasks_done() < stream.len() {
                run.step(stream)?;
                let p = out
                    .join("probe_checkpoints")
                    .join(format!("{}_seed{seed}_task{}.ckpt", m.label(), run.tasks_done()));
                save_checkpoint(&p, &Checkpoint { config_hash: hash.clone(), run: run.clone() })?;
                paths.push(p);
            }
            paths
                .iter()
                .enumerate()
                .map(|(t, p)| {
                    let cp = load_checkpoint(p)?;
                    let ext = cp.run.model.extractor();
                    let before = param_hash(ext);
                    let acc = representation_probe(ext, &probe, &tc)?;
                    if param_hash(ext) != before {
                        return Err(Error::Invariant("probe modified the extractor".into()));
                    }
                    Ok(ProbeRow { method: m.label(), seed: *seed, tasks_learned: t + 1, probe_accuracy: acc })
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| in_job(m, *seed, e))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<ProbeRow> = per_job.into_iter().flatten().collect();
    write_csv(&out.join("probe.csv"), &rows)?;
    Ok(rows)
}
