//! Run records (JSON) and the CSV tables derived from them.
//!
//! Every writer is deterministic: no timestamps, fixed column order, rows in
//! (method, seed, task) order, floats printed with Rust's shortest
//! round-trip formatting.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use spg_core::eval::{avg_accuracy, backward_transfer, forward_transfer, OneReference};
use spg_core::importance::ChiStats;
use spg_core::masking::BlockedFraction;
use spg_core::trainer::{ContinualRun, Method, TrainReport};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamCounts {
    pub extractor: usize,
    pub heads: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub task: usize,
    pub train: TrainReport,
    pub blocked: Option<BlockedFraction>,
    pub hard_blocked: Option<f64>,
    pub chi: Option<ChiStats>,
}

/// Everything one (method, seed) run produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub method_label: String,
    pub seed: u64,
    pub config_hash: String,
    /// `accuracy[j][i]`: task `i + 1` after learning task `j + 1`.
    pub accuracy: Vec<Vec<f64>>,
    pub avg_accuracy: f64,
    pub fwt: Option<f64>,
    pub bwt: Option<f64>,
    /// Per-task accuracies of the single-task reference used for `fwt`.
    pub one_reference: Option<Vec<f64>>,
    pub params: ParamCounts,
    pub tasks: Vec<TaskEntry>,
}

impl RunRecord {
    pub fn from_run(run: &ContinualRun, seed: u64, config_hash: &str, one: Option<&OneReference>) -> Result<Self> {
        let (extractor, heads) = run.model.param_count();
        Ok(Self {
            method: run.method,
            method_label: run.method.label(),
            seed,
            config_hash: config_hash.into(),
            accuracy: run.accuracy.columns().to_vec(),
            avg_accuracy: avg_accuracy(&run.accuracy)?,
            fwt: one.map(|r| forward_transfer(&run.accuracy, r)).transpose()?,
            bwt: backward_transfer(&run.accuracy),
            one_reference: one.map(|r| r.beta.clone()),
            params: ParamCounts { extractor, heads },
            tasks: run
                .records
                .iter()
                .map(|r| TaskEntry {
                    task: r.task.0,
                    train: r.report.clone(),
                    blocked: r.blocked.clone(),
                    hard_blocked: r.hard_blocked,
                    chi: r.chi,
                })
                .collect(),
        })
    }

    pub fn file_name(&self) -> String {
        format!("{}_seed{}.json", self.method_label, self.seed)
    }

    /// Metric values keyed by name; absent metrics are skipped.
    pub fn metrics(&self) -> Vec<(&'static str, f64)> {
        let mut m = vec![("avg_accuracy", self.avg_accuracy)];
        if let Some(v) = self.fwt {
            m.push(("fwt", v));
        }
        if let Some(v) = self.bwt {
            m.push(("bwt", v));
        }
        if let Some(b) = self.tasks.last().and_then(|t| t.blocked.as_ref()) {
            m.push(("blocked_fraction", b.total));
        }
        if let Some(h) = self.tasks.last().and_then(|t| t.hard_blocked) {
            m.push(("hard_blocked_fraction", h));
        }
        m
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Mean and sample standard deviation (`n − 1`); std is `None` below two values.
pub fn mean_std(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, Some(var.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub std: Option<f64>,
}

/// Mean ± sample std per (method, metric) over the given records.
pub fn aggregate(records: &[RunRecord]) -> Vec<AggregateRow> {
    let mut methods: Vec<&str> = Vec::new();
    for r in records {
        if !methods.contains(&r.method_label.as_str()) {
            methods.push(&r.method_label);
        }
    }
    let mut rows = Vec::new();
    for m in methods {
        let runs: Vec<&RunRecord> = records.iter().filter(|r| r.method_label == m).collect();
        let mut names: Vec<&'static str> = Vec::new();
        for r in &runs {
            for (k, _) in r.metrics() {
                if !names.contains(&k) {
                    names.push(k);
                }
            }
        }
        for name in names {
            let xs: Vec<f64> = runs
                .iter()
                .filter_map(|r| r.metrics().into_iter().find(|(k, _)| *k == name).map(|(_, v)| v))
                .collect();
            let (mean, std) = mean_std(&xs);
            rows.push(AggregateRow { method: m.into(), metric: name.into(), n: xs.len(), mean, std });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockedRow {
    pub method: String,
    pub seed: u64,
    pub task: usize,
    /// Extractor layer index, or `all` for the whole extractor.
    pub layer: String,
    pub fraction: f64,
}

pub fn blocked_rows(records: &[RunRecord]) -> Vec<BlockedRow> {
    let mut rows = Vec::new();
    for r in records {
        for t in &r.tasks {
            let Some(b) = &t.blocked else { continue };
            let row = |layer: String, fraction| BlockedRow {
                method: r.method_label.clone(),
                seed: r.seed,
                task: t.task,
                layer,
                fraction,
            };
            rows.extend(b.per_layer.iter().enumerate().map(|(i, &f)| row(i.to_string(), f)));
            rows.push(row("all".into(), b.total));
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiRow {
    pub method: String,
    pub seed: u64,
    pub task: usize,
    pub f_each: f64,
    pub g_each: f64,
    pub f_total: f64,
    pub g_total: f64,
    pub each_empty: bool,
    pub total_empty: bool,
}

pub fn chi_rows(records: &[RunRecord]) -> Vec<ChiRow> {
    let mut rows = Vec::new();
    for r in records {
        for t in &r.tasks {
            if let Some(c) = &t.chi {
                rows.push(ChiRow {
                    method: r.method_label.clone(),
                    seed: r.seed,
                    task: t.task,
                    f_each: c.f_each,
                    g_each: c.g_each,
                    f_total: c.f_total,
                    g_total: c.g_total,
                    each_empty: c.each_empty,
                    total_empty: c.total_empty,
                });
            }
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneRow {
    pub seed: u64,
    pub strategy: String,
    /// Empty for the unpruned row.
    pub percent: Option<f64>,
    pub accuracy: f64,
    pub chance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub method: String,
    pub seed: u64,
    pub tasks_learned: usize,
    pub probe_accuracy: f64,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invariant(e.to_string()))?;
    write_file(path, &bytes)
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<T>, _>>()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_values() {
        assert_eq!(mean_std(&[2.0]), (2.0, None));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s.unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.csv");
        let rows = vec![
            PruneRow { seed: 1, strategy: "nothing".into(), percent: None, accuracy: 0.95, chance: 0.5 },
            PruneRow { seed: 1, strategy: "lowest".into(), percent: Some(10.0), accuracy: 0.1 + 0.2, chance: 0.5 },
        ];
        write_csv(&p, &rows).unwrap();
        assert_eq!(read_csv::<PruneRow>(&p).unwrap(), rows);
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("seed,strategy,percent,accuracy,chance\n"));
    }
}
