//! Lossless run snapshots for resuming.
//!
//! Layout: the 8-byte tag `SPGCKPT\0`, a little-endian u32 version, a
//! little-endian u64 header length, the JSON header, then every bulk array
//! as raw little-endian f64 values. The header records the shape of each
//! array and a SHA-256 of the payload.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use spg_core::eval::AccuracyMatrix;
use spg_core::importance::{ImportanceState, TaskImportance};
use spg_core::trainer::{ContinualRun, EwcState, Method, TaskRecord, TrainConfig};
use spg_core::{Activation, LayerParams, Network, TaskId, TilModel};

use crate::config::hex;
use crate::error::{CheckpointError, Error, Result};

const TAG: &[u8; 8] = b"SPGCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub run: ContinualRun,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config_hash: String,
    method: Method,
    config: TrainConfig,
    hidden: Vec<usize>,
    blocked_eps: f64,
    /// `(in_dim, out_dim, activation)` per extractor layer.
    extractor: Vec<(usize, usize, Activation)>,
    /// `(task, in_dim, out_dim)` per head in task order.
    heads: Vec<(TaskId, usize, usize)>,
    tasks_seen: usize,
    ewc: bool,
    /// `tasks_seen` of each stored accumulated state.
    importance_history: Vec<usize>,
    /// Cross-head task ids of each stored per-task importance.
    task_importance_history: Vec<Vec<TaskId>>,
    accuracy: AccuracyMatrix,
    records: Vec<TaskRecord>,
    payload_values: usize,
    payload_sha256: String,
}

struct Writer(Vec<f64>);

impl Writer {
    fn put(&mut self, xs: &[f64]) {
        self.0.extend_from_slice(xs);
    }

    fn put_layers(&mut self, layers: &[Vec<f64>]) {
        for l in layers {
            self.put(l);
        }
    }
}

struct Reader<'a> {
    values: &'a [f64],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [f64]> {
        let out = self.values.get(self.at..self.at + n)?;
        self.at += n;
        Some(out)
    }

    fn take_layers(&mut self, sizes: &[usize]) -> Option<Vec<Vec<f64>>> {
        sizes.iter().map(|&n| self.take(n).map(<[f64]>::to_vec)).collect()
    }

    fn take_params(&mut self, in_dim: usize, out_dim: usize) -> Option<LayerParams> {
        let w = self.take(in_dim * out_dim)?.to_vec();
        let b = self.take(out_dim)?.to_vec();
        LayerParams::new(in_dim, out_dim, w, b).ok()
    }
}

fn encode(cp: &Checkpoint) -> Result<Vec<u8>> {
    let run = &cp.run;
    let mut w = Writer(Vec::new());
    let ext = run.model.extractor();
    for l in ext.layers() {
        w.put(l.weights());
        w.put(l.bias());
    }
    for h in run.model.heads().values() {
        w.put(h.weights());
        w.put(h.bias());
    }
    w.put_layers(run.importance.per_layer());
    if let Some(e) = &run.ewc {
        w.put_layers(&e.anchor);
        w.put_layers(&e.omega);
    }
    for s in &run.importance_history {
        w.put_layers(s.per_layer());
    }
    for ti in &run.task_importance_history {
        w.put_layers(&ti.per_layer);
        w.put_layers(&ti.current);
        for (_, c) in &ti.cross {
            w.put_layers(c);
        }
    }
    let mut payload = Vec::with_capacity(w.0.len() * 8);
    for v in &w.0 {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    let header = Header {
        config_hash: cp.config_hash.clone(),
        method: run.method,
        config: run.config,
        hidden: run.hidden.clone(),
        blocked_eps: run.blocked_eps,
        extractor: ext
            .layers()
            .iter()
            .zip(ext.activations())
            .map(|(l, &a)| (l.in_dim(), l.out_dim(), a))
            .collect(),
        heads: run.model.heads().iter().map(|(&t, h)| (t, h.in_dim(), h.out_dim())).collect(),
        tasks_seen: run.importance.tasks_seen(),
        ewc: run.ewc.is_some(),
        importance_history: run.importance_history.iter().map(ImportanceState::tasks_seen).collect(),
        task_importance_history: run
            .task_importance_history
            .iter()
            .map(|ti| ti.cross.iter().map(|(t, _)| *t).collect())
            .collect(),
        accuracy: run.accuracy.clone(),
        records: run.records.clone(),
        payload_values: w.0.len(),
        payload_sha256: hex(&Sha256::digest(&payload)),
    };
    let head = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + head.len() + payload.len());
    out.extend_from_slice(TAG);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(head.len() as u64).to_le_bytes());
    out.extend_from_slice(&head);
    out.extend_from_slice(&payload);
    Ok(out)
}

fn decode(path: &Path, bytes: &[u8]) -> Result<Checkpoint, CheckpointError> {
    let corrupt = |reason: &str| CheckpointError::Corrupt { path: path.into(), reason: reason.into() };
    if bytes.len() < 20 || &bytes[..8] != TAG {
        return Err(corrupt("missing checkpoint tag"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let head_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let head_end = usize::try_from(head_len)
        .ok()
        .and_then(|n| n.checked_add(20))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| corrupt("header runs past end of file"))?;
    let h: Header =
        serde_json::from_slice(&bytes[20..head_end]).map_err(|e| corrupt(&format!("bad header: {e}")))?;
    let payload = &bytes[head_end..];
    if Some(payload.len()) != h.payload_values.checked_mul(8) {
        return Err(corrupt(&format!("payload has {} bytes, header promises {} values", payload.len(), h.payload_values)));
    }
    if hex(&Sha256::digest(payload)) != h.payload_sha256 {
        return Err(corrupt("payload checksum mismatch"));
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let mut r = Reader { values: &values, at: 0 };
    let short = || corrupt("payload shorter than the declared shapes");

    let mut layers = Vec::new();
    let mut acts = Vec::new();
    for &(i, o, a) in &h.extractor {
        layers.push(r.take_params(i, o).ok_or_else(short)?);
        acts.push(a);
    }
    let sizes: Vec<usize> = layers.iter().map(LayerParams::len).collect();
    let extractor = Network::from_layers(layers, acts).map_err(|e| corrupt(&e.to_string()))?;
    let mut heads = BTreeMap::new();
    for &(t, i, o) in &h.heads {
        heads.insert(t, r.take_params(i, o).ok_or_else(short)?);
    }
    let model = TilModel::from_parts(extractor, heads).map_err(|e| corrupt(&e.to_string()))?;
    let state = |r: &mut Reader, seen: usize| -> Result<ImportanceState, CheckpointError> {
        let layers = r.take_layers(&sizes).ok_or_else(short)?;
        ImportanceState::from_parts(layers, seen).map_err(|e| corrupt(&e.to_string()))
    };
    let importance = state(&mut r, h.tasks_seen)?;
    let ewc = if h.ewc {
        Some(EwcState {
            anchor: r.take_layers(&sizes).ok_or_else(short)?,
            omega: r.take_layers(&sizes).ok_or_else(short)?,
        })
    } else {
        None
    };
    let importance_history = h
        .importance_history
        .iter()
        .map(|&seen| state(&mut r, seen))
        .collect::<Result<Vec<_>, _>>()?;
    let mut task_importance_history = Vec::new();
    for ids in &h.task_importance_history {
        let per_layer = r.take_layers(&sizes).ok_or_else(short)?;
        let current = r.take_layers(&sizes).ok_or_else(short)?;
        let cross = ids
            .iter()
            .map(|&t| r.take_layers(&sizes).map(|c| (t, c)).ok_or_else(short))
            .collect::<Result<Vec<_>, _>>()?;
        task_importance_history.push(TaskImportance { per_layer, current, cross });
    }
    if r.at != values.len() {
        return Err(corrupt("payload longer than the declared shapes"));
    }
    Ok(Checkpoint {
        config_hash: h.config_hash,
        run: ContinualRun {
            method: h.method,
            config: h.config,
            hidden: h.hidden,
            blocked_eps: h.blocked_eps,
            model,
            importance,
            ewc,
            accuracy: h.accuracy,
            importance_history,
            task_importance_history,
            records: h.records,
        },
    })
}

/// Write atomically: a sibling temp file is renamed over `path`.
pub fn save_checkpoint(path: &Path, cp: &Checkpoint) -> Result<()> {
    let bytes = encode(cp)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(decode(path, &bytes)?)
}

/// Load a checkpoint and refuse it unless it was written for `config_hash`.
pub fn load_for_resume(path: &Path, config_hash: &str) -> Result<Checkpoint> {
    let cp = load_checkpoint(path)?;
    if cp.config_hash != config_hash {
        return Err(CheckpointError::HashMismatch {
            path: path.into(),
            expected: config_hash.into(),
            found: cp.config_hash,
        }
        .into());
    }
    Ok(cp)
}
