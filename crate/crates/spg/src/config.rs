//! Run configuration: a JSON document with strict unknown-key rejection.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use spg_core::data::{self, SplitFractions, SyntheticParams, TaskStream};
use spg_core::masking::BLOCKED_EPS;
use spg_core::trainer::{Method, TrainConfig};

use crate::error::{Error, Result};
use crate::idx::load_idx;

fn default_split() -> SplitFractions {
    SplitFractions::default()
}

fn default_std() -> f64 {
    data::CLUSTER_STD
}

fn default_drift() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum StreamSpec {
    Dissimilar {
        n_tasks: usize,
        classes_per_task: usize,
        dim: usize,
        samples_per_class: usize,
        #[serde(default = "default_std")]
        cluster_std: f64,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default = "default_split")]
        split: SplitFractions,
    },
    Similar {
        n_tasks: usize,
        classes: usize,
        dim: usize,
        samples_per_class: usize,
        #[serde(default = "default_std")]
        cluster_std: f64,
        #[serde(default = "default_drift")]
        drift: f64,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default = "default_split")]
        split: SplitFractions,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
        n_tasks: usize,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default = "default_split")]
        split: SplitFractions,
    },
}

impl StreamSpec {
    fn fixed_seed(&self) -> Option<u64> {
        match self {
            StreamSpec::Dissimilar { seed, .. } | StreamSpec::Similar { seed, .. } | StreamSpec::Idx { seed, .. } => *seed,
        }
    }

    /// Build the stream for a run; without a fixed stream seed the run seed
    /// is used, so every seed sees its own data draw.
    pub fn build(&self, run_seed: u64) -> Result<TaskStream> {
        let seed = self.fixed_seed().unwrap_or(run_seed);
        let stream = match *self {
            StreamSpec::Dissimilar { n_tasks, classes_per_task, dim, samples_per_class, cluster_std, split, .. } => {
                let p = SyntheticParams { n_tasks, classes_per_task, dim, samples_per_class, seed, cluster_std, split };
                data::dissimilar_stream(&p)?
            }
            StreamSpec::Similar { n_tasks, classes, dim, samples_per_class, cluster_std, drift, split, .. } => {
                let p = SyntheticParams { n_tasks, classes_per_task: classes, dim, samples_per_class, seed, cluster_std, split };
                data::similar_stream(&p, drift)?
            }
            StreamSpec::Idx { ref images, ref labels, n_tasks, split, .. } => {
                let (x, y) = load_idx(images, labels)?;
                data::split_by_class_with(&x, &y, n_tasks, seed, split)?
            }
        };
        Ok(stream)
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let StreamSpec::Idx { images, labels, .. } = self {
            for p in [images, labels] {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
}

impl TrainSection {
    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig { lr: self.lr, epochs: self.epochs, batch_size: self.batch_size, patience: self.patience, seed }
    }
}

fn default_percents() -> Vec<f64> {
    vec![10.0, 20.0]
}

fn default_eps() -> f64 {
    BLOCKED_EPS
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub stream: StreamSpec,
    /// Extractor layer widths; the last one is the feature dimension.
    pub hidden: Vec<usize>,
    pub methods: Vec<Method>,
    pub train: TrainSection,
    pub seeds: Vec<u64>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default = "default_eps")]
    pub blocked_eps: f64,
    #[serde(default = "default_percents")]
    pub prune_percents: Vec<f64>,
    /// Save a checkpoint after every task of `run`.
    #[serde(default)]
    pub checkpoint: bool,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read, resolve relative IDX paths against the config's directory, validate.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.stream.resolve_paths(base);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad(format!("hidden widths must be non-empty and positive: {:?}", self.hidden));
        }
        if self.methods.is_empty() {
            return bad("no methods".into());
        }
        if self.seeds.is_empty() {
            return bad("no seeds".into());
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return bad(format!("duplicate seeds in {:?}", self.seeds));
        }
        for (i, m) in self.methods.iter().enumerate() {
            m.validate().map_err(|e| Error::Config(e.to_string()))?;
            if self.methods[..i].contains(m) {
                return bad(format!("method {} listed twice", m.label()));
            }
        }
        self.train.with_seed(0).validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.blocked_eps > 0.0 && self.blocked_eps < 1.0) {
            return bad(format!("blocked_eps must be in (0, 1), got {}", self.blocked_eps));
        }
        if let Some(p) = self.prune_percents.iter().find(|p| !(**p > 0.0 && **p <= 100.0)) {
            return bad(format!("prune percent {p} outside (0, 100]"));
        }
        let (n_tasks, split) = match &self.stream {
            StreamSpec::Dissimilar { n_tasks, classes_per_task, dim, samples_per_class, cluster_std, split, .. } => {
                if *classes_per_task == 0 || *dim == 0 || *samples_per_class == 0 || cluster_std.is_nan() || *cluster_std <= 0.0 {
                    return bad("dissimilar stream sizes and cluster_std must be positive".into());
                }
                (*n_tasks, split)
            }
            StreamSpec::Similar { n_tasks, classes, dim, samples_per_class, cluster_std, drift, split, .. } => {
                if *classes == 0 || *dim == 0 || *samples_per_class == 0 || cluster_std.is_nan() || *cluster_std <= 0.0 {
                    return bad("similar stream sizes and cluster_std must be positive".into());
                }
                if !(*drift >= 0.0 && drift.is_finite()) {
                    return bad(format!("drift must be non-negative, got {drift}"));
                }
                (*n_tasks, split)
            }
            StreamSpec::Idx { n_tasks, split, .. } => (*n_tasks, split),
        };
        if n_tasks == 0 {
            return bad("n_tasks must be positive".into());
        }
        split.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    /// SHA-256 (lowercase hex) over the keys that shape a single run:
    /// stream, architecture, training settings and blocked eps. Output
    /// location, seed list and method list are left out so a checkpoint stays
    /// valid when those change.
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct Key<'a> {
            stream: &'a StreamSpec,
            hidden: &'a [usize],
            train: &'a TrainSection,
            blocked_eps: f64,
        }
        let key = Key { stream: &self.stream, hidden: &self.hidden, train: &self.train, blocked_eps: self.blocked_eps };
        hex(&Sha256::digest(serde_json::to_vec(&key).expect("config serializes")))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "stream": {"kind": "dissimilar", "n_tasks": 2, "classes_per_task": 2, "dim": 3, "samples_per_class": 10},
        "hidden": [8, 4],
        "methods": ["NCL", "SPG", {"SPG_HARD": 0.6}, {"EWC_GI": 100.0}],
        "train": {"lr": 0.1, "epochs": 3, "batch_size": 8, "patience": 2},
        "seeds": [0, 1]
    }"#;

    #[test]
    fn parses_with_defaults() {
        let c = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.methods[2], Method::SpgHard(0.6));
        assert_eq!(c.blocked_eps, BLOCKED_EPS);
        assert_eq!(c.prune_percents, vec![10.0, 20.0]);
        assert_eq!(c.out_dir, PathBuf::from("out"));
        assert!(!c.checkpoint);
    }

    #[test]
    fn unknown_keys_rejected() {
        let t = MINIMAL.replace("\"seeds\"", "\"sedes\": [1], \"seeds\"");
        assert!(matches!(RunConfig::from_json(&t), Err(Error::Config(_))));
        let t = MINIMAL.replace("\"patience\": 2", "\"patience\": 2, \"momentum\": 0.9");
        assert!(matches!(RunConfig::from_json(&t), Err(Error::Config(_))));
        let t = MINIMAL.replace("\"dim\": 3", "\"dim\": 3, \"drift\": 0.1");
        assert!(matches!(RunConfig::from_json(&t), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_values_rejected() {
        for (from, to) in [
            ("{\"SPG_HARD\": 0.6}", "{\"SPG_HARD\": 0.5}"),
            ("\"lr\": 0.1", "\"lr\": 0.0"),
            ("[8, 4]", "[]"),
            ("[0, 1]", "[1, 1]"),
            ("\"NCL\", \"SPG\"", "\"SPG\", \"SPG\""),
        ] {
            let t = MINIMAL.replace(from, to);
            assert!(matches!(RunConfig::from_json(&t), Err(Error::Config(_))), "{to}");
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::from_json(MINIMAL).unwrap();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seeds.push(7);
        b.out_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.train.lr = 0.2;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
