//! TOML run configuration.

use std::path::{Path, PathBuf};

use mixq_core::autoloop::SearchPlan;
use mixq_core::pipeline::{ModelSpec, PrepareSpec};
use mixq_core::pruner::ImportanceOrder;
use mixq_core::quantizer::{CodebookKind, CodecOptions};
use mixq_core::surrogate::{FitOptions, GpHyper};
use mixq_core::workbench::{AdapterInit, TaskSpec, TrainHyper};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub task: TaskSpec,
    #[serde(default)]
    pub prune: PruneSection,
    #[serde(default)]
    pub pretrain: TrainSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub search: SearchSection,
    #[serde(default)]
    pub codec: CodecOptions,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("mixq-out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneSection {
    pub rate: f64,
    pub importance: ImportanceOrder,
}

impl Default for PruneSection {
    fn default() -> Self {
        Self {
            rate: 0.0,
            importance: ImportanceOrder::Element1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub train_biases: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let h = TrainHyper::default();
        Self {
            epochs: h.epochs,
            lr: h.lr,
            batch_size: h.batch_size,
            train_biases: h.train_biases,
        }
    }
}

impl TrainSection {
    pub fn hyper(&self) -> TrainHyper {
        TrainHyper {
            epochs: self.epochs,
            lr: self.lr,
            batch_size: self.batch_size,
            train_biases: self.train_biases,
            ..TrainHyper::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchSection {
    pub init_count: usize,
    pub max_iters: usize,
    pub lambda: f64,
    pub rank: usize,
    pub loftq_iters: usize,
    pub init: AdapterInit,
    pub window: usize,
    pub gp: GpHyper,
    pub gp_refit: bool,
}

impl Default for SearchSection {
    fn default() -> Self {
        let p = SearchPlan::default();
        Self {
            init_count: p.init_count,
            max_iters: p.max_iters,
            lambda: p.lambda,
            rank: p.rank,
            loftq_iters: p.loftq_iters,
            init: p.init,
            window: p.window,
            gp: p.gp.hyper,
            gp_refit: p.gp.refit,
        }
    }
}

#[derive(Debug)]
pub struct SchemaError(pub String);

impl std::fmt::Display for SchemaError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), SchemaError> {
    if cond {
        Ok(())
    } else {
        Err(SchemaError(msg()))
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, SchemaError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SchemaError(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, SchemaError> {
        let cfg: Self = toml::from_str(text).map_err(|e| SchemaError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SchemaError> {
        check(self.schema_version == SCHEMA_VERSION, || {
            format!("schema_version {} is not supported (expected {SCHEMA_VERSION})", self.schema_version)
        })?;
        let w = &self.model.widths;
        check(w.len() >= 2, || "model.widths needs at least an input and an output width".into())?;
        check(w.iter().all(|&x| x > 0), || "model.widths must be positive".into())?;
        check(self.task.input_dim == w[0], || {
            format!("task.input_dim {} differs from the model input width {}", self.task.input_dim, w[0])
        })?;
        check(self.task.output_dim == w[w.len() - 1], || {
            format!("task.output_dim {} differs from the model output width {}", self.task.output_dim, w[w.len() - 1])
        })?;
        let s = &self.task.sizes;
        check(s.train > 0 && s.val > 0 && s.test > 0, || "task.sizes must be positive".into())?;
        check(self.task.separation.is_finite() && self.task.noise.is_finite() && self.task.noise >= 0.0, || {
            "task.separation and task.noise must be finite, noise ≥ 0".into()
        })?;
        check((0.0..1.0).contains(&self.prune.rate), || format!("prune.rate {} outside [0, 1)", self.prune.rate))?;
        for (name, t) in [("pretrain", &self.pretrain), ("train", &self.train)] {
            check(t.epochs >= 1 && t.batch_size >= 1, || format!("{name}.epochs and {name}.batch_size must be ≥ 1"))?;
            check(t.lr.is_finite() && t.lr > 0.0, || format!("{name}.lr must be positive"))?;
        }
        let q = &self.search;
        check(q.init_count >= 1, || "search.init_count must be ≥ 1".into())?;
        check(q.window >= 1, || "search.window must be ≥ 1".into())?;
        check(q.lambda.is_finite() && q.lambda >= 0.0, || "search.lambda must be finite and ≥ 0".into())?;
        check(q.loftq_iters >= 1, || "search.loftq_iters must be ≥ 1".into())?;
        check(q.gp.lengthscale > 0.0 && q.gp.signal_std > 0.0 && q.gp.noise_std >= 0.0, || {
            "search.gp needs lengthscale > 0, signal_std > 0, noise_std ≥ 0".into()
        })?;
        check(self.codec.block_size >= 1, || "codec.block_size must be ≥ 1".into())?;
        check(self.codec.eight_bit != CodebookKind::Fp4, || "codec.eight_bit cannot be fp4".into())?;
        Ok(())
    }

    /// Hash of everything that affects results (the output location does not).
    pub fn run_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_string(&c).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn prepare_spec(&self) -> PrepareSpec {
        PrepareSpec {
            model: self.model.clone(),
            task: self.task.clone(),
            prune_rate: self.prune.rate,
            importance: self.prune.importance,
            pretrain: self.pretrain.hyper(),
        }
    }

    pub fn plan(&self, workers: usize) -> SearchPlan {
        let q = &self.search;
        SearchPlan {
            init_count: q.init_count,
            max_iters: q.max_iters,
            lambda: q.lambda,
            rank: q.rank,
            loftq_iters: q.loftq_iters,
            init: q.init,
            codec: self.codec,
            window: q.window,
            seed: self.seed,
            gp: FitOptions {
                hyper: q.gp,
                refit: q.gp_refit,
            },
            workers,
        }
    }
}
