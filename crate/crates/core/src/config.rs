//! One TOML document holding every module's settings.
//!
//! Defaults are sized for a single CPU core. Where a setting has a reference
//! value used with billion-parameter models it is noted on the field.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::CorpusConfig;
use crate::embed::EmbedderConfig;
use crate::error::{Error, Result};
use crate::eval::{EvalProtocol, Method, TttConfig};
use crate::lm::{LoraConfig, PretrainConfig, TrainConfig};
use crate::router::RoutingConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterConfig {
    /// Number of experts. Reference values: 1000 on large corpora, 100 where
    /// the elbow of the k-means loss suggests it.
    pub k: usize,
    pub seed: u64,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self { k: 32, seed: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub methods: Vec<Method>,
    /// Temperatures tried on the holdout set; the best one is used for every
    /// similarity-routed method.
    pub beta_grid: Vec<f64>,
    /// Holdout documents per cluster used for tuning and diagnostics.
    pub holdout_docs_per_cluster: usize,
    pub pass_at: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            methods: Method::table(),
            beta_grid: vec![0.01, 0.02, 0.05, 0.1, 0.2, 0.5],
            holdout_docs_per_cluster: 2,
            pass_at: vec![1, 2, 3, 5, 10, 32],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    pub taus: Vec<f64>,
    pub betas: Vec<f64>,
    pub repetitions: usize,
    pub n_queries: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            taus: vec![0.0, 0.001, 0.01, 0.02],
            betas: vec![0.01, 0.05, 0.1],
            repetitions: 10,
            n_queries: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub embedder: EmbedderConfig,
    pub cluster: ClusterConfig,
    pub pretrain: PretrainConfig,
    /// Reference rank 64, alpha 16.
    pub lora: LoraConfig,
    /// Expert training. Reference: lr 2e-4, batch 4, one epoch, Adam betas
    /// (0.9, 0.999), eps 1e-8, weight decay 0.01, first 1024 tokens.
    pub expert: TrainConfig,
    /// Global fine-tune baseline; same reference values as `expert`.
    pub finetune: TrainConfig,
    /// Reference sparsity 0.01.
    pub routing: RoutingConfig,
    /// Reference prefix lengths: 50 tokens for prose, 200 for code.
    pub protocol: EvalProtocol,
    /// Reference: 100 neighbours, one step each.
    pub ttt: TttConfig,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig::default(),
            embedder: EmbedderConfig::default(),
            cluster: ClusterConfig::default(),
            pretrain: PretrainConfig::default(),
            lora: LoraConfig::default(),
            expert: TrainConfig::default(),
            finetune: TrainConfig::default(),
            routing: RoutingConfig::default(),
            protocol: EvalProtocol::default(),
            ttt: TttConfig::default(),
            eval: EvalConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.cluster.k == 0 {
            return Err(Error::ZeroClusters);
        }
        self.corpus.validate()?;
        self.embedder.validate()?;
        self.lora.validate()?;
        self.expert.validate()?;
        self.finetune.validate()?;
        self.routing.validate(self.cluster.k)?;
        self.protocol.validate()?;
        if self.eval.beta_grid.iter().any(|&b| !(b > 0.0)) {
            return Err(Error::Config("beta_grid entries must be positive".into()));
        }
        if self.bench.repetitions == 0 || self.bench.n_queries == 0 {
            return Err(Error::Config("bench needs repetitions and queries >= 1".into()));
        }
        Ok(())
    }
}
