//! Declarative experiment configuration (TOML, unknown keys rejected).

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::PartitionMethod;
use crate::error::{Error, Result};
use crate::federation::AggregatorKind;
use crate::metrics::F1Average;
use crate::model::AdamHyper;

/// Where the experiment's data comes from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Csv,
    #[default]
    Synthetic,
    /// A preprocessed binary cache written by `gen-data`.
    Cache,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n_samples: usize,
    pub n_features: usize,
    pub n_classes: usize,
    pub separation: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_samples: 2200,
            n_features: 20,
            n_classes: 11,
            separation: 8.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    Iid,
    Dirichlet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: SourceKind,
    pub csv_path: Option<PathBuf>,
    pub label_column: String,
    pub cache_path: Option<PathBuf>,
    pub train_fraction: f64,
    pub partition: PartitionKind,
    pub alpha: f64,
    pub synthetic: SyntheticConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: SourceKind::Synthetic,
            csv_path: None,
            label_column: "Label".into(),
            cache_path: None,
            train_fraction: 0.7,
            partition: PartitionKind::Dirichlet,
            alpha: 0.5,
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl DataConfig {
    pub fn partition_method(&self) -> PartitionMethod {
        match self.partition {
            PartitionKind::Iid => PartitionMethod::Iid,
            PartitionKind::Dirichlet => PartitionMethod::Dirichlet { alpha: self.alpha },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 50,
            dropout: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub epochs_per_round: usize,
    pub batch_size: usize,
    pub patience: usize,
    /// Fraction of each client's shard held out as its local eval split.
    pub eval_fraction: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs_per_round: 20,
            batch_size: 32,
            patience: 10,
            eval_fraction: 0.2,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainingConfig {
    pub fn adam_hyper(&self) -> AdamHyper {
        AdamHyper {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.epsilon,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorName {
    Fedavg,
    Median,
    TrimmedMean,
    Krum,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregatorConfig {
    pub kind: AggregatorName,
    pub trim_k: usize,
    pub krum_f: usize,
}

impl Default for AggregatorConfig {
    fn default() -> Self {
        Self {
            kind: AggregatorName::Fedavg,
            trim_k: 1,
            krum_f: 1,
        }
    }
}

impl AggregatorConfig {
    pub fn aggregator_kind(&self) -> AggregatorKind {
        match self.kind {
            AggregatorName::Fedavg => AggregatorKind::FedAvg,
            AggregatorName::Median => AggregatorKind::Median,
            AggregatorName::TrimmedMean => AggregatorKind::TrimmedMean { k: self.trim_k },
            AggregatorName::Krum => AggregatorKind::Krum { f: self.krum_f },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub enabled: bool,
    /// 0-based victim id; the id-2 default matches a third client.
    pub victim_client: u32,
    pub victim_fraction: f64,
    /// Empty means "the 6 most frequent classes in the victim shard".
    pub target_classes: Vec<usize>,
    pub pooled_fraction: bool,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            victim_client: 2,
            victim_fraction: 0.7,
            target_classes: Vec::new(),
            pooled_fraction: false,
        }
    }
}

impl AttackConfig {
    /// Attack parameters with a concrete seed filled in.
    pub fn to_spec(&self, seed: u64) -> crate::poisoning::AttackSpec {
        let target_classes: Option<BTreeSet<usize>> = if self.target_classes.is_empty() {
            None
        } else {
            Some(self.target_classes.iter().copied().collect())
        };
        crate::poisoning::AttackSpec {
            victim_fraction: self.victim_fraction,
            target_classes,
            seed,
            enabled: self.enabled,
            pooled_fraction: self.pooled_fraction,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpConfig {
    pub enabled: bool,
    pub clip_norm: f64,
    pub sigma: f64,
}

impl Default for DpConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            clip_norm: 1.0,
            sigma: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub f1: F1Average,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportConfig {
    pub port: u16,
    /// Ship raw shard rows in JOIN_ACK instead of row indices.
    pub ship_data: bool,
    pub round_timeout_secs: u64,
    pub join_timeout_secs: u64,
}

impl Default for TransportConfig {
    fn default() -> Self {
        Self {
            port: 9099,
            ship_data: false,
            round_timeout_secs: 120,
            join_timeout_secs: 120,
        }
    }
}

/// Full declarative description of one experiment run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub n_clients: usize,
    pub rounds: usize,
    pub master_seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub aggregator: AggregatorConfig,
    pub attack: AttackConfig,
    pub dp: DpConfig,
    pub metrics: MetricsConfig,
    pub transport: TransportConfig,
}

impl Default for ExperimentConfig {
    /// Standard experiment shape: 5 clients, 20 rounds of 20 epochs.
    fn default() -> Self {
        Self {
            n_clients: 5,
            rounds: 20,
            master_seed: 42,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            training: TrainingConfig::default(),
            aggregator: AggregatorConfig::default(),
            attack: AttackConfig::default(),
            dp: DpConfig::default(),
            metrics: MetricsConfig::default(),
            transport: TransportConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("parsing config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::Config(format!("reading {}: {e}", path.as_ref().display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_clients == 0 {
            return Err(Error::Config("n_clients must be >= 1".into()));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be >= 1".into()));
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "data.train_fraction must be in (0,1), got {}",
                self.data.train_fraction
            )));
        }
        if !(self.training.eval_fraction > 0.0 && self.training.eval_fraction < 1.0) {
            return Err(Error::Config(format!(
                "training.eval_fraction must be in (0,1), got {}",
                self.training.eval_fraction
            )));
        }
        if self.data.source == SourceKind::Csv && self.data.csv_path.is_none() {
            return Err(Error::Config(
                "data.source = \"csv\" requires data.csv_path".into(),
            ));
        }
        if self.data.source == SourceKind::Cache && self.data.cache_path.is_none() {
            return Err(Error::Config(
                "data.source = \"cache\" requires data.cache_path".into(),
            ));
        }
        if !(self.data.alpha > 0.0) {
            return Err(Error::Config(format!(
                "data.alpha must be > 0, got {}",
                self.data.alpha
            )));
        }
        if self.model.hidden == 0 {
            return Err(Error::Config("model.hidden must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.model.dropout) {
            return Err(Error::Config(format!(
                "model.dropout must be in [0,1), got {}",
                self.model.dropout
            )));
        }
        if self.training.batch_size == 0 {
            return Err(Error::Config("training.batch_size must be >= 1".into()));
        }
        if self.training.patience == 0 {
            return Err(Error::Config("training.patience must be >= 1".into()));
        }
        if self.attack.enabled {
            if self.attack.victim_client as usize >= self.n_clients {
                return Err(Error::Config(format!(
                    "attack.victim_client {} out of range for {} clients",
                    self.attack.victim_client, self.n_clients
                )));
            }
            if !(0.0..=1.0).contains(&self.attack.victim_fraction) {
                return Err(Error::Config(format!(
                    "attack.victim_fraction must be in [0,1], got {}",
                    self.attack.victim_fraction
                )));
            }
        }
        if self.dp.enabled && !(self.dp.clip_norm > 0.0) {
            return Err(Error::Config(format!(
                "dp.clip_norm must be > 0, got {}",
                self.dp.clip_norm
            )));
        }
        if self.dp.enabled && self.dp.sigma < 0.0 {
            return Err(Error::Config(format!(
                "dp.sigma must be >= 0, got {}",
                self.dp.sigma
            )));
        }
        if self.n_clients > 1 {
            match self.aggregator.kind {
                AggregatorName::TrimmedMean if self.n_clients <= 2 * self.aggregator.trim_k => {
                    return Err(Error::Config(format!(
                        "trimmed_mean with k = {} needs more than {} clients",
                        self.aggregator.trim_k,
                        2 * self.aggregator.trim_k
                    )));
                }
                AggregatorName::Krum if self.n_clients < self.aggregator.krum_f + 3 => {
                    return Err(Error::Config(format!(
                        "krum with f = {} needs at least {} clients",
                        self.aggregator.krum_f,
                        self.aggregator.krum_f + 3
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }
}
