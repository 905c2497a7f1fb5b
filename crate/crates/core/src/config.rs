//! Experiment configuration: parsing, defaults and validation.
//!
//! Configs are flat TOML with dotted sections. Unknown keys are rejected so
//! typos fail loudly instead of silently running defaults.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::{PartitionKind, PartitionScheme};
use crate::error::{Error, Result};
use crate::nn::{Activation, ModelSpec};
use crate::seed::hash_bytes;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Dlsh,
    Dlmh,
    Idlmh,
    Fedavg,
}

impl Protocol {
    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Dlsh => "dlsh",
            Protocol::Dlmh => "dlmh",
            Protocol::Idlmh => "idlmh",
            Protocol::Fedavg => "fedavg",
        }
    }
}

/// Relative model capacity, mirroring the deep/shallow/tiny ordering of the
/// full-scale architectures this simulator stands in for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Archetype {
    /// One dense hidden layer.
    Tiny,
    /// One conv block plus the dense head; needs square inputs.
    Shallow,
    /// Two conv blocks and two dense layers; needs square inputs.
    Deep,
}

/// Client architecture assignment: one shared archetype or one per client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ClientSpecs {
    Shared(Archetype),
    PerClient(Vec<Archetype>),
}

impl Default for ClientSpecs {
    fn default() -> Self {
        ClientSpecs::Shared(Archetype::Tiny)
    }
}

impl ClientSpecs {
    /// Archetype for client `i`.
    pub fn for_client(&self, i: usize) -> Archetype {
        match self {
            ClientSpecs::Shared(a) => *a,
            ClientSpecs::PerClient(v) => v[i % v.len()],
        }
    }

    pub fn is_heterogeneous(&self) -> bool {
        match self {
            ClientSpecs::Shared(_) => false,
            ClientSpecs::PerClient(v) => v.windows(2).any(|w| w[0] != w[1]),
        }
    }
}

/// Whether a client's head covers only the classes in its data or the full
/// global label set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HeadMode {
    #[default]
    Data,
    Full,
}

/// How masked-out entries enter the server aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AggregateMode {
    /// Absent classes contribute logit value 0, as the masking step writes.
    #[default]
    ZeroFill,
    /// Renormalize each class over the clients that actually hold it.
    HoldersOnly,
}

/// Incentive package payload: value-preserving soft rows or one-hot rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IncentiveTarget {
    #[default]
    Soft,
    Hard,
}

/// What the server transforms for the incentive: its own logits or the
/// aggregated client targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IncentiveSource {
    #[default]
    Logits,
    Yagg,
}

/// Which clients opt in to the incentive round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum IncentiveClients {
    Keyword(String),
    List(Vec<usize>),
}

impl Default for IncentiveClients {
    fn default() -> Self {
        IncentiveClients::Keyword("all".into())
    }
}

impl IncentiveClients {
    pub fn selected(&self, n_clients: usize) -> Vec<usize> {
        match self {
            IncentiveClients::Keyword(_) => (0..n_clients).collect(),
            IncentiveClients::List(v) => v.clone(),
        }
    }
}

fn d_n_classes() -> usize {
    10
}
fn d_n_per_class() -> usize {
    300
}
fn d_feature_dim() -> usize {
    16
}
fn d_spread() -> f64 {
    0.2
}
fn d_dist_fraction() -> f64 {
    0.2
}
fn d_holdout_fraction() -> f64 {
    0.1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synth,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DataSource,
    #[serde(default = "d_n_classes")]
    pub n_classes: usize,
    #[serde(default = "d_n_per_class")]
    pub n_per_class: usize,
    #[serde(default = "d_feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "d_spread")]
    pub spread: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_labels: Option<PathBuf>,
    /// Fraction of the training pool carved out as unlabeled X_dist.
    #[serde(default = "d_dist_fraction")]
    pub dist_fraction: f64,
    /// Synthetic-data evaluation holdout, taken before the distillation split.
    #[serde(default = "d_holdout_fraction")]
    pub holdout_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeConfig {
    pub kind: PartitionKind,
    pub n_clients: usize,
    #[serde(default = "d_samples_per_client")]
    pub samples_per_client: usize,
}

fn d_samples_per_client() -> usize {
    600
}

impl SchemeConfig {
    pub fn to_scheme(&self, n_classes: usize) -> PartitionScheme {
        PartitionScheme {
            kind: self.kind,
            n_clients: self.n_clients,
            n_classes,
            samples_per_client: self.samples_per_client,
        }
    }
}

fn d_hidden() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default)]
    pub client: ClientSpecs,
    #[serde(default = "d_global_arch")]
    pub global: Archetype,
    /// Width of dense hidden layers.
    #[serde(default = "d_hidden")]
    pub hidden: usize,
    #[serde(default)]
    pub client_head: HeadMode,
}

fn d_global_arch() -> Archetype {
    Archetype::Tiny
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            client: ClientSpecs::default(),
            global: d_global_arch(),
            hidden: d_hidden(),
            client_head: HeadMode::default(),
        }
    }
}

fn d_epochs() -> usize {
    30
}
fn d_embed_epochs() -> usize {
    10
}
fn d_global_epochs() -> usize {
    40
}
fn d_learning_rate() -> f64 {
    0.01
}
fn d_batch_size() -> usize {
    32
}
fn d_temperature() -> f64 {
    1.0
}
fn d_balance_ratio() -> f64 {
    4.0
}
fn d_rounds() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    /// Local epochs E.
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    /// Binary-classifier epochs E_embed.
    #[serde(default = "d_embed_epochs")]
    pub embed_epochs: usize,
    /// Global distillation epochs E_g.
    #[serde(default = "d_global_epochs")]
    pub global_epochs: usize,
    #[serde(default = "d_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "d_batch_size")]
    pub batch_size: usize,
    /// Confidence-normalization temperature T.
    #[serde(default = "d_temperature")]
    pub temperature: f64,
    /// Cap on the public block of the embed dataset, as a multiple of the
    /// client's own sample count.
    #[serde(default = "d_balance_ratio")]
    pub balance_ratio: f64,
    #[serde(default)]
    pub aggregate_mode: AggregateMode,
    #[serde(default)]
    pub incentive_target: IncentiveTarget,
    #[serde(default)]
    pub incentive_source: IncentiveSource,
    #[serde(default)]
    pub incentive_clients: IncentiveClients,
    /// FedAvg communication rounds.
    #[serde(default = "d_rounds")]
    pub rounds: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        toml::from_str("").expect("empty train section applies defaults")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub protocol: Protocol,
    #[serde(default = "d_master_seed")]
    pub master_seed: u64,
    pub dataset: DatasetConfig,
    pub scheme: SchemeConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSection,
}

fn d_master_seed() -> u64 {
    42
}

/// Parse and validate a TOML experiment config.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config {
        key: "toml".into(),
        message: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config {
            key: "serialize".into(),
            message: e.to_string(),
        })
    }

    /// Stable identifier derived from the config contents alone.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        format!("{:016x}", hash_bytes(json.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let err = |key: &str, message: String| Error::Config {
            key: key.into(),
            message,
        };
        let d = &self.dataset;
        match d.source {
            DataSource::Synth => {
                if d.n_classes == 0 || d.n_per_class == 0 || d.feature_dim == 0 {
                    return Err(err("dataset", "synth counts must all be >= 1".into()));
                }
                if d.spread.is_nan() || d.spread <= 0.0 {
                    return Err(err("dataset.spread", format!("must be > 0, got {}", d.spread)));
                }
            }
            DataSource::Idx => {
                for (key, path) in [
                    ("dataset.images", &d.images),
                    ("dataset.labels", &d.labels),
                    ("dataset.test_images", &d.test_images),
                    ("dataset.test_labels", &d.test_labels),
                ] {
                    if path.is_none() {
                        return Err(err(key, "required for source = \"idx\"".into()));
                    }
                }
            }
        }
        if !(d.dist_fraction > 0.0 && d.dist_fraction < 1.0) {
            return Err(err(
                "dataset.dist_fraction",
                format!("must be in (0, 1), got {}", d.dist_fraction),
            ));
        }
        if !(d.holdout_fraction > 0.0 && d.holdout_fraction < 1.0) {
            return Err(err(
                "dataset.holdout_fraction",
                format!("must be in (0, 1), got {}", d.holdout_fraction),
            ));
        }
        if self.scheme.n_clients == 0 {
            return Err(err("scheme.n_clients", "must be >= 1".into()));
        }
        if self.scheme.samples_per_client == 0 {
            return Err(err("scheme.samples_per_client", "must be >= 1".into()));
        }
        let t = &self.train;
        if t.epochs == 0 || t.embed_epochs == 0 || t.global_epochs == 0 {
            return Err(err("train", "all epoch counts must be >= 1".into()));
        }
        if t.learning_rate.is_nan() || t.learning_rate <= 0.0 {
            return Err(err(
                "train.learning_rate",
                format!("must be > 0, got {}", t.learning_rate),
            ));
        }
        if t.batch_size == 0 {
            return Err(err("train.batch_size", "must be >= 1".into()));
        }
        if t.temperature.is_nan() || t.temperature <= 0.0 {
            return Err(err(
                "train.temperature",
                format!("must be > 0, got {}", t.temperature),
            ));
        }
        if t.balance_ratio.is_nan() || t.balance_ratio <= 0.0 {
            return Err(err(
                "train.balance_ratio",
                format!("must be > 0, got {}", t.balance_ratio),
            ));
        }
        if self.protocol == Protocol::Fedavg {
            if t.rounds == 0 {
                return Err(err("train.rounds", "must be >= 1".into()));
            }
            if self.model.client.is_heterogeneous() {
                return Err(err(
                    "model.client",
                    "fedavg requires a homogeneous client model".into(),
                ));
            }
        }
        if let IncentiveClients::List(list) = &t.incentive_clients {
            if let Some(&bad) = list.iter().find(|&&i| i >= self.scheme.n_clients) {
                return Err(err(
                    "train.incentive_clients",
                    format!("client {bad} out of range for {} clients", self.scheme.n_clients),
                ));
            }
        }
        if let IncentiveClients::Keyword(k) = &t.incentive_clients {
            if k != "all" {
                return Err(err(
                    "train.incentive_clients",
                    format!("expected \"all\" or a client list, got {k:?}"),
                ));
            }
        }
        if self.model.hidden == 0 {
            return Err(err("model.hidden", "must be >= 1".into()));
        }
        Ok(())
    }
}

/// Build a concrete model spec for an archetype over `input_dim` features.
///
/// Conv archetypes view the features as a square single-channel image and
/// therefore require a perfect-square input width.
pub fn build_model_spec(
    arch: Archetype,
    input_dim: usize,
    output_dim: usize,
    hidden: usize,
) -> Result<ModelSpec> {
    let act = Activation::Tanh;
    match arch {
        Archetype::Tiny => ModelSpec::mlp(input_dim, &[hidden], output_dim, act),
        Archetype::Shallow => {
            let side = square_side(input_dim)?;
            ModelSpec::conv_net([side, side, 1], &[(4, 3)], &[], output_dim, act)
        }
        Archetype::Deep => {
            let side = square_side(input_dim)?;
            ModelSpec::conv_net([side, side, 1], &[(6, 3), (6, 3)], &[hidden], output_dim, act)
        }
    }
}

fn square_side(input_dim: usize) -> Result<usize> {
    let side = (input_dim as f64).sqrt().round() as usize;
    if side * side != input_dim {
        return Err(Error::Config {
            key: "model".into(),
            message: format!("conv archetypes need a square input, got {input_dim} features"),
        });
    }
    Ok(side)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
protocol = "dlsh"

[dataset]
source = "synth"

[scheme]
kind = "niid1"
n_clients = 5
"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config(MINIMAL).unwrap();
        assert_eq!(cfg.train.learning_rate, 0.01);
        assert_eq!(cfg.train.batch_size, 32);
        assert_eq!(cfg.train.temperature, 1.0);
        assert_eq!(cfg.train.rounds, 10);
        assert_eq!(cfg.master_seed, 42);
        assert_eq!(cfg.scheme.samples_per_client, 600);
        assert_eq!(cfg.model.client, ClientSpecs::Shared(Archetype::Tiny));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{MINIMAL}\n[train]\nlerning_rate = 0.1\n");
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("lerning_rate"), "{err}");
    }

    #[test]
    fn fedavg_rejects_heterogeneous_clients() {
        let text = r#"
protocol = "fedavg"

[dataset]
source = "synth"

[scheme]
kind = "iid"
n_clients = 2

[model]
client = ["tiny", "deep"]
"#;
        let err = parse_config(text).unwrap_err();
        assert!(err.to_string().contains("homogeneous"), "{err}");
    }

    #[test]
    fn round_trip_preserves_config() {
        let text = r#"
protocol = "idlmh"
master_seed = 7

[dataset]
source = "synth"
n_classes = 6
spread = 0.5

[scheme]
kind = "niid3"
n_clients = 4
samples_per_client = 50

[model]
client = ["tiny", "shallow", "tiny", "deep"]
client_head = "full"

[train]
epochs = 3
temperature = 0.5
incentive_clients = [0, 2]
"#;
        let cfg = parse_config(text).unwrap();
        let round = parse_config(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(cfg, round);
        assert_eq!(cfg.fingerprint(), round.fingerprint());
    }

    #[test]
    fn idx_source_requires_paths() {
        let text = r#"
protocol = "dlsh"

[dataset]
source = "idx"

[scheme]
kind = "iid"
n_clients = 2
"#;
        let err = parse_config(text).unwrap_err();
        assert!(err.to_string().contains("dataset.images"), "{err}");
    }

    #[test]
    fn temperature_must_be_positive() {
        let text = format!("{MINIMAL}\n[train]\ntemperature = 0.0\n");
        assert!(parse_config(&text).is_err());
    }

    #[test]
    fn model_spec_archetypes_build() {
        let tiny = build_model_spec(Archetype::Tiny, 16, 10, 32).unwrap();
        assert_eq!(tiny.output_dim(), 10);
        let shallow = build_model_spec(Archetype::Shallow, 16, 10, 32).unwrap();
        assert_eq!(shallow.output_dim(), 10);
        let deep = build_model_spec(Archetype::Deep, 49, 10, 16).unwrap();
        assert_eq!(deep.output_dim(), 10);
        assert!(build_model_spec(Archetype::Deep, 17, 10, 16).is_err());
        // Capacity ordering: deep > shallow in parameter count is not
        // guaranteed for every input size, but tiny < deep holds here.
        assert!(tiny.param_count().unwrap() > 0);
    }
}
