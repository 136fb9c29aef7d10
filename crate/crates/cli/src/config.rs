//! Flat TOML experiment configuration.
//!
//! Every key is optional and falls back to the desk-scale default. Unknown
//! keys are rejected so that a typo in a sweep fails loudly.

use std::path::Path;

use fsl_core::adversary::{AttackConfig, AttackKind, OmegaKind};
use fsl_core::aggregation::AggregatorKind;
use fsl_core::nn::{Architecture, SgdConfig};
use fsl_core::prng::InitKind;
use fsl_core::protocols::{Algorithm, DatasetSpec, ExperimentConfig};
use fsl_core::FslError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(#[from] FslError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Blobs,
    Idx,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub rounds: usize,
    pub clients: usize,
    pub clients_per_round: usize,
    pub local_epochs: usize,
    pub k: f64,
    pub sparsity: f64,
    pub algorithm: Algorithm,
    pub aggregator: AggregatorKind,
    pub server_lr: f64,
    pub seed: u32,
    pub eval_every: usize,

    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,

    /// Widths from input to output, e.g. `[20, 128, 10]`.
    pub layer_widths: Vec<usize>,
    pub weight_init: InitKind,

    pub dataset: DatasetKind,
    pub num_classes: usize,
    pub dims: usize,
    pub samples_per_class: usize,
    pub cluster_std: f64,
    pub separation: f64,
    pub idx_images: String,
    pub idx_labels: String,
    pub dirichlet_alpha: f64,

    pub attack: AttackKind,
    pub malicious_fraction: f64,
    pub malicious_epochs: usize,
    pub scale_factor: f64,
    pub omega: OmegaKind,
    pub gamma_init: f64,
    pub gamma_iters: usize,
}

impl Default for FileConfig {
    fn default() -> Self {
        Self::from_experiment(&ExperimentConfig::desk_scale())
    }
}

impl FileConfig {
    pub fn from_experiment(cfg: &ExperimentConfig) -> Self {
        let mut widths = vec![cfg.architecture.input_dim()];
        widths.extend(cfg.architecture.layers().iter().map(|l| l.fan_out));
        let (dataset, num_classes, dims, samples_per_class, cluster_std, separation, images, labels) =
            match &cfg.dataset {
                DatasetSpec::Blobs {
                    num_classes,
                    dims,
                    samples_per_class,
                    cluster_std,
                    separation,
                } => (
                    DatasetKind::Blobs,
                    *num_classes,
                    *dims,
                    *samples_per_class,
                    *cluster_std,
                    *separation,
                    String::new(),
                    String::new(),
                ),
                DatasetSpec::Idx { images, labels } => (
                    DatasetKind::Idx,
                    cfg.architecture.num_classes(),
                    cfg.architecture.input_dim(),
                    0,
                    0.0,
                    0.0,
                    images.clone(),
                    labels.clone(),
                ),
            };
        Self {
            rounds: cfg.rounds,
            clients: cfg.clients,
            clients_per_round: cfg.clients_per_round,
            local_epochs: cfg.local_epochs,
            k: cfg.k,
            sparsity: cfg.sparsity,
            algorithm: cfg.algorithm,
            aggregator: cfg.aggregator,
            server_lr: cfg.server_lr,
            seed: cfg.seed,
            eval_every: cfg.eval_every,
            learning_rate: cfg.sgd.learning_rate,
            momentum: cfg.sgd.momentum,
            weight_decay: cfg.sgd.weight_decay,
            batch_size: cfg.sgd.batch_size,
            layer_widths: widths,
            weight_init: cfg.weight_init,
            dataset,
            num_classes,
            dims,
            samples_per_class,
            cluster_std,
            separation,
            idx_images: images,
            idx_labels: labels,
            dirichlet_alpha: cfg.dirichlet_alpha,
            attack: cfg.attack.kind,
            malicious_fraction: cfg.attack.malicious_fraction,
            malicious_epochs: cfg.attack.malicious_epochs,
            scale_factor: cfg.attack.scale_factor,
            omega: cfg.attack.omega,
            gamma_init: cfg.attack.gamma_init,
            gamma_iters: cfg.attack.gamma_iters,
        }
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }

    /// Builds and validates the experiment.
    pub fn resolve(&self) -> Result<ExperimentConfig, ConfigError> {
        let architecture = Architecture::mlp(&self.layer_widths)?;
        let dataset = match self.dataset {
            DatasetKind::Blobs => DatasetSpec::Blobs {
                num_classes: self.num_classes,
                dims: self.dims,
                samples_per_class: self.samples_per_class,
                cluster_std: self.cluster_std,
                separation: self.separation,
            },
            DatasetKind::Idx => DatasetSpec::Idx {
                images: self.idx_images.clone(),
                labels: self.idx_labels.clone(),
            },
        };
        let cfg = ExperimentConfig {
            rounds: self.rounds,
            clients: self.clients,
            clients_per_round: self.clients_per_round,
            local_epochs: self.local_epochs,
            k: self.k,
            sparsity: self.sparsity,
            algorithm: self.algorithm,
            aggregator: self.aggregator,
            attack: AttackConfig {
                malicious_fraction: self.malicious_fraction,
                kind: self.attack,
                malicious_epochs: self.malicious_epochs,
                scale_factor: self.scale_factor,
                omega: self.omega,
                gamma_init: self.gamma_init,
                gamma_iters: self.gamma_iters,
            },
            sgd: SgdConfig {
                learning_rate: self.learning_rate,
                momentum: self.momentum,
                weight_decay: self.weight_decay,
                batch_size: self.batch_size,
            },
            server_lr: self.server_lr,
            seed: self.seed,
            architecture,
            weight_init: self.weight_init,
            dataset,
            dirichlet_alpha: self.dirichlet_alpha,
            eval_every: self.eval_every,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
