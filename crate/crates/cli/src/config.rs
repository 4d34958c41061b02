use std::collections::BTreeMap;

use neomtl::dataset::Dataset;
use neomtl::network::{LossWeights, NetworkTopology};
use neomtl::train::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Training hyperparameters as written by users. The topology is derived
/// from the data: every head gets the same hidden layers and an output
/// matching its task.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub trunk: Vec<usize>,
    #[serde(default)]
    pub head_hidden: Vec<usize>,
    /// Per-task loss weight by task name; unlisted tasks weigh 1.
    #[serde(default)]
    pub loss_weights: BTreeMap<String, f64>,
    pub lr0: f64,
    #[serde(default)]
    pub lr_min: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub leaky_stats: bool,
}

fn default_batch() -> usize {
    64
}

pub fn parse_json<T: DeserializeOwned>(text: &str, path: &std::path::Path) -> CliResult<T> {
    serde_json::from_str(text).map_err(|e| CliError::Input {
        path: path.to_path_buf(),
        message: format!("invalid JSON: {e}"),
    })
}

pub fn task_index(dataset: &Dataset, name: &str) -> CliResult<usize> {
    dataset.task_index(name).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown task `{name}`; valid tasks: {}",
            dataset.task_names().join(", ")
        ))
    })
}

impl ExperimentConfig {
    pub fn train_config(&self, dataset: &Dataset, seed: u64) -> CliResult<TrainConfig> {
        for name in self.loss_weights.keys() {
            task_index(dataset, name)?;
        }
        let lambda = dataset
            .task_names()
            .iter()
            .map(|t| self.loss_weights.get(*t).copied().unwrap_or(1.0))
            .collect();
        let config = TrainConfig {
            topology: NetworkTopology::uniform(
                dataset.n_features(),
                &self.trunk,
                &self.head_hidden,
                &dataset.targets(),
            ),
            loss_weights: LossWeights::new(lambda)?,
            lr0: self.lr0,
            lr_min: self.lr_min,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            leaky_stats: self.leaky_stats,
        };
        config.validate()?;
        Ok(config)
    }
}
