use serde::{Deserialize, Serialize};

use super::FederationError;
use crate::datagen::ClientDataset;
use crate::model::{DisentangleModel, EpochSettings, ModelHyperparams, ObjectiveSettings};

/// How the server combines client shared branches.
///
/// `SampleWeighted` is the default: clients influence the global parameters
/// in proportion to their sample counts. `Uniform` averages with equal
/// weights and is kept for ablation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    Uniform,
    #[default]
    SampleWeighted,
}

/// The server's whole world: the flattened shared parameters, the round
/// counter, and the aggregation rule. Its shape never changes once set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    pub omega_c: Vec<f64>,
    pub round: u64,
    pub aggregation_mode: AggregationMode,
}

/// One client's silo: its model, its local train/test data, and the run
/// seed its shuffle streams derive from. Data in a `ClientState` never
/// leaves it — rounds exchange parameter buffers and scalar summaries only.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    pub model: DisentangleModel,
    pub train: ClientDataset,
    pub test: ClientDataset,
    pub seed: u64,
}

impl ClientState {
    pub fn n_train(&self) -> usize {
        self.train.n()
    }
}

/// Everything a training run needs beyond the datasets themselves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub seed: u64,
    /// Number of federated rounds T.
    pub rounds: usize,
    /// Local epochs per round E.
    pub local_epochs: usize,
    pub hyper: ModelHyperparams,
    pub objective: ObjectiveSettings,
    pub epoch: EpochSettings,
    pub aggregation: AggregationMode,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            seed: 0,
            rounds: 50,
            local_epochs: 1,
            hyper: ModelHyperparams::default(),
            objective: ObjectiveSettings::default(),
            epoch: EpochSettings::default(),
            aggregation: AggregationMode::default(),
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<(), FederationError> {
        self.hyper
            .validate()
            .map_err(|e| FederationError::InvalidConfig(e.to_string()))?;
        if self.epoch.batch_size == 0 {
            return Err(FederationError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !self.epoch.eta.is_finite() || self.epoch.eta < 0.0 {
            return Err(FederationError::InvalidConfig(format!(
                "learning rate must be finite and nonnegative, got {}",
                self.epoch.eta
            )));
        }
        for (name, v) in [
            ("lambda_kl", self.objective.lambda_kl),
            ("lambda_prox", self.objective.lambda_prox),
            ("outcome_weight", self.objective.outcome_weight),
        ] {
            if !v.is_finite() {
                return Err(FederationError::InvalidConfig(format!("{name} must be finite, got {v}")));
            }
        }
        Ok(())
    }
}
