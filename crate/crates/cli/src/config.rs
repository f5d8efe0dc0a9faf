//! Declarative experiment configuration.
//!
//! One TOML file describes a whole experiment: data source, model shape,
//! training schedule, evaluation split, and the sweep grid. Every field has
//! a documented default except `mode` and `seeds`, unknown keys are
//! rejected, and validation errors name the offending key. The resolved
//! config (defaults included) is echoed verbatim into `report.json`, so no
//! default is ever silent.

use std::path::Path;

use serde::{Deserialize, Serialize};

use fedcate_core::datagen::{SynthConfig, WeightDist};
use fedcate_core::federation::{AggregationMode, FederationConfig};
use fedcate_core::model::{
    EpochSettings, ModelHyperparams, ObjectiveSettings, OutcomeKind, SampleMode, SharedScope,
};

use crate::CliError;

/// Where the data comes from: the built-in generator, or CSV files listed
/// in a manifest (no ground-truth effects, so no PEHE/ATE in the report).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Synthetic,
    CsvFederation,
}

/// `[data]`: generator settings, or the manifest for CSV federations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Number of clients K (synthetic mode).
    pub clients: usize,
    pub samples_per_client: usize,
    /// Width of the covariate block all clients share.
    pub shared_dim: usize,
    /// Private-block width used for every client when `private_dims` is
    /// not given.
    pub private_dim: usize,
    /// Per-client private widths; must have exactly `clients` entries.
    pub private_dims: Option<Vec<usize>>,
    pub alpha: f64,
    pub beta: f64,
    pub noise_var: f64,
    pub weight_loc: f64,
    pub weight_scale: f64,
    pub weight_dist: WeightDist,
    pub standardize_tau: bool,
    /// Path to a `dataset.json` manifest (csv_federation mode only).
    pub manifest: Option<String>,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SynthConfig::default();
        DataConfig {
            clients: 5,
            samples_per_client: s.samples_per_client,
            shared_dim: 10,
            private_dim: 5,
            private_dims: None,
            alpha: s.alpha,
            beta: s.beta,
            noise_var: s.noise_var,
            weight_loc: s.weight_loc,
            weight_scale: s.weight_scale,
            weight_dist: s.weight_dist,
            standardize_tau: s.standardize_tau,
            manifest: None,
        }
    }
}

/// `[model]`: architecture knobs. Branch depth is the length of
/// `branch_widths`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub z_dim: usize,
    pub branch_widths: Vec<usize>,
    pub encoder_width: usize,
    pub outcome_kind: OutcomeKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let h = ModelHyperparams::default();
        ModelConfig {
            z_dim: h.z_dim,
            branch_widths: h.branch_widths,
            encoder_width: h.encoder_width,
            outcome_kind: h.outcome_kind,
        }
    }
}

/// `[training]`: the federated schedule and loss weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    /// Federated rounds T.
    pub rounds: usize,
    /// Local epochs per round E.
    pub local_epochs: usize,
    pub eta: f64,
    pub lambda_kl: f64,
    pub lambda_prox: f64,
    pub batch_size: usize,
    pub aggregation: AggregationMode,
    /// What the server aggregates and the proximal term anchors: the shared
    /// branch alone (default) or the shared encoder too.
    pub scope: SharedScope,
    /// Draw latents through the reparameterized sampler during training
    /// instead of using encoder means.
    pub sample_latents: bool,
    pub negate_control_loss: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let o = ObjectiveSettings::default();
        let e = EpochSettings::default();
        TrainingConfig {
            rounds: 50,
            local_epochs: 1,
            eta: e.eta,
            lambda_kl: o.lambda_kl,
            lambda_prox: o.lambda_prox,
            batch_size: e.batch_size,
            aggregation: AggregationMode::default(),
            scope: o.scope,
            sample_latents: false,
            negate_control_loss: o.negate_control_loss,
        }
    }
}

/// `[evaluation]`: held-out split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub test_fraction: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig { test_fraction: 0.2 }
    }
}

/// `[sweep]`: alpha grid for the `sweep` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub alpha_grid: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { alpha_grid: vec![0.0, 0.25, 0.5, 0.75, 1.0] }
    }
}

fn default_out_dir() -> String {
    "fedcate-out".to_string()
}

/// The whole experiment file. `mode` and `seeds` are required; everything
/// else defaults as documented on each section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// One full run per seed; aggregates report mean/std across them.
    pub seeds: Vec<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    /// Per-client private widths: the explicit list, or `private_dim`
    /// repeated.
    pub fn private_dims(&self) -> Vec<usize> {
        match &self.data.private_dims {
            Some(v) => v.clone(),
            None => vec![self.data.private_dim; self.data.clients],
        }
    }

    /// Generator settings for one seed.
    pub fn synth_config(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            seed,
            samples_per_client: self.data.samples_per_client,
            alpha: self.data.alpha,
            beta: self.data.beta,
            noise_var: self.data.noise_var,
            weight_loc: self.data.weight_loc,
            weight_scale: self.data.weight_scale,
            weight_dist: self.data.weight_dist,
            standardize_tau: self.data.standardize_tau,
        }
    }

    pub fn hyper(&self) -> ModelHyperparams {
        ModelHyperparams {
            z_dim: self.model.z_dim,
            branch_widths: self.model.branch_widths.clone(),
            encoder_width: self.model.encoder_width,
            outcome_kind: self.model.outcome_kind,
        }
    }

    /// Trainer settings for one seed.
    pub fn federation_config(&self, seed: u64) -> FederationConfig {
        let t = &self.training;
        FederationConfig {
            seed,
            rounds: t.rounds,
            local_epochs: t.local_epochs,
            hyper: self.hyper(),
            objective: ObjectiveSettings {
                lambda_kl: t.lambda_kl,
                lambda_prox: t.lambda_prox,
                scope: t.scope,
                mode: if t.sample_latents { SampleMode::Sample { seed } } else { SampleMode::Mean },
                negate_control_loss: t.negate_control_loss,
                ..Default::default()
            },
            epoch: EpochSettings { eta: t.eta, batch_size: t.batch_size },
            aggregation: t.aggregation,
        }
    }

    /// Range and consistency checks; every message names the key it is
    /// about.
    pub fn validate(&self) -> Result<(), String> {
        if self.seeds.is_empty() {
            return Err("seeds must list at least one seed".into());
        }
        match self.mode {
            Mode::Synthetic => {
                let d = &self.data;
                if d.clients < 1 {
                    return Err(format!("data.clients must be at least 1, got {}", d.clients));
                }
                if d.samples_per_client < 2 {
                    return Err(format!(
                        "data.samples_per_client must be at least 2 to leave train and test rows, got {}",
                        d.samples_per_client
                    ));
                }
                if d.shared_dim < 1 {
                    return Err("data.shared_dim must be at least 1".into());
                }
                if let Some(list) = &d.private_dims {
                    if list.len() != d.clients {
                        return Err(format!(
                            "data.private_dims has {} entries but data.clients is {}",
                            list.len(),
                            d.clients
                        ));
                    }
                }
                for (k, &w) in self.private_dims().iter().enumerate() {
                    if w < 1 {
                        return Err(format!("data.private_dims entry {k} must be at least 1"));
                    }
                }
                self.synth_config(self.seeds[0]).validate().map_err(|e| format!("data.{e}"))?;
            }
            Mode::CsvFederation => {
                if self.data.manifest.is_none() {
                    return Err("data.manifest is required when mode = \"csv_federation\"".into());
                }
            }
        }
        self.hyper().validate().map_err(|e| format!("model: {e}"))?;
        let t = &self.training;
        if t.rounds < 1 {
            return Err(format!("training.rounds must be at least 1, got {}", t.rounds));
        }
        if t.batch_size < 1 {
            return Err("training.batch_size must be at least 1".into());
        }
        if !t.eta.is_finite() || t.eta < 0.0 {
            return Err(format!("training.eta must be finite and nonnegative, got {}", t.eta));
        }
        for (key, v) in [("training.lambda_kl", t.lambda_kl), ("training.lambda_prox", t.lambda_prox)] {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{key} must be finite and nonnegative, got {v}"));
            }
        }
        let tf = self.evaluation.test_fraction;
        if !(tf > 0.0 && tf < 1.0) {
            return Err(format!("evaluation.test_fraction must be in (0, 1), got {tf}"));
        }
        if self.sweep.alpha_grid.is_empty() {
            return Err("sweep.alpha_grid must not be empty".into());
        }
        for &a in &self.sweep.alpha_grid {
            if !(0.0..=1.0).contains(&a) {
                return Err(format!("sweep.alpha_grid values must be in [0, 1], got {a}"));
            }
        }
        Ok(())
    }
}

/// Read, parse, and validate a config file. All failures are config errors
/// (exit 1) and name the file; parse failures from the TOML layer name the
/// offending key.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let config: ExperimentConfig =
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    config
        .validate()
        .map_err(|msg| CliError::Config(format!("{}: {msg}", path.display())))?;
    Ok(config)
}
