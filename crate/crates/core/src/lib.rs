//! Simulator and library for cross-silo federated estimation of heterogeneous
//! treatment effects (CATE) under a disentangled shared/private architecture.
//!
//! Each client (silo) observes covariates split into a block shared by every
//! silo and a private block of client-specific width. A per-client model
//! encodes the two blocks into diagonal-Gaussian latents, aligns them against
//! a reference encoding of the full covariate vector via KL terms, and feeds
//! them through a pair of branches — a shared branch that the server
//! aggregates every round, and a specific branch kept local — ending in twin
//! potential-outcome heads. Training is round-based: broadcast of the shared
//! component, local SGD epochs under a proximal pull toward the broadcast
//! value, then sample-weighted (or uniform) averaging.
//!
//! The crate is organized to mirror that pipeline:
//!
//! - [`kernel`]: dense f64 MLP forward/backward, losses, diagonal-Gaussian
//!   KL, and a finite-difference gradient checker. Parameters live in plain
//!   buffers so aggregation and proximal distances can read and write them
//!   directly.
//! - [`datagen`]: semi-synthetic multi-domain generator with ground-truth
//!   potential outcomes, plus CSV import/export for real federations.
//! - [`model`]: the per-client disentangled model and its training losses.
//! - [`federation`]: server state, round loop, and the local-only baseline.
//! - [`metrics`]: PEHE / ATE error and numeric convergence diagnostics for
//!   the two built-in bound checks.
//!
//! Everything is deterministic: every random draw comes from a
//! [`rng`]-derived ChaCha stream keyed by (seed, purpose, client, round, …),
//! so results are independent of thread count and scheduling.

pub mod datagen;
pub mod federation;
pub mod kernel;
pub mod metrics;
pub mod model;
pub mod rng;

pub use datagen::{ClientDataset, FeatureSchema, SynthConfig, WeightBank, WeightDist};
pub use federation::{
    AggregationMode, ClientState, FederationConfig, RoundReport, ServerState, TrainingTrace,
};
pub use kernel::{Activation, DiagGaussian, LayerGrad, LayerParams, Matrix};
pub use metrics::{ConvergenceConstants, EffectEstimates, MetricsReport, TheoremReport};
pub use model::{
    DisentangleModel, EncodeMode, LossBreakdown, ModelGradients, ModelHyperparams, ObjectiveSettings,
    OutcomeKind, SampleMode, SharedScope,
};
