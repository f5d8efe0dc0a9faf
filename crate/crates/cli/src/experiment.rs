//! Experiment orchestration: run both arms (federated, local-only) over
//! every seed, score them, and aggregate.
//!
//! Seeds run in parallel, but each seed's work is a pure function of the
//! config and seed, and aggregation walks seeds in listed order — so the
//! report is byte-identical regardless of thread count. Wall-clock time is
//! deliberately kept out of the report for the same reason.

use std::path::Path;

use anyhow::Context;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use fedcate_core::datagen::{
    assign_treatments, export_columns, generate_potential_outcomes, load_tabular_csv, read_sidecar,
    train_test_split, ClientDataset, FeatureSchema,
};
use fedcate_core::federation::{
    build_clients, local_only_baseline, run_training, ClientState, TrainingTrace,
};
use fedcate_core::metrics::{
    ate_error, estimate_constants, metrics_report, theorem1_check, theorem2_check,
    EffectEstimates, TheoremReport,
};
use fedcate_core::model::estimate_cate;

use crate::config::{ExperimentConfig, Mode};
use crate::CliError;

/// One arm's scores for one seed. Effect metrics are `None` when the data
/// carries no ground-truth effects (CSV federations); the bound checks come
/// from the trace alone and are always present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmReport {
    pub client_ids: Vec<usize>,
    pub pehe_per_client: Option<Vec<f64>>,
    pub ate_error_per_client: Option<Vec<f64>>,
    pub pooled_pehe: Option<f64>,
    pub pooled_ate_error: Option<f64>,
    /// Mean total loss across clients at the final evaluation.
    pub final_loss_mean: f64,
    pub theorem1: Vec<TheoremReport>,
    pub theorem2: Vec<TheoremReport>,
}

/// Both arms for one seed, trained on identical splits and initial models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub federated: ArmReport,
    pub local_only: ArmReport,
}

/// Across-seed summary for one arm. Means are over seeds (each seed first
/// averaged over its clients); stds are sample standard deviations, 0 for a
/// single seed. Bound tallies count (seed, client) pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub pehe_mean: Option<f64>,
    pub pehe_std: Option<f64>,
    pub ate_mean: Option<f64>,
    pub ate_std: Option<f64>,
    pub pooled_pehe_mean: Option<f64>,
    pub pooled_pehe_std: Option<f64>,
    pub theorem1_satisfied: usize,
    pub theorem1_total: usize,
    pub theorem2_satisfied: usize,
    pub theorem2_total: usize,
    pub theorem2_not_estimable: usize,
}

/// The headline comparison. `pehe_improvement` is the relative PEHE
/// reduction of federation over local-only training,
/// `(local - federated) / local`, when both are measurable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub federated: MethodAggregate,
    pub local_only: MethodAggregate,
    pub pehe_improvement: Option<f64>,
}

/// The full experiment record written to `report.json`: the resolved config
/// (defaults included), every seed's scores, and the aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedReport>,
    pub aggregate: AggregateReport,
}

/// A finished experiment: the report plus the first seed's federated trace
/// (the only trace kept — traces hold full parameter snapshots).
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub trace: TrainingTrace,
}

/// One `sweep.csv` row: one (alpha, method) cell of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub method: String,
    pub pehe_mean: f64,
    pub pehe_std: f64,
    pub ate_mean: f64,
    pub ate_std: f64,
}

/// A finished sweep: the CSV rows plus each grid point's full report.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub reports: Vec<(f64, ExperimentReport)>,
}

/// Generate one seed's synthetic federation: schema from the config's
/// dimensions, covariates and potential outcomes from the seed, treatments
/// assigned. The `generate` subcommand exports exactly this.
pub fn synthetic_datasets(config: &ExperimentConfig, seed: u64) -> Result<Vec<ClientDataset>, CliError> {
    let schema = FeatureSchema::synthetic(config.data.shared_dim, config.private_dims())
        .with_context(|| format!("seed {seed}: building feature schema"))?;
    let synth = config.synth_config(seed);
    let mut data = generate_potential_outcomes(&schema, &synth)
        .with_context(|| format!("seed {seed}: generating potential outcomes"))?;
    assign_treatments(&mut data, &synth)
        .with_context(|| format!("seed {seed}: assigning treatments"))?;
    Ok(data)
}

fn csv_datasets(config: &ExperimentConfig) -> Result<Vec<ClientDataset>, CliError> {
    let manifest = config
        .data
        .manifest
        .as_deref()
        .ok_or_else(|| CliError::Config("data.manifest is required when mode = \"csv_federation\"".into()))?;
    let manifest_path = Path::new(manifest);
    let sidecar = read_sidecar(manifest_path)
        .with_context(|| format!("reading manifest {manifest}"))?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut datasets = Vec::with_capacity(sidecar.files.len());
    for (k, file) in sidecar.files.iter().enumerate() {
        let columns = export_columns(sidecar.schema.shared_dim, sidecar.schema.private_dims[k]);
        let ds = load_tabular_csv(&dir.join(file), k, &columns)
            .with_context(|| format!("loading client {k} from {file}"))?;
        datasets.push(ds);
    }
    Ok(datasets)
}

/// Score one trained arm against its clients' test sets and trace.
fn arm_report(clients: &[ClientState], trace: &TrainingTrace, eta: f64) -> anyhow::Result<ArmReport> {
    let client_ids: Vec<usize> = trace.final_eval.clients.iter().map(|c| c.client_id).collect();
    let final_eval = &trace.final_eval.clients;
    let final_loss_mean =
        final_eval.iter().map(|c| c.loss.total).sum::<f64>() / final_eval.len() as f64;

    let mut estimates = Vec::with_capacity(clients.len());
    for c in clients {
        let mut tau_hat = Vec::with_capacity(c.test.n());
        for i in 0..c.test.n() {
            let tau = estimate_cate(&c.model, c.test.x_shared(i), c.test.x_private(i))
                .with_context(|| format!("client {}: estimating effects", c.client_id))?;
            tau_hat.push(tau);
        }
        let est = EffectEstimates::new(tau_hat, c.test.true_tau())
            .with_context(|| format!("client {}: pairing effect estimates", c.client_id))?;
        estimates.push(est);
    }

    if estimates.iter().all(|e| e.tau_true.is_some()) {
        let report = metrics_report(&estimates, trace, eta).context("scoring run")?;
        let mut pooled_hat = Vec::new();
        let mut pooled_true = Vec::new();
        for e in &estimates {
            pooled_hat.extend_from_slice(&e.tau_hat);
            pooled_true.extend_from_slice(e.tau_true.as_ref().expect("checked above"));
        }
        let pooled = EffectEstimates::new(pooled_hat, Some(pooled_true)).context("pooling estimates")?;
        Ok(ArmReport {
            client_ids: report.client_ids,
            pehe_per_client: Some(report.pehe_per_client),
            ate_error_per_client: Some(report.ate_error_per_client),
            pooled_pehe: Some(report.pooled_pehe),
            pooled_ate_error: Some(ate_error(&pooled).context("pooled ate_error")?),
            final_loss_mean,
            theorem1: report.theorem1,
            theorem2: report.theorem2,
        })
    } else {
        // No ground-truth effects: report convergence diagnostics only.
        let mut theorem1 = Vec::with_capacity(client_ids.len());
        let mut theorem2 = Vec::with_capacity(client_ids.len());
        for &k in &client_ids {
            let constants = estimate_constants(trace, k, eta)
                .with_context(|| format!("client {k}: estimating bound constants"))?;
            theorem1.push(theorem1_check(trace, k, &constants).with_context(|| format!("client {k}: bound 1"))?);
            theorem2.push(theorem2_check(trace, k, &constants).with_context(|| format!("client {k}: bound 2"))?);
        }
        Ok(ArmReport {
            client_ids,
            pehe_per_client: None,
            ate_error_per_client: None,
            pooled_pehe: None,
            pooled_ate_error: None,
            final_loss_mean,
            theorem1,
            theorem2,
        })
    }
}

/// Run both arms for one seed. Both arms start from identical splits and
/// identically initialized models; only the server differs.
fn run_seed(
    config: &ExperimentConfig,
    csv_data: Option<&[ClientDataset]>,
    seed: u64,
    keep_trace: bool,
) -> Result<(SeedReport, Option<TrainingTrace>), CliError> {
    let datasets = match csv_data {
        Some(shared) => shared.to_vec(),
        None => synthetic_datasets(config, seed)?,
    };
    let mut pairs = Vec::with_capacity(datasets.len());
    for ds in &datasets {
        let split = train_test_split(ds, config.evaluation.test_fraction, seed)
            .with_context(|| format!("seed {seed}: splitting client {}", ds.client_id))?;
        pairs.push(split);
    }

    let fed_config = config.federation_config(seed);
    let eta = fed_config.epoch.eta;

    let mut fed_clients = build_clients(&fed_config, pairs.clone())
        .with_context(|| format!("seed {seed}: building federated clients"))?;
    let (_server, fed_trace) = run_training(&fed_config, &mut fed_clients)
        .with_context(|| format!("seed {seed}: federated training"))?;
    let federated = arm_report(&fed_clients, &fed_trace, eta)
        .with_context(|| format!("seed {seed}: scoring federated arm"))?;

    let mut local_clients = build_clients(&fed_config, pairs)
        .with_context(|| format!("seed {seed}: building local-only clients"))?;
    let local_trace = local_only_baseline(&fed_config, &mut local_clients)
        .with_context(|| format!("seed {seed}: local-only training"))?;
    let local_only = arm_report(&local_clients, &local_trace, eta)
        .with_context(|| format!("seed {seed}: scoring local-only arm"))?;

    let report = SeedReport { seed, federated, local_only };
    Ok((report, keep_trace.then_some(fed_trace)))
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for a single value.
fn sample_std(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

fn mean_std(per_seed: &[Option<f64>]) -> (Option<f64>, Option<f64>) {
    if per_seed.iter().any(|v| v.is_none()) {
        return (None, None);
    }
    let values: Vec<f64> = per_seed.iter().map(|v| v.expect("checked above")).collect();
    (Some(mean(&values)), Some(sample_std(&values)))
}

fn method_aggregate(arms: &[&ArmReport]) -> MethodAggregate {
    let pehe_per_seed: Vec<Option<f64>> = arms
        .iter()
        .map(|a| a.pehe_per_client.as_ref().map(|p| mean(p)))
        .collect();
    let ate_per_seed: Vec<Option<f64>> = arms
        .iter()
        .map(|a| a.ate_error_per_client.as_ref().map(|p| mean(p)))
        .collect();
    let pooled_per_seed: Vec<Option<f64>> = arms.iter().map(|a| a.pooled_pehe).collect();
    let (pehe_mean, pehe_std) = mean_std(&pehe_per_seed);
    let (ate_mean, ate_std) = mean_std(&ate_per_seed);
    let (pooled_pehe_mean, pooled_pehe_std) = mean_std(&pooled_per_seed);

    let mut t1_sat = 0;
    let mut t1_total = 0;
    let mut t2_sat = 0;
    let mut t2_total = 0;
    let mut t2_ne = 0;
    for a in arms {
        t1_total += a.theorem1.len();
        t1_sat += a.theorem1.iter().filter(|t| t.check.satisfied()).count();
        t2_total += a.theorem2.len();
        t2_sat += a.theorem2.iter().filter(|t| t.check.satisfied()).count();
        t2_ne += a
            .theorem2
            .iter()
            .filter(|t| matches!(t.check, fedcate_core::metrics::BoundCheck::NotEstimable { .. }))
            .count();
    }

    MethodAggregate {
        pehe_mean,
        pehe_std,
        ate_mean,
        ate_std,
        pooled_pehe_mean,
        pooled_pehe_std,
        theorem1_satisfied: t1_sat,
        theorem1_total: t1_total,
        theorem2_satisfied: t2_sat,
        theorem2_total: t2_total,
        theorem2_not_estimable: t2_ne,
    }
}

fn aggregate(seeds: &[SeedReport]) -> AggregateReport {
    let fed: Vec<&ArmReport> = seeds.iter().map(|s| &s.federated).collect();
    let local: Vec<&ArmReport> = seeds.iter().map(|s| &s.local_only).collect();
    let federated = method_aggregate(&fed);
    let local_only = method_aggregate(&local);
    let pehe_improvement = match (federated.pehe_mean, local_only.pehe_mean) {
        (Some(f), Some(l)) if l > 0.0 => Some((l - f) / l),
        _ => None,
    };
    AggregateReport { federated, local_only, pehe_improvement }
}

fn run_inner(config: &ExperimentConfig, keep_trace: bool) -> Result<(ExperimentReport, Option<TrainingTrace>), CliError> {
    config.validate().map_err(CliError::Config)?;
    let csv_data = match config.mode {
        Mode::Synthetic => None,
        Mode::CsvFederation => Some(csv_datasets(config)?),
    };

    let mut results: Vec<(SeedReport, Option<TrainingTrace>)> = config
        .seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| run_seed(config, csv_data.as_deref(), seed, keep_trace && i == 0))
        .collect::<Result<_, _>>()?;

    let trace = results.first_mut().and_then(|(_, t)| t.take());
    let seeds: Vec<SeedReport> = results.into_iter().map(|(r, _)| r).collect();
    let aggregate = aggregate(&seeds);
    let report = ExperimentReport { config: config.clone(), seeds, aggregate };
    Ok((report, trace))
}

/// Run the whole experiment the config describes: every seed, both arms,
/// scored and aggregated. Deterministic in the config alone.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput, CliError> {
    let (report, trace) = run_inner(config, true)?;
    let trace = trace.ok_or_else(|| CliError::Config("seeds must list at least one seed".into()))?;
    Ok(ExperimentOutput { report, trace })
}

/// Run the experiment once per grid alpha (synthetic mode only), collecting
/// two summary rows (federated, local_only) per grid point.
pub fn run_alpha_sweep(config: &ExperimentConfig) -> Result<SweepOutput, CliError> {
    if config.mode != Mode::Synthetic {
        return Err(CliError::Config(
            "sweep requires mode = \"synthetic\": the grid overrides data.alpha".into(),
        ));
    }
    config.validate().map_err(CliError::Config)?;
    let reports: Vec<(f64, ExperimentReport)> = config
        .sweep
        .alpha_grid
        .par_iter()
        .map(|&alpha| {
            let mut point = config.clone();
            point.data.alpha = alpha;
            let (report, _) = run_inner(&point, false).map_err(|e| match e {
                CliError::Config(msg) => CliError::Config(format!("alpha {alpha}: {msg}")),
                CliError::Runtime(err) => CliError::Runtime(err.context(format!("alpha {alpha}"))),
            })?;
            Ok((alpha, report))
        })
        .collect::<Result<_, CliError>>()?;

    let mut rows = Vec::with_capacity(reports.len() * 2);
    for (alpha, report) in &reports {
        for (method, agg) in [
            ("federated", &report.aggregate.federated),
            ("local_only", &report.aggregate.local_only),
        ] {
            let missing = || CliError::Config(format!("alpha {alpha}: {method} run produced no effect metrics"));
            rows.push(SweepRow {
                alpha: *alpha,
                method: method.to_string(),
                pehe_mean: agg.pehe_mean.ok_or_else(missing)?,
                pehe_std: agg.pehe_std.ok_or_else(missing)?,
                ate_mean: agg.ate_mean.ok_or_else(missing)?,
                ate_std: agg.ate_std.ok_or_else(missing)?,
            });
        }
    }
    Ok(SweepOutput { rows, reports })
}
