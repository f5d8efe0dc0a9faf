//! Release acceptance suite: each criterion is one test that prints a single
//! `[PASS] criterion N: ...` (or `[FAIL] ...`) line. Run with
//! `cargo test -p fedcate-cli --test acceptance -- --nocapture` to see the
//! lines; runtime budgets are asserted inside the tests themselves.

use std::ops::Range;
use std::sync::OnceLock;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use fedcate_cli::{run_experiment, ExperimentConfig, ExperimentReport};
use fedcate_core::datagen::{
    assign_treatments, eval_structural, generate_potential_outcomes, generate_weights,
    train_test_split, ClientDataset, FeatureSchema, SynthConfig,
};
use fedcate_core::federation::{
    aggregate_shared, broadcast_shared, build_clients, local_only_baseline, run_training,
    AggregationMode, ClientState, FederationConfig, ServerState,
};
use fedcate_core::kernel::{
    finite_diff_gradcheck, flat_len, kl_diag_gaussian, load_flat, DiagGaussian, LayerParams, Matrix,
};
use fedcate_core::metrics::{
    ate_error, pehe, theorem1_rhs, theorem2_rhs, ConvergenceConstants, EffectEstimates,
    TheoremReport,
};
use fedcate_core::model::{
    init_model, local_objective, train_local_epoch, ClientDims, DisentangleModel, EpochSettings,
    ModelHyperparams, ObjectiveSettings, OutcomeKind, SampleMode, SharedScope,
};
use fedcate_core::rng::derive_rng;

/// Print the per-criterion verdict line and panic on failure.
fn report(n: usize, desc: &str, result: Result<(), String>) {
    match result {
        Ok(()) => println!("[PASS] criterion {n}: {desc}"),
        Err(why) => {
            println!("[FAIL] criterion {n}: {desc} — {why}");
            panic!("criterion {n} failed: {why}");
        }
    }
}

fn s(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn bits_equal(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// Criterion 1: finite differences confirm every analytic gradient.
// ---------------------------------------------------------------------------

/// Overwrite every parameter from a vector in `flatten_all` layout.
fn set_all(m: &mut DisentangleModel, flat: &[f64]) {
    let mut off = 0;
    let take = |layers: &mut [LayerParams], flat: &[f64], off: &mut usize| {
        let len = flat_len(layers);
        load_flat(layers, &flat[*off..*off + len]).unwrap();
        *off += len;
    };
    take(&mut m.shared_encoder, flat, &mut off);
    take(&mut m.private_encoder, flat, &mut off);
    take(&mut m.reference_encoder, flat, &mut off);
    take(&mut m.shared_branch, flat, &mut off);
    take(&mut m.specific_branch, flat, &mut off);
    take(std::slice::from_mut(&mut m.head_mu0), flat, &mut off);
    take(std::slice::from_mut(&mut m.head_mu1), flat, &mut off);
    assert_eq!(off, flat.len());
}

/// Index range of the reference encoder inside `flatten_all`.
fn reference_segment(m: &DisentangleModel) -> Range<usize> {
    let start = flat_len(&m.shared_encoder) + flat_len(&m.private_encoder);
    start..start + flat_len(&m.reference_encoder)
}

fn random_tiny_dataset(case: u64, kind: OutcomeKind) -> ClientDataset {
    let mut rng = derive_rng(900, &[case]);
    let flat: Vec<f64> = (0..15).map(|_| rng.sample(StandardNormal)).collect();
    let covariates = Matrix::from_flat(3, 5, flat).unwrap();
    let treatment: Vec<u8> = (0..3).map(|_| rng.gen_range(0..=1)).collect();
    let observed: Vec<f64> = match kind {
        OutcomeKind::Continuous => (0..3).map(|_| rng.sample(StandardNormal)).collect(),
        OutcomeKind::Binary => (0..3).map(|_| f64::from(rng.gen_range(0..=1))).collect(),
    };
    ClientDataset {
        client_id: 0,
        shared_dim: 3,
        private_dim: 2,
        covariates,
        treatment: Some(treatment),
        observed: Some(observed),
        true_y0: None,
        true_y1: None,
    }
}

/// Gradcheck one parameter group at the standard step; on failure, retry at
/// a tenth of it. A wrong analytic gradient keeps its error as the step
/// shrinks (central differences converge to the true derivative), while a
/// ReLU hinge inside the coarse stencil stops being straddled and the error
/// collapses, so the retry only ever absolves discretization artifacts.
fn checked_group<F: FnMut(&[f64]) -> f64>(
    mut loss_fn: F,
    params: &mut [f64],
    analytic: &[f64],
    label: &str,
    case: u64,
) -> Result<(), String> {
    let coarse = finite_diff_gradcheck(&mut loss_fn, params, analytic, 1e-5).map_err(s)?;
    if coarse.max_rel_err < 1e-4 {
        return Ok(());
    }
    let fine = finite_diff_gradcheck(&mut loss_fn, params, analytic, 1e-6).map_err(s)?;
    if fine.max_rel_err < 1e-4 {
        return Ok(());
    }
    Err(format!(
        "case {case}: {label} gradients off by {} (step 1e-5) and {} (step 1e-6) at index {}",
        coarse.max_rel_err, fine.max_rel_err, fine.worst_index
    ))
}

#[test]
fn criterion_1_gradient_oracle() {
    let run = || -> Result<(), String> {
        let t0 = Instant::now();
        for case in 0..20u64 {
            let kind = if case % 2 == 0 { OutcomeKind::Continuous } else { OutcomeKind::Binary };
            let mode = if case % 4 < 2 {
                SampleMode::Mean
            } else {
                SampleMode::Sample { seed: 1000 + case }
            };
            let hyper = ModelHyperparams {
                z_dim: 2,
                branch_widths: vec![4, 4],
                encoder_width: 4,
                outcome_kind: kind,
            };
            let model = init_model(ClientDims { shared: 3, private: 2 }, &hyper, 100 + case)
                .map_err(s)?;
            let data = random_tiny_dataset(case, kind);
            let mut anchor = model.shared_flat(SharedScope::BranchOnly);
            for (i, a) in anchor.iter_mut().enumerate() {
                *a += 0.05 * (i as f64 % 3.0 - 1.0);
            }
            let settings = ObjectiveSettings { mode, ..ObjectiveSettings::default() };
            let (_, grads) =
                local_objective(&model, &data, &[0, 1, 2], Some(&anchor), &settings).map_err(s)?;
            let full = model.flatten_all();
            let gfull = grads.flatten_all();
            let seg = reference_segment(&model);

            // Group A: everything but the reference encoder, against the
            // total objective.
            let mut params_a: Vec<f64> = full
                .iter()
                .enumerate()
                .filter(|(i, _)| !seg.contains(i))
                .map(|(_, v)| *v)
                .collect();
            let analytic_a: Vec<f64> = gfull
                .iter()
                .enumerate()
                .filter(|(i, _)| !seg.contains(i))
                .map(|(_, v)| *v)
                .collect();
            let rebuild = |p: &[f64]| -> Vec<f64> {
                let mut whole = Vec::with_capacity(full.len());
                whole.extend_from_slice(&p[..seg.start]);
                whole.extend_from_slice(&full[seg.clone()]);
                whole.extend_from_slice(&p[seg.start..]);
                whole
            };
            checked_group(
                |p| {
                    let mut m = model.clone();
                    set_all(&mut m, &rebuild(p));
                    let (b, _) =
                        local_objective(&m, &data, &[0, 1, 2], Some(&anchor), &settings).unwrap();
                    b.total
                },
                &mut params_a,
                &analytic_a,
                "non-reference",
                case,
            )?;

            // Group B: the reference encoder, against its auxiliary fit.
            let mut params_b: Vec<f64> = full[seg.clone()].to_vec();
            let analytic_b: Vec<f64> = gfull[seg.clone()].to_vec();
            checked_group(
                |p| {
                    let mut whole = full.clone();
                    whole[seg.clone()].copy_from_slice(p);
                    let mut m = model.clone();
                    set_all(&mut m, &whole);
                    let (b, _) =
                        local_objective(&m, &data, &[0, 1, 2], Some(&anchor), &settings).unwrap();
                    b.reference_fit
                },
                &mut params_b,
                &analytic_b,
                "reference-encoder",
                case,
            )?;
        }
        let secs = t0.elapsed().as_secs_f64();
        if secs >= 30.0 {
            return Err(format!("took {secs:.1}s, budget 30s"));
        }
        Ok(())
    };
    report(
        1,
        "finite-difference check of local_objective on 20 random tiny models, max rel err < 1e-4, < 30s",
        run(),
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: closed-form KL against Monte Carlo.
// ---------------------------------------------------------------------------

/// Monte-Carlo KL(q||p): average of log q(z) - log p(z) over z ~ q. The
/// 2*pi normalizers cancel in the difference.
fn monte_carlo_kl(q: &DiagGaussian, p: &DiagGaussian, samples: usize, case: u64) -> f64 {
    let mut rng = derive_rng(777, &[case]);
    let dim = q.dim();
    let sd_q: Vec<f64> = q.log_var.iter().map(|lv| (0.5 * lv).exp()).collect();
    let var_q: Vec<f64> = q.log_var.iter().map(|lv| lv.exp()).collect();
    let var_p: Vec<f64> = p.log_var.iter().map(|lv| lv.exp()).collect();
    let mut acc = 0.0;
    for _ in 0..samples {
        let mut term = 0.0;
        for i in 0..dim {
            let z: f64 = q.mean[i] + sd_q[i] * rng.sample::<f64, _>(StandardNormal);
            let dq = z - q.mean[i];
            let dp = z - p.mean[i];
            term += 0.5
                * (p.log_var[i] - q.log_var[i] + dp * dp / var_p[i] - dq * dq / var_q[i]);
        }
        acc += term;
    }
    acc / samples as f64
}

#[test]
fn criterion_2_kl_oracle() {
    let run = || -> Result<(), String> {
        let t0 = Instant::now();
        for case in 0..10u64 {
            let mut rng = derive_rng(778, &[case]);
            let mean_q: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lv_q: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mean_p: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let lv_p: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let q = DiagGaussian::new(mean_q, lv_q).map_err(s)?;
            let p = DiagGaussian::new(mean_p, lv_p).map_err(s)?;
            let exact = kl_diag_gaussian(&q, &p).map_err(s)?;
            let mc = monte_carlo_kl(&q, &p, 1_000_000, case);
            let gap = (exact - mc).abs();
            if gap >= 1e-2 {
                return Err(format!(
                    "case {case}: closed form {exact:.6} vs Monte Carlo {mc:.6}, gap {gap:.2e}"
                ));
            }
        }
        let secs = t0.elapsed().as_secs_f64();
        if secs >= 30.0 {
            return Err(format!("took {secs:.1}s, budget 30s"));
        }
        Ok(())
    };
    report(
        2,
        "closed-form KL within 1e-2 of a 1e6-sample Monte-Carlo estimate on 10 random 4-dim cases, < 30s",
        run(),
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: generator fidelity.
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_generator_fidelity() {
    let run = || -> Result<(), String> {
        let schema = FeatureSchema::synthetic(10, vec![5, 7, 10, 12, 15]).map_err(s)?;
        let config = SynthConfig {
            seed: 42,
            samples_per_client: 1000,
            alpha: 0.5,
            beta: 0.5,
            noise_var: 0.01,
            ..SynthConfig::default()
        };
        let mut datasets = generate_potential_outcomes(&schema, &config).map_err(s)?;
        assign_treatments(&mut datasets, &config).map_err(s)?;

        // Observed outcome is exactly the treatment-selected potential
        // outcome, bitwise, on every one of the 5000 rows.
        for ds in &datasets {
            let w = ds.treatment.as_ref().ok_or("treatment missing")?;
            let obs = ds.observed.as_ref().ok_or("observed missing")?;
            let y0 = ds.true_y0.as_ref().ok_or("true_y0 missing")?;
            let y1 = ds.true_y1.as_ref().ok_or("true_y1 missing")?;
            for i in 0..ds.n() {
                let want = if w[i] == 1 { y1[i] } else { y0[i] };
                if obs[i].to_bits() != want.to_bits() {
                    return Err(format!(
                        "client {} row {i}: observed {} != selected potential outcome {}",
                        ds.client_id, obs[i], want
                    ));
                }
            }
        }

        // Regenerating with the noise variance set to zero reuses the same
        // covariate and noise streams, so the paired difference of true_y0
        // isolates the additive noise; its sample variance must sit in
        // [0.008, 0.012] around the configured 0.01.
        let noiseless_config = SynthConfig { noise_var: 0.0, ..config };
        let clean = generate_potential_outcomes(&schema, &noiseless_config).map_err(s)?;
        let mut residuals = Vec::with_capacity(5000);
        for (noisy, base) in datasets.iter().zip(&clean) {
            let y0n = noisy.true_y0.as_ref().unwrap();
            let y0c = base.true_y0.as_ref().unwrap();
            residuals.extend(y0n.iter().zip(y0c).map(|(a, b)| a - b));
        }
        let n = residuals.len() as f64;
        let mean = residuals.iter().sum::<f64>() / n;
        let var =
            residuals.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1.0);
        if !(0.008..=0.012).contains(&var) {
            return Err(format!(
                "untreated-outcome residual variance {var:.5} outside [0.008, 0.012]"
            ));
        }

        // With alpha = 1 the structural functions depend only on the shared
        // block: perturbing the private block never changes the value.
        let (bank_y0, bank_tau) = generate_weights(&schema, &config).map_err(s)?;
        let private_dims = [5usize, 7, 10, 12, 15];
        for (k, &d_p) in private_dims.iter().enumerate() {
            let mut rng = derive_rng(4242, &[k as u64]);
            for trial in 0..10 {
                let x_s: Vec<f64> = (0..10).map(|_| rng.sample(StandardNormal)).collect();
                let x_p: Vec<f64> = (0..d_p).map(|_| rng.sample(StandardNormal)).collect();
                let x_p2: Vec<f64> = (0..d_p).map(|_| rng.sample(StandardNormal)).collect();
                for (name, bank) in [("y0", &bank_y0), ("tau", &bank_tau)] {
                    let v1 = eval_structural(bank, k, &x_s, &x_p, 1.0, 0.5).map_err(s)?;
                    let v2 = eval_structural(bank, k, &x_s, &x_p2, 1.0, 0.5).map_err(s)?;
                    if v1.to_bits() != v2.to_bits() {
                        return Err(format!(
                            "client {k} trial {trial}: alpha=1 {name} structural value moved \
                             under a private-block perturbation ({v1} vs {v2})"
                        ));
                    }
                }
            }
        }
        Ok(())
    };
    report(
        3,
        "synthetic generator: observed == selected potential outcome exactly, noise variance in [0.008, 0.012], alpha=1 private invariance exact",
        run(),
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: degenerate equivalences.
// ---------------------------------------------------------------------------

fn small_hyper() -> ModelHyperparams {
    ModelHyperparams {
        z_dim: 2,
        branch_widths: vec![4, 4],
        encoder_width: 4,
        outcome_kind: OutcomeKind::Continuous,
    }
}

fn synthetic_pairs(
    shared_dim: usize,
    private_dims: Vec<usize>,
    samples: usize,
    seed: u64,
) -> Result<Vec<(ClientDataset, ClientDataset)>, String> {
    let schema = FeatureSchema::synthetic(shared_dim, private_dims).map_err(s)?;
    let config = SynthConfig {
        seed,
        samples_per_client: samples,
        noise_var: 0.05,
        ..SynthConfig::default()
    };
    let mut datasets = generate_potential_outcomes(&schema, &config).map_err(s)?;
    assign_treatments(&mut datasets, &config).map_err(s)?;
    datasets
        .iter()
        .map(|ds| train_test_split(ds, 0.2, seed).map_err(s))
        .collect()
}

#[test]
fn criterion_4_degenerate_equivalences() {
    let run = || -> Result<(), String> {
        // (a) A single client with the proximal weight off: the federated
        // loop and the local-only baseline walk the same SGD path, so the
        // final parameters agree bitwise.
        let pairs = synthetic_pairs(4, vec![3], 60, 7)?;
        let config = FederationConfig {
            seed: 7,
            rounds: 4,
            local_epochs: 2,
            hyper: small_hyper(),
            objective: ObjectiveSettings { lambda_prox: 0.0, ..ObjectiveSettings::default() },
            epoch: EpochSettings { eta: 0.05, batch_size: 16 },
            aggregation: AggregationMode::SampleWeighted,
        };
        let mut federated = build_clients(&config, pairs.clone()).map_err(s)?;
        let mut local = build_clients(&config, pairs).map_err(s)?;
        run_training(&config, &mut federated).map_err(s)?;
        local_only_baseline(&config, &mut local).map_err(s)?;
        let a = federated[0].model.flatten_all();
        let b = local[0].model.flatten_all();
        if !bits_equal(&a, &b) {
            return Err(
                "K=1, lambda_prox=0: run_training and local_only_baseline parameters differ"
                    .into(),
            );
        }

        // (b) Broadcast followed by aggregation, with no training in
        // between, returns the broadcast value bitwise.
        let pairs = synthetic_pairs(4, vec![2, 3, 5], 60, 8)?;
        let mut clients: Vec<ClientState> = build_clients(&config, pairs).map_err(s)?;
        let scope = config.objective.scope;
        // Knock one client off the common initialization so the first
        // aggregate is a genuine weighted mean of unequal inputs.
        let mut perturbed = clients[0].model.shared_flat(scope);
        for (i, v) in perturbed.iter_mut().enumerate() {
            if i % 7 == 0 {
                *v += 0.25;
            }
        }
        clients[0].model.load_shared_flat(scope, &perturbed).map_err(s)?;

        let params: Vec<Vec<f64>> =
            clients.iter().map(|c| c.model.shared_flat(scope)).collect();
        let counts: Vec<usize> = clients.iter().map(|c| c.n_train()).collect();
        let omega_c =
            aggregate_shared(&params, &counts, AggregationMode::SampleWeighted).map_err(s)?;
        let server = ServerState {
            omega_c: omega_c.clone(),
            round: 0,
            aggregation_mode: AggregationMode::SampleWeighted,
        };
        broadcast_shared(&server, &mut clients, scope).map_err(s)?;
        let params_after: Vec<Vec<f64>> =
            clients.iter().map(|c| c.model.shared_flat(scope)).collect();
        let omega_next =
            aggregate_shared(&params_after, &counts, AggregationMode::SampleWeighted).map_err(s)?;
        if !bits_equal(&omega_next, &omega_c) {
            return Err("broadcast-then-aggregate moved the server parameters".into());
        }
        Ok(())
    };
    report(
        4,
        "K=1 without proximal pull matches the local baseline bit-exactly; broadcast-then-aggregate is a bit-exact fixed point",
        run(),
    );
}

// ---------------------------------------------------------------------------
// Criteria 5 and 7 share one trained 5-seed suite.
// ---------------------------------------------------------------------------

/// The benchmark suite: K=5 silos, d_s=10, private widths 5..15, alpha =
/// beta = 0.5, n=1000/client, T=50 rounds. High outcome noise, a small
/// train split, and whole shared-pathway aggregation put the clients in the
/// variance-limited regime where pooling the shared structure pays off.
const SUITE_TOML: &str = r#"
mode = "synthetic"
seeds = [101, 102, 103, 104, 105]

[data]
clients = 5
samples_per_client = 1000
shared_dim = 10
private_dims = [5, 7, 10, 12, 15]
alpha = 0.5
beta = 0.5
noise_var = 16.0
standardize_tau = true

[training]
rounds = 50
eta = 0.001
batch_size = 16
local_epochs = 5
lambda_prox = 0.01
scope = "branch_and_encoder"

[evaluation]
test_fraction = 0.8
"#;

static SUITE: OnceLock<(ExperimentReport, f64)> = OnceLock::new();

fn suite() -> &'static (ExperimentReport, f64) {
    SUITE.get_or_init(|| {
        let config: ExperimentConfig =
            toml::from_str(SUITE_TOML).expect("benchmark suite config parses");
        let t0 = Instant::now();
        let output = run_experiment(&config).expect("benchmark suite trains");
        (output.report, t0.elapsed().as_secs_f64())
    })
}

#[test]
fn criterion_5_sharing_benefit() {
    let run = || -> Result<(), String> {
        let (report, secs) = suite();
        let fed = report
            .aggregate
            .federated
            .pehe_mean
            .ok_or("federated PEHE mean missing")?;
        let local = report
            .aggregate
            .local_only
            .pehe_mean
            .ok_or("local-only PEHE mean missing")?;
        let improvement = report
            .aggregate
            .pehe_improvement
            .ok_or("improvement ratio missing")?;
        if improvement < 0.10 {
            return Err(format!(
                "federated PEHE {fed:.4} vs local-only {local:.4}: improvement {:.1}% < 10%",
                improvement * 100.0
            ));
        }
        if *secs >= 300.0 {
            return Err(format!("suite took {secs:.0}s, budget 300s"));
        }
        Ok(())
    };
    report(
        5,
        "5-seed semi-synthetic suite (K=5, T=50): mean federated PEHE at least 10% below the local-only mean, < 5 min",
        run(),
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: the proximal term alone contracts clients onto the broadcast.
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_proximal_pull() {
    let run = || -> Result<(), String> {
        let t0 = Instant::now();
        let pairs = synthetic_pairs(3, vec![2, 2, 2], 50, 11)?;
        let scope = SharedScope::BranchOnly;
        let config = FederationConfig {
            seed: 11,
            rounds: 1,
            local_epochs: 1,
            hyper: small_hyper(),
            objective: ObjectiveSettings { scope, ..ObjectiveSettings::default() },
            epoch: EpochSettings { eta: 1e-4, batch_size: 8 },
            aggregation: AggregationMode::SampleWeighted,
        };
        let mut clients = build_clients(&config, pairs).map_err(s)?;
        for c in &clients {
            if c.n_train() != 40 {
                return Err(format!("expected 40 train rows per client, got {}", c.n_train()));
            }
        }

        // Broadcast the aggregate, then let one ordinary epoch at a tiny
        // step size drift each client a little way off it.
        let params: Vec<Vec<f64>> =
            clients.iter().map(|c| c.model.shared_flat(scope)).collect();
        let counts: Vec<usize> = clients.iter().map(|c| c.n_train()).collect();
        let omega_c =
            aggregate_shared(&params, &counts, AggregationMode::SampleWeighted).map_err(s)?;
        let server = ServerState {
            omega_c: omega_c.clone(),
            round: 0,
            aggregation_mode: AggregationMode::SampleWeighted,
        };
        broadcast_shared(&server, &mut clients, scope).map_err(s)?;
        let drift_objective =
            ObjectiveSettings { lambda_prox: 0.0, scope, ..ObjectiveSettings::default() };
        let drift_epoch = EpochSettings { eta: 1e-4, batch_size: 8 };
        for c in clients.iter_mut() {
            let mut rng = derive_rng(11, &[90, c.client_id as u64]);
            train_local_epoch(&mut c.model, &c.train, None, &drift_objective, &drift_epoch, &mut rng)
                .map_err(s)?;
        }
        for c in &clients {
            let d0 = l2_distance(&c.model.shared_flat(scope), &omega_c);
            if d0 <= 1e-8 {
                return Err(format!("client {} never drifted (d0 = {d0:.2e})", c.client_id));
            }
        }

        // With outcome and KL weights zeroed, each SGD step multiplies the
        // offset from the anchor by (1 - 2 * eta * lambda_prox) = 0.98;
        // 100 epochs of 5 batches are exactly 500 steps.
        let prox_objective = ObjectiveSettings {
            outcome_weight: 0.0,
            lambda_kl: 0.0,
            lambda_prox: 0.1,
            scope,
            ..ObjectiveSettings::default()
        };
        let prox_epoch = EpochSettings { eta: 0.1, batch_size: 8 };
        for epoch in 0..100u64 {
            for c in clients.iter_mut() {
                let mut rng = derive_rng(11, &[91, c.client_id as u64, epoch]);
                train_local_epoch(
                    &mut c.model,
                    &c.train,
                    Some(&omega_c),
                    &prox_objective,
                    &prox_epoch,
                    &mut rng,
                )
                .map_err(s)?;
            }
        }
        for c in &clients {
            let d = l2_distance(&c.model.shared_flat(scope), &omega_c);
            if d >= 1e-6 {
                return Err(format!(
                    "client {} still {d:.2e} from the broadcast after 500 steps",
                    c.client_id
                ));
            }
        }
        let secs = t0.elapsed().as_secs_f64();
        if secs >= 10.0 {
            return Err(format!("took {secs:.1}s, budget 10s"));
        }
        Ok(())
    };
    report(
        6,
        "with outcome and KL weights zeroed and lambda_prox=0.1, every client lands within 1e-6 of the broadcast in 500 SGD steps, < 10s",
        run(),
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: convergence diagnostics on the trained suite, plus the exact
// scaling of the bound formulas in the round count.
// ---------------------------------------------------------------------------

fn check_arm(seed: u64, arm_name: &str, t1: &[TheoremReport], t2: &[TheoremReport]) -> Result<(), String> {
    for t in t1 {
        if !t.check.satisfied() {
            return Err(format!(
                "seed {seed} {arm_name} client {}: first bound not satisfied",
                t.client_id
            ));
        }
    }
    for t in t2 {
        if !t.check.satisfied() {
            return Err(format!(
                "seed {seed} {arm_name} client {}: second bound not satisfied",
                t.client_id
            ));
        }
    }
    Ok(())
}

#[test]
fn criterion_7_convergence_diagnostics() {
    let run = || -> Result<(), String> {
        let (report, _) = suite();
        for sr in &report.seeds {
            check_arm(sr.seed, "federated", &sr.federated.theorem1, &sr.federated.theorem2)?;
            check_arm(sr.seed, "local_only", &sr.local_only.theorem1, &sr.local_only.theorem2)?;
        }

        // Both bounds scale as 1/sqrt(T) at fixed constants. Doubling T is
        // a factor 1/sqrt(2) (irrational, so checked to 1 ulp-scale relative
        // error); quadrupling T halves the value, which IEEE arithmetic
        // reproduces bit-exactly because every intermediate differs only by
        // powers of two.
        let constants = ConvergenceConstants {
            a: 0.7,
            b: 1.3,
            m: 2.5,
            beta_smooth: 4.0,
            mu_pl: Some(0.3),
            eta: 0.01,
        };
        for t in [1usize, 3, 10, 50, 777] {
            let r1 = theorem1_rhs(&constants, t);
            let r2 = theorem1_rhs(&constants, 2 * t);
            let r4 = theorem1_rhs(&constants, 4 * t);
            let rel = (r2 * std::f64::consts::SQRT_2 - r1).abs() / r1;
            if rel > 1e-15 {
                return Err(format!("first bound rhs at 2T off by relative {rel:.2e} at T={t}"));
            }
            if r4.to_bits() != (r1 / 2.0).to_bits() {
                return Err(format!("first bound rhs at 4T is not exactly half at T={t}"));
            }
            let q1 = theorem2_rhs(&constants, t).ok_or("second bound rhs missing")?;
            let q2 = theorem2_rhs(&constants, 2 * t).ok_or("second bound rhs missing")?;
            let q4 = theorem2_rhs(&constants, 4 * t).ok_or("second bound rhs missing")?;
            let rel = (q2 * std::f64::consts::SQRT_2 - q1).abs() / q1;
            if rel > 1e-15 {
                return Err(format!("second bound rhs at 2T off by relative {rel:.2e} at T={t}"));
            }
            if q4.to_bits() != (q1 / 2.0).to_bits() {
                return Err(format!("second bound rhs at 4T is not exactly half at T={t}"));
            }
        }
        Ok(())
    };
    report(
        7,
        "both bound checks satisfied with run-estimated constants on the 5-seed suite; rhs scales exactly as 1/sqrt(T)",
        run(),
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: thread count never changes results.
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_determinism_across_jobs() {
    let run = || -> Result<(), String> {
        let t0 = Instant::now();
        let dir = tempfile::tempdir().map_err(s)?;
        let config_path = dir.path().join("experiment.toml");
        std::fs::write(
            &config_path,
            r#"
mode = "synthetic"
seeds = [5, 6]

[data]
clients = 3
samples_per_client = 200
shared_dim = 6
private_dims = [3, 4, 5]
noise_var = 1.0

[model]
z_dim = 4
branch_widths = [8, 8]
encoder_width = 8

[training]
rounds = 8
eta = 0.01
"#,
        )
        .map_err(s)?;

        // Both runs use the same --out so their inputs are byte-identical
        // (the report echoes the resolved config, out_dir included); the
        // first run's files are copied aside before the second overwrites
        // them.
        let bin = env!("CARGO_BIN_EXE_fedcate");
        let out = dir.path().join("out");
        let kept = dir.path().join("first");
        std::fs::create_dir(&kept).map_err(s)?;
        let files = ["report.json", "trace.csv", "metrics.csv"];
        for jobs in ["1", "8"] {
            let status = std::process::Command::new(bin)
                .args(["train", "--config"])
                .arg(&config_path)
                .arg("--out")
                .arg(&out)
                .args(["--jobs", jobs])
                .output()
                .map_err(s)?;
            if !status.status.success() {
                return Err(format!(
                    "train --jobs {jobs} failed: {}",
                    String::from_utf8_lossy(&status.stderr)
                ));
            }
            if jobs == "1" {
                for file in files {
                    std::fs::copy(out.join(file), kept.join(file)).map_err(s)?;
                }
            }
        }
        for file in files {
            let a = std::fs::read(kept.join(file)).map_err(s)?;
            let b = std::fs::read(out.join(file)).map_err(s)?;
            if a != b {
                return Err(format!("{file} differs between --jobs 1 and --jobs 8"));
            }
        }
        let secs = t0.elapsed().as_secs_f64();
        if secs >= 120.0 {
            return Err(format!("took {secs:.1}s, budget 120s"));
        }
        Ok(())
    };
    report(
        8,
        "identical config produces byte-identical report.json under --jobs 1 and --jobs 8, < 2 min",
        run(),
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: metric identities.
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_metric_identities() {
    let run = || -> Result<(), String> {
        // Shifting every estimate by a constant c gives PEHE |c|.
        for case in 0..10u64 {
            let mut rng = derive_rng(500, &[case]);
            let truth: Vec<f64> = (0..100).map(|_| rng.sample(StandardNormal)).collect();
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let c = sign * rng.gen_range(0.5..3.0);
            let hat: Vec<f64> = truth.iter().map(|t| t + c).collect();
            let est = EffectEstimates::new(hat, Some(truth)).map_err(s)?;
            let p = pehe(&est).map_err(s)?;
            if (p - c.abs()).abs() > 1e-12 {
                return Err(format!(
                    "case {case}: constant offset {c} gave PEHE {p}, expected {}",
                    c.abs()
                ));
            }
        }

        // ATE error never exceeds PEHE (mean inside the square vs outside).
        for case in 0..100u64 {
            let mut rng = derive_rng(501, &[case]);
            let scale = rng.gen_range(0.1..5.0);
            let truth: Vec<f64> =
                (0..37).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
            let hat: Vec<f64> =
                (0..37).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
            let est = EffectEstimates::new(hat, Some(truth)).map_err(s)?;
            let a = ate_error(&est).map_err(s)?;
            let p = pehe(&est).map_err(s)?;
            if a > p + 1e-12 {
                return Err(format!("case {case}: ate_error {a} exceeds pehe {p}"));
            }
        }

        // Hand value: estimates (1, 2) against (3, 2) give sqrt(2).
        let est = EffectEstimates::new(vec![1.0, 2.0], Some(vec![3.0, 2.0])).map_err(s)?;
        let p = pehe(&est).map_err(s)?;
        if (p - std::f64::consts::SQRT_2).abs() > 1e-12 {
            return Err(format!("hand case gave {p}, expected sqrt(2)"));
        }
        Ok(())
    };
    report(
        9,
        "PEHE constant-offset identity to 1e-12, ate_error <= pehe on 100 random vectors, hand case (1,2)/(3,2) -> sqrt(2)",
        run(),
    );
}
