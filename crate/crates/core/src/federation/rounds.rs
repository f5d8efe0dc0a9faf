use rayon::prelude::*;

use super::aggregate::{aggregate_shared, broadcast_shared, checksum_f64s};
use super::state::{ClientState, FederationConfig, ServerState};
use super::trace::{ClientRoundRecord, RoundReport, TrainingTrace};
use super::FederationError;
use crate::datagen::ClientDataset;
use crate::model::{init_model, local_objective, train_local_epoch, ClientDims};
use crate::rng::{derive_rng, purpose};

/// Measure one client at its current parameters: full-batch loss and
/// gradients on the training rows. Called right after a broadcast, so for
/// federated runs the proximal term it reports is exactly zero.
fn evaluate_client(
    client: &ClientState,
    anchor: Option<&[f64]>,
    config: &FederationConfig,
) -> Result<ClientRoundRecord, FederationError> {
    let indices: Vec<usize> = (0..client.train.n()).collect();
    let (loss, grads) = local_objective(&client.model, &client.train, &indices, anchor, &config.objective)?;
    Ok(ClientRoundRecord {
        client_id: client.client_id,
        n_train: client.train.n(),
        loss,
        grad_shared_sq: grads.shared_sq_norm(config.objective.scope),
        grad_private_sq: grads.private_sq_norm(config.objective.scope),
        params: client.model.flatten_all(),
        grads: grads.flatten_all(),
    })
}

/// One client's share of a round: measure, then run the local epochs. The
/// shuffle stream is keyed by (seed, client, round, epoch), so the result
/// does not depend on which worker thread runs it or when.
fn client_round_work(
    client: &mut ClientState,
    anchor: Option<&[f64]>,
    config: &FederationConfig,
    round: u64,
) -> Result<ClientRoundRecord, FederationError> {
    let record = evaluate_client(client, anchor, config)?;
    for epoch in 0..config.local_epochs {
        let mut rng = derive_rng(
            client.seed,
            &[purpose::SHUFFLE, client.client_id as u64, round, epoch as u64],
        );
        train_local_epoch(
            &mut client.model,
            &client.train,
            anchor,
            &config.objective,
            &config.epoch,
            &mut rng,
        )?;
    }
    Ok(record)
}

/// One federated round: broadcast `omega_c`, let every client train locally
/// against it, aggregate the drifted shared branches, advance the round
/// counter. The report carries each client's post-broadcast measurements and
/// a checksum of the new `omega_c`.
pub fn run_round(
    server: &mut ServerState,
    clients: &mut [ClientState],
    config: &FederationConfig,
) -> Result<RoundReport, FederationError> {
    if clients.is_empty() {
        return Err(FederationError::NoClients);
    }
    let scope = config.objective.scope;
    broadcast_shared(server, clients, scope)?;
    let round = server.round;
    let anchor = server.omega_c.clone();
    let records: Vec<ClientRoundRecord> = clients
        .par_iter_mut()
        .map(|c| client_round_work(c, Some(&anchor), config, round))
        .collect::<Result<_, _>>()?;
    let gathered: Vec<Vec<f64>> = clients.iter().map(|c| c.model.shared_flat(scope)).collect();
    let counts: Vec<usize> = clients.iter().map(ClientState::n_train).collect();
    server.omega_c = aggregate_shared(&gathered, &counts, server.aggregation_mode)?;
    server.round += 1;
    Ok(RoundReport { round, clients: records, omega_checksum: Some(checksum_f64s(&server.omega_c)) })
}

fn check_clients(clients: &[ClientState]) -> Result<(), FederationError> {
    if clients.is_empty() {
        return Err(FederationError::NoClients);
    }
    for w in clients.windows(2) {
        if w[1].client_id <= w[0].client_id {
            return Err(FederationError::InvalidConfig(format!(
                "client ids must be strictly increasing, got {} then {}",
                w[0].client_id, w[1].client_id
            )));
        }
    }
    for c in clients {
        if c.train.n() == 0 {
            return Err(FederationError::InvalidConfig(format!("client {} has no training rows", c.client_id)));
        }
        if c.model.dims.shared != c.train.shared_dim || c.model.dims.private != c.train.private_dim {
            return Err(FederationError::InvalidConfig(format!(
                "client {}: model dims ({}, {}) do not match data dims ({}, {})",
                c.client_id, c.model.dims.shared, c.model.dims.private, c.train.shared_dim, c.train.private_dim
            )));
        }
    }
    Ok(())
}

/// Run `config.rounds` federated rounds, then broadcast once more and take a
/// closing measurement, so the trace ends at the state the clients are left
/// in. Clients must arrive in strictly increasing id order; the trace has
/// exactly `config.rounds` round reports.
pub fn run_training(
    config: &FederationConfig,
    clients: &mut [ClientState],
) -> Result<(ServerState, TrainingTrace), FederationError> {
    config.validate()?;
    check_clients(clients)?;
    let scope = config.objective.scope;
    let width = clients[0].model.shared_flat_len(scope);
    for c in clients.iter() {
        let got = c.model.shared_flat_len(scope);
        if got != width {
            return Err(FederationError::len(format!("client {} shared width", c.client_id), width, got));
        }
    }
    let mut server = ServerState {
        omega_c: clients[0].model.shared_flat(scope),
        round: 0,
        aggregation_mode: config.aggregation,
    };
    let mut rounds = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        rounds.push(run_round(&mut server, clients, config)?);
    }
    broadcast_shared(&server, clients, scope)?;
    let anchor = server.omega_c.clone();
    let records: Vec<ClientRoundRecord> = clients
        .par_iter()
        .map(|c| evaluate_client(c, Some(&anchor), config))
        .collect::<Result<_, _>>()?;
    let final_eval = RoundReport {
        round: server.round,
        clients: records,
        omega_checksum: Some(checksum_f64s(&server.omega_c)),
    };
    Ok((server, TrainingTrace { rounds, final_eval }))
}

/// The no-sharing arm: the same schedule, measurements, and shuffle streams
/// as [`run_training`], but no server, no broadcast, no aggregation, and no
/// proximal anchor. Each client trains alone on its own data.
pub fn local_only_baseline(
    config: &FederationConfig,
    clients: &mut [ClientState],
) -> Result<TrainingTrace, FederationError> {
    config.validate()?;
    check_clients(clients)?;
    let mut rounds = Vec::with_capacity(config.rounds);
    for round in 0..config.rounds as u64 {
        let records: Vec<ClientRoundRecord> = clients
            .par_iter_mut()
            .map(|c| client_round_work(c, None, config, round))
            .collect::<Result<_, _>>()?;
        rounds.push(RoundReport { round, clients: records, omega_checksum: None });
    }
    let records: Vec<ClientRoundRecord> = clients
        .par_iter()
        .map(|c| evaluate_client(c, None, config))
        .collect::<Result<_, _>>()?;
    let final_eval = RoundReport { round: config.rounds as u64, clients: records, omega_checksum: None };
    Ok(TrainingTrace { rounds, final_eval })
}

/// Pair up train/test splits and give every client a model initialized from
/// the same seed, so all shared components start bit-identical across the
/// federation (private components differ only where their shapes do).
pub fn build_clients(
    config: &FederationConfig,
    pairs: Vec<(ClientDataset, ClientDataset)>,
) -> Result<Vec<ClientState>, FederationError> {
    config.validate()?;
    if pairs.is_empty() {
        return Err(FederationError::NoClients);
    }
    let mut clients = Vec::with_capacity(pairs.len());
    for (train, test) in pairs {
        for (name, ds) in [("train", &train), ("test", &test)] {
            ds.validate().map_err(|e| {
                FederationError::InvalidConfig(format!("client {} {name} split: {e}", ds.client_id))
            })?;
        }
        if train.treatment.is_none() || train.observed.is_none() {
            return Err(FederationError::InvalidConfig(format!(
                "client {}: training rows need treatment assignments and observed outcomes",
                train.client_id
            )));
        }
        if test.client_id != train.client_id
            || test.shared_dim != train.shared_dim
            || test.private_dim != train.private_dim
        {
            return Err(FederationError::InvalidConfig(format!(
                "client {}: test split does not match its train split",
                train.client_id
            )));
        }
        let dims = ClientDims { shared: train.shared_dim, private: train.private_dim };
        let model = init_model(dims, &config.hyper, config.seed)?;
        clients.push(ClientState { client_id: train.client_id, model, train, test, seed: config.seed });
    }
    check_clients(&clients)?;
    Ok(clients)
}
