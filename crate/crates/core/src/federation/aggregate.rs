use super::state::{AggregationMode, ClientState, ServerState};
use super::FederationError;
use crate::model::SharedScope;

/// FNV-1a over the raw bit patterns. Fingerprints a parameter vector so
/// traces can record "did omega change" without storing the vector twice.
pub fn checksum_f64s(values: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Combine flattened client shared branches into a new `omega_c`.
///
/// `Uniform` takes the arithmetic mean; `SampleWeighted` weights each client
/// by `counts[k] / sum(counts)`. When every input vector is bit-identical
/// the first one is returned unchanged, so a round with no local drift (or a
/// single client) is an exact fixed point rather than a rounding of one.
pub fn aggregate_shared(
    params: &[Vec<f64>],
    counts: &[usize],
    mode: AggregationMode,
) -> Result<Vec<f64>, FederationError> {
    if params.is_empty() {
        return Err(FederationError::NoClients);
    }
    if counts.len() != params.len() {
        return Err(FederationError::len("aggregate_shared counts", params.len(), counts.len()));
    }
    if counts.contains(&0) {
        return Err(FederationError::InvalidConfig("sample counts must be positive".into()));
    }
    let width = params[0].len();
    for (k, p) in params.iter().enumerate() {
        if p.len() != width {
            return Err(FederationError::len(format!("aggregate_shared client {k}"), width, p.len()));
        }
    }
    if params[1..].iter().all(|p| p == &params[0]) {
        return Ok(params[0].clone());
    }
    let mut out = vec![0.0; width];
    match mode {
        AggregationMode::Uniform => {
            let k = params.len() as f64;
            for p in params {
                for (o, v) in out.iter_mut().zip(p) {
                    *o += v;
                }
            }
            for o in out.iter_mut() {
                *o /= k;
            }
        }
        AggregationMode::SampleWeighted => {
            let total: f64 = counts.iter().map(|&c| c as f64).sum();
            for (p, &c) in params.iter().zip(counts) {
                let w = c as f64 / total;
                for (o, v) in out.iter_mut().zip(p) {
                    *o += w * v;
                }
            }
        }
    }
    Ok(out)
}

/// Overwrite every client's shared parameters (under `scope`) with the
/// server's `omega_c`. Everything outside the scope is untouched.
pub fn broadcast_shared(
    server: &ServerState,
    clients: &mut [ClientState],
    scope: SharedScope,
) -> Result<(), FederationError> {
    for client in clients.iter_mut() {
        client.model.load_shared_flat(scope, &server.omega_c)?;
    }
    Ok(())
}
