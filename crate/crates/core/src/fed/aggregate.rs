use super::RoundUpdate;
use crate::error::{Error, Result};

/// Sample-weighted FedAvg: `Σ (n_i / Σn) · params_i`.
///
/// Updates are taken in `client_id` order and the mean is accumulated as an
/// offset from the first one, `p_0 + Σ w_i (p_i − p_0)`, so a set of identical
/// updates (and any single update) comes back bit-for-bit.
pub fn fedavg_aggregate(updates: &[RoundUpdate]) -> Result<Vec<f64>> {
    let mut ordered: Vec<&RoundUpdate> = updates.iter().collect();
    ordered.sort_by_key(|u| u.client_id);
    let first = ordered
        .first()
        .ok_or_else(|| Error::Invalid("fedavg_aggregate needs at least one update".into()))?;
    let len = first.params.len();
    for u in &ordered {
        if u.params.len() != len {
            return Err(Error::length(
                format!("update from client {}", u.client_id),
                len,
                u.params.len(),
            ));
        }
        if u.n_samples == 0 {
            return Err(Error::Invalid(format!(
                "client {} reported zero samples",
                u.client_id
            )));
        }
    }
    let total: f64 = ordered.iter().map(|u| u.n_samples as f64).sum();
    let base = &first.params;
    let mut out = base.clone();
    for u in &ordered[1..] {
        let w = u.n_samples as f64 / total;
        for ((o, p), b) in out.iter_mut().zip(&u.params).zip(base) {
            *o += w * (p - b);
        }
    }
    Ok(out)
}
