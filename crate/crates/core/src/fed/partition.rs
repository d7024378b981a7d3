use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};

/// One client's slice of the training set: sorted indices into it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shard {
    pub client_id: u32,
    pub indices: Vec<usize>,
}

/// Splits samples into `n_clients` disjoint shards of equal size with equal
/// per-class counts.
///
/// With `samples_per_client = None` each client gets `min_c ⌊n_c / K⌋`
/// samples of every class and the remainder is left unused. With `Some(s)`
/// (`s` even) each client gets exactly `s / 2` per class.
pub fn partition(
    labels: &[Label],
    n_clients: usize,
    samples_per_client: Option<usize>,
    seed: u64,
) -> Result<Vec<Shard>> {
    if n_clients == 0 {
        return Err(Error::Partition("need at least one client".into()));
    }
    let mut by_class: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, l) in labels.iter().enumerate() {
        by_class[l.index()].push(i);
    }
    let per_class = match samples_per_client {
        Some(s) => {
            if s == 0 || s % 2 != 0 {
                return Err(Error::Partition(format!(
                    "samples per client must be a positive even number, got {s}"
                )));
            }
            s / 2
        }
        None => by_class.iter().map(|c| c.len() / n_clients).min().unwrap_or(0),
    };
    let needed = per_class.max(1) * n_clients;
    let deficits: Vec<String> = by_class
        .iter()
        .enumerate()
        .filter(|(_, idx)| idx.len() < needed)
        .map(|(c, idx)| format!("class {c} has {} (short by {})", idx.len(), needed - idx.len()))
        .collect();
    if !deficits.is_empty() {
        return Err(Error::Partition(format!(
            "{n_clients} clients x {} per class need {needed} samples of each class: {}",
            per_class.max(1),
            deficits.join(", ")
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for c in &mut by_class {
        c.shuffle(&mut rng);
    }
    let shards = (0..n_clients)
        .map(|k| {
            let mut indices: Vec<usize> = by_class
                .iter()
                .flat_map(|c| c[k * per_class..(k + 1) * per_class].iter().copied())
                .collect();
            indices.sort_unstable();
            Shard {
                client_id: k as u32,
                indices,
            }
        })
        .collect();
    Ok(shards)
}
