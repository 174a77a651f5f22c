use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Sense;
use crate::{Error, Result};

/// Split by `sense_id` into `(train, eval)`, preserving input order within
/// each side. The eval side holds `round(n · eval_fraction)` sense ids.
pub fn split(senses: &[Sense], eval_fraction: f64, seed: u64) -> Result<(Vec<Sense>, Vec<Sense>)> {
    if !(0.0 < eval_fraction && eval_fraction < 1.0) {
        return Err(Error::InvalidInput(format!("eval fraction {eval_fraction} outside (0, 1)")));
    }
    let mut ids: Vec<&str> = senses.iter().map(|s| s.sense_id.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
    let n = ids.len();
    let n_eval = (n as f64 * eval_fraction).round() as usize;
    if n_eval == 0 || n_eval == n {
        return Err(Error::EmptySplit { n, fraction: eval_fraction });
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let eval_ids: BTreeSet<&str> = ids[..n_eval].iter().copied().collect();
    let (eval, train): (Vec<Sense>, Vec<Sense>) =
        senses.iter().cloned().partition(|s| eval_ids.contains(s.sense_id.as_str()));
    Ok((train, eval))
}
