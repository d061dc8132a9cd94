use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::Masks;
use crate::error::{EgatError, Result};

/// Shuffles the labeled ids with `seed` and cuts them 3:1:1. Train gets
/// `ceil(3n/5)`, validation `ceil(n/5)` and test the remainder.
pub fn split_labels(labeled: &[usize], num_nodes: usize, seed: u64) -> Result<Masks> {
    let n = labeled.len();
    if n < 5 {
        return Err(EgatError::TooFewLabeled { needed: 5, found: n });
    }
    if let Some(&index) = labeled.iter().find(|&&i| i >= num_nodes) {
        return Err(EgatError::NodeOutOfRange { index, num_nodes });
    }
    let mut ids = labeled.to_vec();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(EgatError::OverlappingMasks {
            id: w[0],
            first: "labeled",
            second: "labeled",
        });
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (3 * n).div_ceil(5);
    let n_val = n.div_ceil(5);
    let (train, rest) = ids.split_at(n_train);
    let (val, test) = rest.split_at(n_val);
    Ok(Masks::from_ids(num_nodes, train, val, test))
}
