use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{BasketDataset, ItemId};
use crate::error::{Error, Result};

/// Picks, per user, one item the user never bought and adds it to every
/// one of their baskets. Returns the noised dataset and `inserted[u]`.
///
/// Users are visited in ascending id order, each drawing one uniform choice
/// from its sorted list of never-purchased items.
pub fn insert_noise_item(ds: &BasketDataset, seed: u64) -> Result<(BasketDataset, Vec<ItemId>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inserted = Vec::with_capacity(ds.n_users());
    for user in ds.users() {
        let mut seen = vec![false; ds.n_items()];
        for &i in user.baskets().iter().flatten() {
            seen[i] = true;
        }
        let candidates: Vec<ItemId> = (0..ds.n_items()).filter(|&i| !seen[i]).collect();
        let &choice = candidates
            .choose(&mut rng)
            .ok_or(Error::NoUnrelatedItem { user: user.user_id })?;
        inserted.push(choice);
    }
    let noised = ds.map_baskets(|u, _, basket| {
        let mut b = basket.to_vec();
        b.push(inserted[u]);
        b
    })?;
    Ok((noised, inserted))
}
