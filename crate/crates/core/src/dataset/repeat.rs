use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{BasketDataset, ItemId, UserId};
use crate::error::{Error, Result};

/// Ranked predictions keyed by `(user, basket index)`.
pub type Predictions = BTreeMap<(UserId, usize), Vec<ItemId>>;

/// Average share of a basket's items that were already bought earlier,
/// indexed by 1-based basket position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatCurve {
    values: Vec<f64>,
}

impl RepeatCurve {
    /// Value at basket index `n` (1-based).
    pub fn at(&self, n: usize) -> f64 {
        self.values[n - 1]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Repeat-percentage curve of the true baskets, or, when `predictions` is
/// given, of the top-`|B_n|` predicted items for each `(u, n)`.
///
/// Users whose basket `n` is empty are skipped at that index, as are `(u, n)`
/// pairs with no prediction entry.
pub fn repeat_percentage(ds: &BasketDataset, predictions: Option<&Predictions>) -> Result<RepeatCurve> {
    let max_t = ds.max_baskets();
    let mut sums = vec![0.0; max_t];
    let mut counts = vec![0usize; max_t];
    for user in ds.users() {
        let mut history: BTreeSet<ItemId> = BTreeSet::new();
        for n in 1..=user.len() {
            let truth = user.basket(n);
            if n >= 2 && !truth.is_empty() {
                let observed: Option<&[ItemId]> = match predictions {
                    None => Some(truth),
                    Some(p) => match p.get(&(user.user_id, n)) {
                        None => None,
                        Some(list) if list.len() < truth.len() => {
                            return Err(Error::Precondition(format!(
                                "prediction for user {} basket {n} has {} items, basket has {}",
                                user.user_id,
                                list.len(),
                                truth.len()
                            )))
                        }
                        Some(list) => Some(&list[..truth.len()]),
                    },
                };
                if let Some(items) = observed {
                    let repeats = items.iter().filter(|i| history.contains(i)).count();
                    sums[n - 1] += repeats as f64 / items.len() as f64;
                    counts[n - 1] += 1;
                }
            }
            history.extend(truth.iter().copied());
        }
    }
    let values = sums
        .iter()
        .zip(&counts)
        .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    Ok(RepeatCurve { values })
}
