use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{BasketDataset, ItemId, UserId};
use crate::error::{Error, Result};

/// Sorted purchase positions per `(user, item)`, answering
/// `PIF(u, i, t)` with one binary search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PifIndex {
    positions: Vec<BTreeMap<ItemId, Vec<u32>>>,
    basket_counts: Vec<usize>,
    n_items: usize,
}

pub fn build_pif_index(ds: &BasketDataset) -> PifIndex {
    PifIndex::build(ds)
}

impl PifIndex {
    pub fn build(ds: &BasketDataset) -> Self {
        let mut positions = Vec::with_capacity(ds.n_users());
        let mut basket_counts = Vec::with_capacity(ds.n_users());
        for user in ds.users() {
            let mut per_item: BTreeMap<ItemId, Vec<u32>> = BTreeMap::new();
            for (idx, basket) in user.baskets().iter().enumerate() {
                for &item in basket {
                    per_item.entry(item).or_default().push(idx as u32 + 1);
                }
            }
            positions.push(per_item);
            basket_counts.push(user.len());
        }
        PifIndex {
            positions,
            basket_counts,
            n_items: ds.n_items(),
        }
    }

    pub fn n_users(&self) -> usize {
        self.positions.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    /// `T` for user `u`.
    pub fn basket_count(&self, u: UserId) -> Option<usize> {
        self.basket_counts.get(u).copied()
    }

    /// 1-based basket indices where `u` bought `i`, strictly increasing.
    pub fn positions(&self, u: UserId, i: ItemId) -> &[u32] {
        self.positions
            .get(u)
            .and_then(|m| m.get(&i))
            .map_or(&[], Vec::as_slice)
    }

    /// Items `u` has bought at least once, with their positions.
    pub fn user_items(&self, u: UserId) -> impl Iterator<Item = (ItemId, &[u32])> + '_ {
        self.positions[u].iter().map(|(&i, p)| (i, p.as_slice()))
    }

    fn check(&self, u: UserId, t: usize) -> Result<()> {
        if t < 2 {
            return Err(Error::Domain(format!("PIF is undefined for basket index {t} (< 2)")));
        }
        if u >= self.positions.len() {
            return Err(Error::Lookup(format!("unknown user {u}")));
        }
        Ok(())
    }

    /// Purchases of `i` by `u` in baskets `1..t`.
    pub fn count_before(&self, u: UserId, i: ItemId, t: usize) -> Result<usize> {
        self.check(u, t)?;
        Ok(self.positions(u, i).partition_point(|&p| (p as usize) < t))
    }

    /// `count_before(u, i, t) / (t - 1)`. Unknown items have frequency 0.
    pub fn pif(&self, u: UserId, i: ItemId, t: usize) -> Result<f64> {
        let count = self.count_before(u, i, t)?;
        Ok(count as f64 / (t - 1) as f64)
    }

    /// PIF of every vocabulary item for `(u, t)`.
    pub fn pif_row(&self, u: UserId, t: usize) -> Result<Vec<f64>> {
        self.check(u, t)?;
        let denom = (t - 1) as f64;
        let mut row = vec![0.0; self.n_items];
        for (item, pos) in &self.positions[u] {
            let count = pos.partition_point(|&p| (p as usize) < t);
            if *item < row.len() {
                row[*item] = count as f64 / denom;
            }
        }
        Ok(row)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(ds: &BasketDataset, u: UserId, i: ItemId, t: usize) -> f64 {
        let hits = ds.users()[u].baskets()[..t - 1]
            .iter()
            .filter(|b| b.contains(&i))
            .count();
        hits as f64 / (t - 1) as f64
    }

    #[test]
    fn milk_example() {
        // milk = 0; two of three prior baskets contain it.
        let ds = BasketDataset::from_histories(vec![vec![vec![0, 1], vec![1], vec![0, 2], vec![2]]], 3).unwrap();
        let idx = build_pif_index(&ds);
        assert_eq!(idx.pif(0, 0, 4).unwrap(), 2.0 / 3.0);
    }

    #[test]
    fn never_purchased_and_unknown_items_are_zero() {
        let ds = BasketDataset::from_histories(vec![vec![vec![0], vec![0]]], 3).unwrap();
        let idx = build_pif_index(&ds);
        assert_eq!(idx.pif(0, 2, 2).unwrap(), 0.0);
        assert_eq!(idx.pif(0, 999, 2).unwrap(), 0.0);
        assert!(idx.positions(0, 1).is_empty());
    }

    #[test]
    fn first_basket_is_a_domain_error() {
        let ds = BasketDataset::from_histories(vec![vec![vec![0]]], 1).unwrap();
        let idx = build_pif_index(&ds);
        assert!(matches!(idx.pif(0, 0, 1), Err(Error::Domain(_))));
        assert!(matches!(idx.pif(0, 0, 0), Err(Error::Domain(_))));
        assert!(matches!(idx.pif(5, 0, 2), Err(Error::Lookup(_))));
    }

    #[test]
    fn empty_baskets_contribute_no_entries() {
        let ds = BasketDataset::from_histories(vec![vec![vec![], vec![], vec![1]]], 2).unwrap();
        let idx = build_pif_index(&ds);
        assert_eq!(idx.basket_count(0), Some(3));
        assert_eq!(idx.user_items(0).count(), 1);
        assert_eq!(idx.pif(0, 1, 3).unwrap(), 0.0);
    }

    fn arb_dataset() -> impl Strategy<Value = BasketDataset> {
        let basket = prop::collection::vec(0usize..12, 0..6);
        let user = prop::collection::vec(basket, 1..9);
        prop::collection::vec(user, 1..10)
            .prop_map(|h| BasketDataset::from_histories(h, 12).unwrap())
    }

    proptest! {
        #[test]
        fn index_matches_counting_and_is_bounded(ds in arb_dataset()) {
            let idx = build_pif_index(&ds);
            for (u, user) in ds.users().iter().enumerate() {
                for i in 0..ds.n_items() {
                    let pos = idx.positions(u, i);
                    prop_assert!(pos.windows(2).all(|w| w[0] < w[1]));
                    let mut prev_count = 0.0;
                    for t in 2..=user.len() + 1 {
                        let v = idx.pif(u, i, t).unwrap();
                        prop_assert_eq!(v, brute_force(&ds, u, i, t));
                        prop_assert!((0.0..=1.0).contains(&v));
                        let count = v * (t - 1) as f64;
                        prop_assert!((count - count.round()).abs() < 1e-9);
                        prop_assert!(count >= prev_count - 1e-9);
                        prev_count = count;
                    }
                }
                if user.len() >= 2 {
                    let row = idx.pif_row(u, user.len()).unwrap();
                    for (i, v) in row.iter().enumerate() {
                        prop_assert_eq!(*v, idx.pif(u, i, user.len()).unwrap());
                    }
                }
            }
        }
    }
}
