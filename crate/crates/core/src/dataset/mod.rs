//! Basket transaction logs: loading, temporal splitting and exact
//! personalized-item-frequency queries.

mod noise;
mod pif;
mod repeat;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use noise::insert_noise_item;
pub use pif::{build_pif_index, PifIndex};
pub use repeat::{repeat_percentage, Predictions, RepeatCurve};

/// Dense, 0-based user index.
pub type UserId = usize;
/// Dense, 0-based item index.
pub type ItemId = usize;

/// Default pruning threshold: users need strictly more baskets than this.
pub const DEFAULT_MIN_BASKETS: usize = 5;

/// One user's baskets in temporal order. Basket indices are 1-based
/// throughout the crate, matching `t` in `PIF(u, i, t)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserHistory {
    pub user_id: UserId,
    baskets: Vec<Vec<ItemId>>,
}

impl UserHistory {
    /// Each basket is sorted and deduplicated.
    pub fn new(user_id: UserId, baskets: Vec<Vec<ItemId>>) -> Self {
        let baskets = baskets
            .into_iter()
            .map(|mut b| {
                b.sort_unstable();
                b.dedup();
                b
            })
            .collect();
        UserHistory { user_id, baskets }
    }

    /// Number of baskets `T`.
    pub fn len(&self) -> usize {
        self.baskets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.baskets.is_empty()
    }

    /// Basket `t` (1-based).
    pub fn basket(&self, t: usize) -> &[ItemId] {
        &self.baskets[t - 1]
    }

    pub fn baskets(&self) -> &[Vec<ItemId>] {
        &self.baskets
    }

    /// Distinct items purchased in baskets `1..t`.
    pub fn items_before(&self, t: usize) -> BTreeSet<ItemId> {
        self.baskets[..t.saturating_sub(1).min(self.baskets.len())]
            .iter()
            .flatten()
            .copied()
            .collect()
    }

    pub fn contains(&self, item: ItemId) -> bool {
        self.baskets.iter().any(|b| b.binary_search(&item).is_ok())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n_users: usize,
    pub n_items: usize,
    pub n_baskets: usize,
    pub avg_basket_size: f64,
}

/// Per-user basket sequences over a dense item vocabulary `0..n_items`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasketDataset {
    users: Vec<UserHistory>,
    n_items: usize,
    meta: DatasetMeta,
    user_labels: Vec<String>,
    item_labels: Vec<String>,
}

impl BasketDataset {
    /// Builds a dataset from dense histories; `histories[u]` belongs to user `u`.
    /// Labels default to the dense ids.
    pub fn from_histories(histories: Vec<Vec<Vec<ItemId>>>, n_items: usize) -> Result<Self> {
        let user_labels = (0..histories.len()).map(|u| u.to_string()).collect();
        let item_labels = (0..n_items).map(|i| i.to_string()).collect();
        Self::with_labels(histories, n_items, user_labels, item_labels)
    }

    fn with_labels(
        histories: Vec<Vec<Vec<ItemId>>>,
        n_items: usize,
        user_labels: Vec<String>,
        item_labels: Vec<String>,
    ) -> Result<Self> {
        if histories.is_empty() {
            return Err(Error::EmptyDataset { min_baskets: 0 });
        }
        let users: Vec<UserHistory> = histories
            .into_iter()
            .enumerate()
            .map(|(u, b)| UserHistory::new(u, b))
            .collect();
        for user in &users {
            if let Some(&bad) = user.baskets().iter().flatten().find(|&&i| i >= n_items) {
                return Err(Error::Precondition(format!(
                    "user {} references item {bad} outside vocabulary of {n_items}",
                    user.user_id
                )));
            }
        }
        let n_baskets = users.iter().map(UserHistory::len).sum();
        let n_purchases: usize = users.iter().flat_map(|u| u.baskets()).map(Vec::len).sum();
        let meta = DatasetMeta {
            n_users: users.len(),
            n_items,
            n_baskets,
            avg_basket_size: if n_baskets == 0 {
                0.0
            } else {
                n_purchases as f64 / n_baskets as f64
            },
        };
        Ok(BasketDataset {
            users,
            n_items,
            meta,
            user_labels,
            item_labels,
        })
    }

    pub fn users(&self) -> &[UserHistory] {
        &self.users
    }

    pub fn user(&self, u: UserId) -> Option<&UserHistory> {
        self.users.get(u)
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn max_baskets(&self) -> usize {
        self.users.iter().map(UserHistory::len).max().unwrap_or(0)
    }

    pub fn user_label(&self, u: UserId) -> &str {
        &self.user_labels[u]
    }

    pub fn item_label(&self, i: ItemId) -> &str {
        &self.item_labels[i]
    }

    /// Copy with every basket transformed by `f(user, t, basket)`.
    pub(crate) fn map_baskets(
        &self,
        mut f: impl FnMut(UserId, usize, &[ItemId]) -> Vec<ItemId>,
    ) -> Result<Self> {
        let histories = self
            .users
            .iter()
            .map(|h| {
                h.baskets()
                    .iter()
                    .enumerate()
                    .map(|(idx, b)| f(h.user_id, idx + 1, b))
                    .collect()
            })
            .collect();
        Self::with_labels(
            histories,
            self.n_items,
            self.user_labels.clone(),
            self.item_labels.clone(),
        )
    }

    /// Writes the `user_id,basket_seq,item_id` CSV using the original labels.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        let mut write = || -> std::io::Result<()> {
            writeln!(out, "user_id,basket_seq,item_id")?;
            for user in &self.users {
                let label = &self.user_labels[user.user_id];
                for (idx, basket) in user.baskets().iter().enumerate() {
                    for &item in basket {
                        writeln!(out, "{label},{},{}", idx + 1, self.item_labels[item])?;
                    }
                }
            }
            out.flush()
        };
        write().map_err(|e| Error::io(path, e))
    }

    /// Writes `user_ids.csv` and `item_ids.csv` (`original_id,dense_id`) into `dir`.
    pub fn write_id_maps(&self, dir: &Path) -> Result<()> {
        for (name, labels) in [("user_ids.csv", &self.user_labels), ("item_ids.csv", &self.item_labels)] {
            let path = dir.join(name);
            let mut body = String::from("original_id,dense_id\n");
            for (dense, original) in labels.iter().enumerate() {
                body.push_str(&format!("{original},{dense}\n"));
            }
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Numeric ids sort numerically, anything else lexicographically.
fn label_order(a: &str, b: &str) -> std::cmp::Ordering {
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

/// Loads a `user_id,basket_seq,item_id` CSV. Rows sharing a `(user_id,
/// basket_seq)` pair form one basket; users with `<= min_baskets` baskets
/// are dropped and both id spaces are densely re-indexed.
pub fn load_dataset(path: &Path, min_baskets: usize) -> Result<BasketDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);

    let header = reader.headers()?.clone();
    let expected = ["user_id", "basket_seq", "item_id"];
    if header.len() != 3 || header.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `user_id,basket_seq,item_id`, found `{}`", header.iter().collect::<Vec<_>>().join(",")),
        });
    }

    let mut grouped: BTreeMap<String, BTreeMap<i64, BTreeSet<String>>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::Parse {
                line,
                message: e.to_string(),
            }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 || record.iter().any(str::is_empty) {
            return Err(Error::Parse {
                line,
                message: format!("expected 3 non-empty fields, found {:?}", record.iter().collect::<Vec<_>>()),
            });
        }
        let seq: i64 = record[1].parse().map_err(|_| Error::Parse {
            line,
            message: format!("basket_seq `{}` is not an integer", &record[1]),
        })?;
        grouped
            .entry(record[0].to_string())
            .or_default()
            .entry(seq)
            .or_default()
            .insert(record[2].to_string());
    }

    let mut kept: Vec<(String, Vec<BTreeSet<String>>)> = grouped
        .into_iter()
        .filter(|(_, baskets)| baskets.len() > min_baskets)
        .map(|(user, baskets)| (user, baskets.into_values().collect()))
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyDataset { min_baskets });
    }
    kept.sort_by(|a, b| label_order(&a.0, &b.0));

    let mut item_labels: Vec<String> = kept
        .iter()
        .flat_map(|(_, b)| b.iter().flatten().cloned())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    item_labels.sort_by(|a, b| label_order(a, b));
    let item_index: BTreeMap<&str, ItemId> = item_labels
        .iter()
        .enumerate()
        .map(|(i, l)| (l.as_str(), i))
        .collect();

    let histories = kept
        .iter()
        .map(|(_, baskets)| {
            baskets
                .iter()
                .map(|b| b.iter().map(|l| item_index[l.as_str()]).collect())
                .collect()
        })
        .collect();
    let user_labels = kept.iter().map(|(u, _)| u.clone()).collect();
    let n_items = item_labels.len();
    BasketDataset::with_labels(histories, n_items, user_labels, item_labels)
}

/// Per-user temporal split: the last basket is test, the one before it is
/// validation, everything earlier is training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSplit {
    /// Training baskets are `1..=train_end`.
    pub train_end: usize,
    pub valid: usize,
    pub test: usize,
}

impl UserSplit {
    pub fn train_baskets(&self) -> std::ops::RangeInclusive<usize> {
        1..=self.train_end
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitView {
    pub users: Vec<UserSplit>,
}

impl SplitView {
    pub fn get(&self, u: UserId) -> UserSplit {
        self.users[u]
    }
}

pub fn split(ds: &BasketDataset) -> Result<SplitView> {
    let users = ds
        .users()
        .iter()
        .map(|h| {
            let t = h.len();
            if t < 3 {
                return Err(Error::Precondition(format!(
                    "user {} has {t} baskets; a train/valid/test split needs at least 3",
                    h.user_id
                )));
            }
            Ok(UserSplit {
                train_end: t - 2,
                valid: t - 1,
                test: t,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SplitView { users })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_tmp(body: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(body.as_bytes()).unwrap();
        f
    }

    #[test]
    fn duplicates_within_basket_are_dropped() {
        let f = write_tmp("user_id,basket_seq,item_id\nu1,1,A\nu1,1,A\nu1,2,B\n");
        let ds = load_dataset(f.path(), 1).unwrap();
        assert_eq!(ds.n_users(), 1);
        assert_eq!(ds.n_items(), 2);
        assert_eq!(ds.users()[0].baskets(), &[vec![0], vec![1]]);
        assert_eq!(ds.item_label(0), "A");
    }

    #[test]
    fn user_with_exactly_min_baskets_is_removed() {
        let mut body = String::from("user_id,basket_seq,item_id\n");
        for t in 1..=5 {
            body.push_str(&format!("short,{t},1\n"));
        }
        for t in 1..=6 {
            body.push_str(&format!("long,{t},2\n"));
        }
        let ds = load_dataset(write_tmp(&body).path(), 5).unwrap();
        assert_eq!(ds.n_users(), 1);
        assert_eq!(ds.user_label(0), "long");
        assert_eq!(ds.n_items(), 1);
    }

    #[test]
    fn empty_after_filtering() {
        let f = write_tmp("user_id,basket_seq,item_id\nu,1,a\nu,2,b\n");
        assert!(matches!(load_dataset(f.path(), 5), Err(Error::EmptyDataset { .. })));
    }

    #[test]
    fn malformed_row_reports_line() {
        let f = write_tmp("user_id,basket_seq,item_id\nu,1,a\nu,x,b\n");
        match load_dataset(f.path(), 0) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let f = write_tmp("user_id,basket_seq,item_id\nu,1\n");
        assert!(matches!(load_dataset(f.path(), 0), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn wrong_header_is_rejected() {
        let f = write_tmp("user,seq,item\nu,1,a\n");
        assert!(matches!(load_dataset(f.path(), 0), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn basket_order_follows_seq_not_file_order() {
        let f = write_tmp("user_id,basket_seq,item_id\n7,20,b\n7,3,a\n7,100,c\n");
        let ds = load_dataset(f.path(), 0).unwrap();
        let h = &ds.users()[0];
        let labels: Vec<_> = h.baskets().iter().map(|b| ds.item_label(b[0])).collect();
        assert_eq!(labels, ["a", "b", "c"]);
    }

    #[test]
    fn numeric_labels_reindex_in_numeric_order() {
        let f = write_tmp("user_id,basket_seq,item_id\n10,1,10\n2,1,2\n10,2,9\n2,2,2\n");
        let ds = load_dataset(f.path(), 1).unwrap();
        assert_eq!(ds.user_label(0), "2");
        assert_eq!(ds.user_label(1), "10");
        assert_eq!((ds.item_label(0), ds.item_label(1), ds.item_label(2)), ("2", "9", "10"));
    }

    #[test]
    fn split_rules() {
        let ds = BasketDataset::from_histories(
            vec![(0..6).map(|i| vec![i]).collect(), (0..3).map(|i| vec![i]).collect()],
            6,
        )
        .unwrap();
        let sv = split(&ds).unwrap();
        assert_eq!(sv.get(0), UserSplit { train_end: 4, valid: 5, test: 6 });
        assert_eq!(sv.get(1), UserSplit { train_end: 1, valid: 2, test: 3 });

        let short = BasketDataset::from_histories(vec![vec![vec![0], vec![1]]], 2).unwrap();
        assert!(matches!(split(&short), Err(Error::Precondition(_))));
    }

    #[test]
    fn id_maps_sidecar() {
        let f = write_tmp("user_id,basket_seq,item_id\nbob,1,x\nbob,2,y\n");
        let ds = load_dataset(f.path(), 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.write_id_maps(dir.path()).unwrap();
        let users = std::fs::read_to_string(dir.path().join("user_ids.csv")).unwrap();
        let items = std::fs::read_to_string(dir.path().join("item_ids.csv")).unwrap();
        assert_eq!(users, "original_id,dense_id\nbob,0\n");
        assert_eq!(items, "original_id,dense_id\nx,0\ny,1\n");
    }

    #[test]
    fn out_of_vocab_item_rejected() {
        assert!(BasketDataset::from_histories(vec![vec![vec![3]]], 3).is_err());
    }
}
