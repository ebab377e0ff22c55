//! Ranking accuracy (hit rate, NDCG), list diversity (negative top-frequency
//! ratio) and robustness statistics, plus the serialized evaluation report.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{BasketDataset, ItemId};
use crate::error::{Error, Result};

/// Default size of the top-frequent reference set and metric cutoff.
pub const DEFAULT_K: usize = 20;

fn check_lengths(recs: &[Vec<ItemId>], other: usize, k: usize) -> Result<()> {
    if recs.len() != other {
        return Err(Error::Dimension {
            what: "per-user lists",
            expected: other,
            got: recs.len(),
        });
    }
    if k == 0 {
        return Err(Error::Precondition("k must be >= 1".into()));
    }
    if let Some((u, r)) = recs.iter().enumerate().find(|(_, r)| r.len() < k) {
        return Err(Error::Precondition(format!(
            "user {u} has {} recommendations, need at least k = {k}",
            r.len()
        )));
    }
    Ok(())
}

/// Mean of `per_user` over users with a non-empty truth basket.
fn mean_over_truth(truth: &[Vec<ItemId>], mut per_user: impl FnMut(usize, &BTreeSet<ItemId>) -> f64) -> Result<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for (u, t) in truth.iter().enumerate() {
        if t.is_empty() {
            continue;
        }
        let set: BTreeSet<ItemId> = t.iter().copied().collect();
        sum += per_user(u, &set);
        n += 1;
    }
    if n == 0 {
        return Err(Error::Precondition("every truth basket is empty".into()));
    }
    Ok(sum / n as f64)
}

/// Fraction of users whose top-`k` list hits at least one truth item.
/// Users with empty truth are excluded.
pub fn hit_rate_at_k(recs: &[Vec<ItemId>], truth: &[Vec<ItemId>], k: usize) -> Result<f64> {
    check_lengths(recs, truth.len(), k)?;
    mean_over_truth(truth, |u, t| {
        if recs[u][..k].iter().any(|i| t.contains(i)) {
            1.0
        } else {
            0.0
        }
    })
}

/// Binary-relevance NDCG@k averaged over users with non-empty truth.
pub fn ndcg_at_k(recs: &[Vec<ItemId>], truth: &[Vec<ItemId>], k: usize) -> Result<f64> {
    check_lengths(recs, truth.len(), k)?;
    let discount = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    mean_over_truth(truth, |u, t| {
        let dcg: f64 = recs[u][..k]
            .iter()
            .enumerate()
            .filter(|(_, i)| t.contains(i))
            .map(|(r, _)| discount(r + 1))
            .sum();
        let idcg: f64 = (1..=t.len().min(k)).map(discount).sum();
        dcg / idcg
    })
}

/// Per-user set of the most purchased items in a history prefix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopFrequentSet {
    k_freq: usize,
    sets: Vec<BTreeSet<ItemId>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrequencyScope {
    /// Each user's own purchase counts.
    #[default]
    Personal,
    /// Counts pooled over all users; one shared set.
    Global,
}

fn top_by_count(counts: &BTreeMap<ItemId, usize>, k: usize) -> BTreeSet<ItemId> {
    let mut items: Vec<(ItemId, usize)> = counts.iter().map(|(&i, &c)| (i, c)).collect();
    items.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    items.into_iter().take(k).map(|(i, _)| i).collect()
}

impl TopFrequentSet {
    /// Uses baskets `1..=history_end[u]` of each user. Ties in purchase count
    /// go to the smaller item id.
    pub fn build(ds: &BasketDataset, history_end: &[usize], k_freq: usize, scope: FrequencyScope) -> Result<Self> {
        if history_end.len() != ds.n_users() {
            return Err(Error::Dimension {
                what: "history cutoffs",
                expected: ds.n_users(),
                got: history_end.len(),
            });
        }
        let per_user: Vec<BTreeMap<ItemId, usize>> = ds
            .users()
            .iter()
            .map(|h| {
                let mut counts = BTreeMap::new();
                for b in &h.baskets()[..history_end[h.user_id].min(h.len())] {
                    for &i in b {
                        *counts.entry(i).or_insert(0) += 1;
                    }
                }
                counts
            })
            .collect();
        let sets = match scope {
            FrequencyScope::Personal => per_user.iter().map(|c| top_by_count(c, k_freq)).collect(),
            FrequencyScope::Global => {
                let mut pooled = BTreeMap::new();
                for c in &per_user {
                    for (&i, &n) in c {
                        *pooled.entry(i).or_insert(0) += n;
                    }
                }
                vec![top_by_count(&pooled, k_freq); ds.n_users()]
            }
        };
        Ok(TopFrequentSet { k_freq, sets })
    }

    pub fn from_sets(k_freq: usize, sets: Vec<BTreeSet<ItemId>>) -> Self {
        TopFrequentSet { k_freq, sets }
    }

    pub fn get(&self, u: usize) -> &BTreeSet<ItemId> {
        &self.sets[u]
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn k_freq(&self) -> usize {
        self.k_freq
    }
}

/// `1 − |top-k ∩ topfreq(u)| / k`, averaged over users.
pub fn ntfr_at_k(recs: &[Vec<ItemId>], topfreq: &TopFrequentSet, k: usize) -> Result<f64> {
    check_lengths(recs, topfreq.len(), k)?;
    if recs.is_empty() {
        return Err(Error::Precondition("no users to evaluate".into()));
    }
    let sum: f64 = recs
        .iter()
        .enumerate()
        .map(|(u, r)| {
            let overlap = r[..k].iter().filter(|i| topfreq.get(u).contains(i)).count();
            1.0 - overlap as f64 / k as f64
        })
        .sum();
    Ok(sum / recs.len() as f64)
}

/// Mean 1-based position of `inserted[u]` in each user's full ranking.
pub fn average_inserted_rank(rankings: &[Vec<ItemId>], inserted: &[ItemId]) -> Result<f64> {
    if rankings.len() != inserted.len() || rankings.is_empty() {
        return Err(Error::Dimension {
            what: "rankings vs inserted items",
            expected: inserted.len(),
            got: rankings.len(),
        });
    }
    let mut total = 0usize;
    for (u, (ranking, item)) in rankings.iter().zip(inserted).enumerate() {
        let pos = ranking
            .iter()
            .position(|i| i == item)
            .ok_or_else(|| Error::Lookup(format!("inserted item {item} missing from ranking of user {u}")))?;
        total += pos + 1;
    }
    Ok(total as f64 / rankings.len() as f64)
}

/// Size of the union of all lists.
pub fn distinct_item_count(lists: &[Vec<ItemId>]) -> usize {
    lists.iter().flatten().collect::<BTreeSet<_>>().len()
}

/// One model's metrics at cutoff `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRow {
    pub model: String,
    pub k: usize,
    pub hr: f64,
    pub ndcg: f64,
    pub ntfr: f64,
    /// Users with a non-empty truth basket.
    pub n_users: usize,
    /// Users skipped for an empty truth basket.
    pub n_excluded: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avg_inserted_rank: Option<f64>,
}

/// All three list metrics for one model; users with empty truth are
/// dropped from every metric.
pub fn evaluate_lists(
    model: &str,
    recs: &[Vec<ItemId>],
    truth: &[Vec<ItemId>],
    topfreq: &TopFrequentSet,
    k: usize,
) -> Result<ModelRow> {
    check_lengths(recs, truth.len(), k)?;
    let keep: Vec<usize> = (0..truth.len()).filter(|&u| !truth[u].is_empty()).collect();
    if keep.is_empty() {
        return Err(Error::Precondition("every truth basket is empty".into()));
    }
    let recs_kept: Vec<Vec<ItemId>> = keep.iter().map(|&u| recs[u].clone()).collect();
    let truth_kept: Vec<Vec<ItemId>> = keep.iter().map(|&u| truth[u].clone()).collect();
    let freq_kept = TopFrequentSet::from_sets(topfreq.k_freq(), keep.iter().map(|&u| topfreq.get(u).clone()).collect());
    Ok(ModelRow {
        model: model.to_string(),
        k,
        hr: hit_rate_at_k(&recs_kept, &truth_kept, k)?,
        ndcg: ndcg_at_k(&recs_kept, &truth_kept, k)?,
        ntfr: ntfr_at_k(&recs_kept, &freq_kept, k)?,
        n_users: keep.len(),
        n_excluded: truth.len() - keep.len(),
        avg_inserted_rank: None,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ModelRow>,
    /// Named curves, e.g. repeat percentages or `ω` trajectories.
    #[serde(default)]
    pub curves: BTreeMap<String, Vec<f64>>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,k,hr,ndcg,ntfr,n_users,n_excluded,avg_inserted_rank\n");
        for r in &self.rows {
            let rank = r.avg_inserted_rank.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                r.model, r.k, r.hr, r.ndcg, r.ntfr, r.n_users, r.n_excluded, rank
            ));
        }
        out
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let csv_path = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv_path, self.to_csv()).map_err(|e| Error::io(&csv_path, e))?;
        let json_path = dir.join(format!("{stem}.json"));
        let body = serde_json::to_string_pretty(self)?;
        std::fs::write(&json_path, body).map_err(|e| Error::io(&json_path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hit_rate_extremes() {
        let recs = vec![vec![1, 2, 3], vec![4, 5, 6]];
        assert_eq!(hit_rate_at_k(&recs, &[vec![2], vec![6, 4]], 3).unwrap(), 1.0);
        assert_eq!(hit_rate_at_k(&recs, &[vec![9], vec![0]], 3).unwrap(), 0.0);
        assert_eq!(hit_rate_at_k(&recs, &[vec![3], vec![0]], 2).unwrap(), 0.0);
    }

    #[test]
    fn empty_truth_is_excluded() {
        let recs = vec![vec![1, 2], vec![4, 5]];
        assert_eq!(hit_rate_at_k(&recs, &[vec![1], vec![]], 2).unwrap(), 1.0);
        assert!(hit_rate_at_k(&recs, &[vec![], vec![]], 2).is_err());
        let tf = TopFrequentSet::from_sets(20, vec![BTreeSet::new(); 2]);
        let row = evaluate_lists("m", &recs, &[vec![1], vec![]], &tf, 2).unwrap();
        assert_eq!((row.n_users, row.n_excluded), (1, 1));
    }

    #[test]
    fn short_lists_are_rejected() {
        assert!(hit_rate_at_k(&[vec![1]], &[vec![1]], 2).is_err());
    }

    #[test]
    fn ndcg_worked_values() {
        assert_eq!(ndcg_at_k(&[vec![7, 1, 2]], &[vec![7]], 3).unwrap(), 1.0);
        let v = ndcg_at_k(&[vec![1, 7, 2]], &[vec![7]], 3).unwrap();
        assert!((v - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert!((v - 0.6309).abs() < 1e-4);
    }

    #[test]
    fn ndcg_ignores_irrelevant_order_below_last_hit() {
        let a = ndcg_at_k(&[vec![5, 1, 6, 2, 3, 4]], &[vec![5, 6]], 6).unwrap();
        let b = ndcg_at_k(&[vec![5, 1, 6, 4, 3, 2]], &[vec![5, 6]], 6).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ntfr_worked_values() {
        let recs: Vec<ItemId> = (0..20).collect();
        let tf = TopFrequentSet::from_sets(20, vec![(15..40).collect()]);
        assert_eq!(ntfr_at_k(&[recs.clone()], &tf, 20).unwrap(), 0.75);
        let disjoint = TopFrequentSet::from_sets(20, vec![(100..120).collect()]);
        assert_eq!(ntfr_at_k(&[recs], &disjoint, 20).unwrap(), 1.0);
    }

    #[test]
    fn topfreq_ties_and_history_cutoff() {
        let ds = BasketDataset::from_histories(vec![vec![vec![3, 1], vec![1, 2], vec![4, 0], vec![9]]], 10).unwrap();
        let tf = TopFrequentSet::build(&ds, &[3], 2, FrequencyScope::Personal).unwrap();
        // counts over baskets 1..=3: 1 -> 2, everything else 1; tie goes to item 0
        assert_eq!(tf.get(0), &BTreeSet::from([0, 1]));
        let g = TopFrequentSet::build(&ds, &[4], 20, FrequencyScope::Global).unwrap();
        assert_eq!(g.get(0).len(), 6);
    }

    #[test]
    fn inserted_rank() {
        assert_eq!(average_inserted_rank(&[vec![4, 1], vec![2, 4]], &[4, 2]).unwrap(), 1.0);
        assert_eq!(average_inserted_rank(&[vec![4, 1, 2], vec![0, 1, 2]], &[4, 2]).unwrap(), 2.0);
        assert!(average_inserted_rank(&[vec![1]], &[5]).is_err());
    }

    #[test]
    fn distinct_counts() {
        let lists = vec![(0..10).collect::<Vec<_>>(); 5];
        assert_eq!(distinct_item_count(&lists), 10);
        assert_eq!(distinct_item_count(&[]), 0);
    }

    #[test]
    fn report_csv_shape() {
        let report = EvalReport {
            rows: vec![ModelRow {
                model: "pif".into(),
                k: 20,
                hr: 0.5,
                ndcg: 0.25,
                ntfr: 0.0,
                n_users: 4,
                n_excluded: 0,
                avg_inserted_rank: Some(1.0),
            }],
            curves: BTreeMap::new(),
        };
        assert_eq!(report.to_csv(), "model,k,hr,ndcg,ntfr,n_users,n_excluded,avg_inserted_rank\npif,20,0.5,0.25,0,4,0,1\n");
    }

    fn instance() -> impl Strategy<Value = (Vec<Vec<usize>>, Vec<Vec<usize>>, Vec<BTreeSet<usize>>)> {
        let ranking = Just((0..10usize).collect::<Vec<_>>()).prop_shuffle();
        (
            prop::collection::vec(ranking, 5),
            prop::collection::vec(prop::collection::vec(0usize..10, 1..5), 5),
            prop::collection::vec(prop::collection::btree_set(0usize..10, 0..6), 5),
        )
    }

    proptest! {
        #[test]
        fn user_order_invariance((recs, truth, freq) in instance(), k in 1usize..=10) {
            let tf = TopFrequentSet::from_sets(k, freq.clone());
            let a = evaluate_lists("m", &recs, &truth, &tf, k).unwrap();
            let (mut r2, mut t2, mut f2) = (recs.clone(), truth.clone(), freq.clone());
            r2.reverse(); t2.reverse(); f2.reverse();
            let b = evaluate_lists("m", &r2, &t2, &TopFrequentSet::from_sets(k, f2), k).unwrap();
            prop_assert!((a.hr - b.hr).abs() < 1e-12);
            prop_assert!((a.ndcg - b.ndcg).abs() < 1e-12);
            prop_assert!((a.ntfr - b.ntfr).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&a.ntfr) && (0.0..=1.0).contains(&a.ndcg));
        }

        #[test]
        fn promoting_a_relevant_item_never_hurts_ndcg((recs, truth, _f) in instance(), pos in 1usize..10) {
            let r = &recs[0];
            let t: Vec<usize> = truth[0].iter().copied().filter(|&i| i != r[pos - 1]).chain([r[pos]]).collect();
            let mut swapped = r.clone();
            swapped.swap(pos, pos - 1);
            let before = ndcg_at_k(&[r.clone()], &[t.clone()], 10).unwrap();
            let after = ndcg_at_k(&[swapped], &[t.clone()], 10).unwrap();
            prop_assert!(after >= before);
        }
    }
}
