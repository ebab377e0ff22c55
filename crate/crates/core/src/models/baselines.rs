use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{mean, Ranker, TrainConfig};
use crate::dataset::{BasketDataset, ItemId, PifIndex, SplitView, UserId};
use crate::error::{Error, Result};
use crate::numerics::{dot, neg_log_sigmoid, sigmoid, OptimizerState, ParamBlock, Tensor};

/// Ranks items by their personalized frequency before basket `t`.
#[derive(Clone, Debug)]
pub struct PifRanker {
    idx: PifIndex,
}

pub fn pif_ranker(idx: &PifIndex) -> PifRanker {
    PifRanker { idx: idx.clone() }
}

impl PifRanker {
    pub fn index(&self) -> &PifIndex {
        &self.idx
    }
}

impl Ranker for PifRanker {
    fn name(&self) -> &str {
        "pif"
    }

    fn n_items(&self) -> usize {
        self.idx.n_items()
    }

    fn score(&self, u: UserId, t: usize, i: ItemId) -> Result<f64> {
        self.idx.pif(u, i, t)
    }

    fn scores(&self, u: UserId, t: usize) -> Result<Vec<f64>> {
        self.idx.pif_row(u, t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MfKind {
    /// Plain pairwise-ranking matrix factorization.
    Bprmf,
    /// Positive terms reweighted by inverse PIF.
    Ipsmf,
}

/// Time-invariant inner-product model; `score(u, t, i) = ⟨e_u, e_i⟩`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MfModel {
    pub kind: MfKind,
    pub user_emb: Tensor,
    pub item_emb: Tensor,
    pub loss_trace: Vec<f64>,
}

impl MfModel {
    pub fn zeros(kind: MfKind, n_users: usize, n_items: usize, d: usize) -> Self {
        MfModel {
            kind,
            user_emb: Tensor::zeros(&[n_users, d]),
            item_emb: Tensor::zeros(&[n_items, d]),
            loss_trace: Vec::new(),
        }
    }

    /// Pairwise loss `-ln σ(⟨e_u, e_i⟩ − ⟨e_u, e_j⟩)`.
    pub fn pair_loss(&self, u: UserId, i: ItemId, j: ItemId) -> f64 {
        let e_u = self.user_emb.row(u);
        neg_log_sigmoid(dot(e_u, self.item_emb.row(i)) - dot(e_u, self.item_emb.row(j)))
    }
}

impl Ranker for MfModel {
    fn name(&self) -> &str {
        match self.kind {
            MfKind::Bprmf => "bprmf",
            MfKind::Ipsmf => "ipsmf",
        }
    }

    fn n_items(&self) -> usize {
        self.item_emb.rows()
    }

    fn score(&self, u: UserId, _t: usize, i: ItemId) -> Result<f64> {
        if u >= self.user_emb.rows() || i >= self.item_emb.rows() {
            return Err(Error::Lookup(format!("unknown user {u} or item {i}")));
        }
        Ok(dot(self.user_emb.row(u), self.item_emb.row(i)))
    }
}

/// Inverse-propensity weight `min(1 / max(pif, floor), cap)`.
pub fn ips_weight(pif: f64, floor: f64, cap: f64) -> f64 {
    (1.0 / pif.max(floor)).min(cap)
}

pub fn train_bprmf(ds: &BasketDataset, split: &SplitView, cfg: &TrainConfig) -> Result<MfModel> {
    train_mf(ds, split, None, cfg)
}

/// Pairwise MF whose positive `(u, i, t)` terms are weighted by
/// [`ips_weight`] of `PIF(u, i, t)`; basket 1 counts as PIF 0.
pub fn train_propensity_mf(ds: &BasketDataset, idx: &PifIndex, split: &SplitView, cfg: &TrainConfig) -> Result<MfModel> {
    train_mf(ds, split, Some(idx), cfg)
}

/// Positives are every item occurrence in the pooled training baskets;
/// negatives are drawn uniformly from items absent from the user's whole
/// training history.
fn train_mf(ds: &BasketDataset, split: &SplitView, idx: Option<&PifIndex>, cfg: &TrainConfig) -> Result<MfModel> {
    cfg.validate()?;
    let kind = if idx.is_some() { MfKind::Ipsmf } else { MfKind::Bprmf };
    let (d, n_items) = (cfg.dim, ds.n_items());

    // (user, item, weight) per positive occurrence
    let mut positives: Vec<(UserId, ItemId, f64)> = Vec::new();
    let mut histories: Vec<Vec<ItemId>> = Vec::with_capacity(ds.n_users());
    for user in ds.users() {
        let train_end = split.get(user.user_id).train_end.min(user.len());
        let seen: Vec<ItemId> = user.items_before(train_end + 1).into_iter().collect();
        if !seen.is_empty() && seen.len() >= n_items {
            return Err(Error::Sampling(format!(
                "user {} purchased every item in training; no negatives",
                user.user_id
            )));
        }
        for t in 1..=train_end {
            for &i in user.basket(t) {
                let w = match idx {
                    None => 1.0,
                    Some(idx) => {
                        let pif = if t >= 2 { idx.pif(user.user_id, i, t)? } else { 0.0 };
                        ips_weight(pif, cfg.propensity_floor, cfg.propensity_cap)
                    }
                };
                positives.push((user.user_id, i, w));
            }
        }
        histories.push(seen);
    }
    if positives.is_empty() {
        return Err(Error::Precondition("no training purchases".into()));
    }

    let mut init_rng = cfg.rng(5);
    let bound = 1.0 / (d as f64).sqrt();
    let mut model = MfModel {
        kind,
        user_emb: Tensor::uniform(&[ds.n_users(), d], bound, &mut init_rng),
        item_emb: Tensor::uniform(&[n_items, d], bound, &mut init_rng),
        loss_trace: Vec::with_capacity(cfg.epochs),
    };
    let mut rng = cfg.rng(3);
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.step_size(), cfg.lambda_r)?;
    let mut g_user = vec![0.0; model.user_emb.len()];
    let mut g_item = vec![0.0; model.item_emb.len()];

    for epoch in 1..=cfg.epochs {
        let mut triples: Vec<(u32, u32, u32, f64)> = Vec::with_capacity(positives.len() * cfg.negatives);
        for &(u, i, w) in &positives {
            let seen = &histories[u];
            for _ in 0..cfg.negatives {
                let j = loop {
                    let j = rng.random_range(0..n_items);
                    if seen.binary_search(&j).is_err() {
                        break j;
                    }
                };
                triples.push((u as u32, i as u32, j as u32, w));
            }
        }
        triples.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for batch in triples.chunks(cfg.batch_size) {
            g_user.fill(0.0);
            g_item.fill(0.0);
            let scale = 1.0 / batch.len() as f64;
            for &(u, i, j, w) in batch {
                let (u, i, j) = (u as usize, i as usize, j as usize);
                let e_u = model.user_emb.row(u);
                let (e_i, e_j) = (model.item_emb.row(i), model.item_emb.row(j));
                let delta = dot(e_u, e_i) - dot(e_u, e_j);
                epoch_loss += w * neg_log_sigmoid(delta);
                let g = -sigmoid(-delta) * w * scale;
                for a in 0..d {
                    g_user[u * d + a] += g * (e_i[a] - e_j[a]);
                    g_item[i * d + a] += g * e_u[a];
                    g_item[j * d + a] -= g * e_u[a];
                }
            }
            opt.apply_update(&mut [
                ParamBlock::new("mf.user_emb", model.user_emb.data_mut(), &g_user),
                ParamBlock::new("mf.item_emb", model.item_emb.data_mut(), &g_item),
            ])
            .map_err(|e| Error::Training(format!("{} epoch {epoch}: {e}", kind_name(kind))))?;
        }
        let loss = mean(epoch_loss, triples.len());
        if !loss.is_finite() {
            return Err(Error::Training(format!("{} diverged at epoch {epoch}", kind_name(kind))));
        }
        model.loss_trace.push(loss);
    }
    Ok(model)
}

fn kind_name(kind: MfKind) -> &'static str {
    match kind {
        MfKind::Bprmf => "bprmf",
        MfKind::Ipsmf => "ipsmf",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_pif_index, split};

    #[test]
    fn pif_ranker_single_item_user() {
        let ds = BasketDataset::from_histories(vec![vec![vec![0], vec![0], vec![0]]], 4).unwrap();
        let r = pif_ranker(&build_pif_index(&ds));
        assert_eq!(r.recommend(0, 3, 1).unwrap(), [0]);
        assert_eq!(r.scores(0, 3).unwrap(), [1.0, 0.0, 0.0, 0.0]);
        assert!(matches!(r.score(0, 1, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn zero_model_scores_and_loss() {
        let m = MfModel::zeros(MfKind::Bprmf, 2, 3, 4);
        assert_eq!(m.score(1, 9, 2).unwrap(), 0.0);
        assert!((m.pair_loss(0, 1, 2) - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn ips_weights() {
        assert_eq!(ips_weight(1.0, 0.05, 20.0), 1.0);
        assert_eq!(ips_weight(0.0, 0.05, 20.0), 20.0);
        assert_eq!(ips_weight(0.0, 0.1, 20.0), 10.0);
        assert_eq!(ips_weight(0.5, 0.05, 20.0), 2.0);
    }

    #[test]
    fn bprmf_learns_a_preference() {
        // item 0 always bought, item 3 never
        let ds = BasketDataset::from_histories(vec![vec![vec![0]; 8]], 4).unwrap();
        let cfg = TrainConfig { dim: 2, learning_rate: 0.05, epochs: 50, batch_size: 4, ..TrainConfig::default() };
        let m = train_bprmf(&ds, &split(&ds).unwrap(), &cfg).unwrap();
        assert!(m.score(0, 0, 0).unwrap() > m.score(0, 0, 1).unwrap());
        assert!(m.loss_trace.last().unwrap() < &m.loss_trace[0]);
    }

    #[test]
    fn constant_pif_gives_uniform_weights() {
        // Every positive has PIF 1 from basket 2 on, so weights are all 1 there.
        let ds = BasketDataset::from_histories(vec![vec![vec![0, 1]; 6]; 2], 5).unwrap();
        let idx = build_pif_index(&ds);
        for t in 2..=4 {
            assert_eq!(ips_weight(idx.pif(0, 0, t).unwrap(), 0.05, 20.0), 1.0);
        }
        let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
        let m = train_propensity_mf(&ds, &idx, &split(&ds).unwrap(), &cfg).unwrap();
        assert_eq!(m.kind, MfKind::Ipsmf);
        assert_eq!(m.name(), "ipsmf");
    }
}
