use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{mean, TrainConfig};
use crate::dataset::{BasketDataset, ItemId, PifIndex, UserId};
use crate::error::{Error, Result};
use crate::numerics::{NtlGradients, NtlParams, OptimizerState, ParamBlock, Tensor};

/// PIF factorization: a time-indexed user embedding `e_{u,t}` for every
/// `2 <= t <= T_u`, a time-invariant item embedding and one tensor layer
/// whose output reconstructs `PIF(u, i, t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Model {
    /// Row of `e_{u,2}` in `user_emb`; `e_{u,t}` sits `t - 2` rows later.
    row_offsets: Vec<usize>,
    basket_counts: Vec<usize>,
    pub user_emb: Tensor,
    pub item_emb: Tensor,
    pub ntl: NtlParams,
    /// Mean squared error per epoch over the visited samples.
    pub loss_trace: Vec<f64>,
}

impl Stage1Model {
    pub fn n_users(&self) -> usize {
        self.basket_counts.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_emb.rows()
    }

    pub fn row(&self, u: UserId, t: usize) -> Result<usize> {
        match self.basket_counts.get(u) {
            Some(&count) if (2..=count).contains(&t) => Ok(self.row_offsets[u] + t - 2),
            Some(&count) => Err(Error::Lookup(format!(
                "no PIF embedding for user {u} at basket {t} (valid 2..={count})"
            ))),
            None => Err(Error::Lookup(format!("unknown user {u}"))),
        }
    }

    pub fn user_embedding(&self, u: UserId, t: usize) -> Result<&[f64]> {
        Ok(self.user_emb.row(self.row(u, t)?))
    }

    fn item_embedding(&self, i: ItemId) -> Result<&[f64]> {
        if i >= self.n_items() {
            return Err(Error::Lookup(format!("unknown item {i}")));
        }
        Ok(self.item_emb.row(i))
    }

    /// Reconstructed PIF `p_(u,i,t)`.
    pub fn predict(&self, u: UserId, t: usize, i: ItemId) -> Result<f64> {
        Ok(self.ntl.score(self.user_embedding(u, t)?, self.item_embedding(i)?))
    }

    pub fn predict_row(&self, u: UserId, t: usize) -> Result<Vec<f64>> {
        let e_u = self.user_embedding(u, t)?;
        Ok((0..self.n_items())
            .map(|i| self.ntl.score(e_u, self.item_emb.row(i)))
            .collect())
    }

    /// MSE against exact PIF over every `(u, i, t)` with `2 <= t <= T_u`.
    pub fn full_mse(&self, idx: &PifIndex) -> Result<f64> {
        let (mut sum, mut n) = (0.0, 0usize);
        for u in 0..self.n_users() {
            for t in 2..=self.basket_counts[u] {
                let pred = self.predict_row(u, t)?;
                let target = idx.pif_row(u, t)?;
                sum += pred.iter().zip(&target).map(|(p, y)| (p - y).powi(2)).sum::<f64>();
                n += pred.len();
            }
        }
        Ok(mean(sum, n))
    }
}

struct Sample {
    row: usize,
    item: ItemId,
    target: f64,
}

/// `(row, positive-PIF items sorted, their PIF)` for every `(u, t)`.
fn positive_rows(idx: &PifIndex, offsets: &[usize], counts: &[usize]) -> Vec<(usize, Vec<(ItemId, f64)>)> {
    let mut rows = Vec::new();
    for u in 0..counts.len() {
        for t in 2..=counts[u] {
            let denom = (t - 1) as f64;
            let positives = idx
                .user_items(u)
                .filter_map(|(i, pos)| {
                    let c = pos.partition_point(|&p| (p as usize) < t);
                    (c > 0).then(|| (i, c as f64 / denom))
                })
                .collect();
            rows.push((offsets[u] + t - 2, positives));
        }
    }
    rows
}

/// Fits the PIF reconstruction by minibatch MSE. Each epoch visits every
/// positive-PIF triple plus `zero_pair_ratio` freshly sampled zero-PIF
/// triples per positive, shuffled.
pub fn train_stage1(ds: &BasketDataset, idx: &PifIndex, cfg: &TrainConfig) -> Result<Stage1Model> {
    cfg.validate()?;
    let (d, k) = (cfg.dim, cfg.ntl_slices);
    let n_items = ds.n_items();
    let counts: Vec<usize> = ds.users().iter().map(|h| h.len()).collect();
    let mut offsets = Vec::with_capacity(counts.len());
    let mut n_rows = 0;
    for &c in &counts {
        offsets.push(n_rows);
        n_rows += c.saturating_sub(1);
    }
    if n_rows == 0 {
        return Err(Error::Precondition("no user has two or more baskets".into()));
    }

    let mut init_rng = cfg.rng(0);
    let bound = 1.0 / (d as f64).sqrt();
    let mut model = Stage1Model {
        row_offsets: offsets.clone(),
        basket_counts: counts.clone(),
        user_emb: Tensor::uniform(&[n_rows, d], bound, &mut init_rng),
        item_emb: Tensor::uniform(&[n_items, d], bound, &mut init_rng),
        ntl: NtlParams::init(d, k, &mut init_rng),
        loss_trace: Vec::with_capacity(cfg.epochs),
    };

    let rows = positive_rows(idx, &offsets, &counts);
    let mut rng = cfg.rng(1);
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.step_size(), cfg.lambda_p)?;
    let mut g_user = vec![0.0; model.user_emb.len()];
    let mut g_item = vec![0.0; model.item_emb.len()];
    let mut g_ntl = NtlGradients::zeros(d, k);

    for epoch in 1..=cfg.epochs {
        let mut samples = Vec::new();
        for (row, positives) in &rows {
            for &(item, target) in positives {
                samples.push(Sample { row: *row, item, target });
            }
            if positives.len() < n_items {
                for _ in 0..positives.len() * cfg.zero_pair_ratio {
                    let item = loop {
                        let j = rng.random_range(0..n_items);
                        if positives.binary_search_by_key(&j, |p| p.0).is_err() {
                            break j;
                        }
                    };
                    samples.push(Sample { row: *row, item, target: 0.0 });
                }
            }
        }
        samples.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for batch in samples.chunks(cfg.batch_size) {
            g_user.fill(0.0);
            g_item.fill(0.0);
            g_ntl.clear();
            let scale = 1.0 / batch.len() as f64;
            for s in batch {
                let e_u = model.user_emb.row(s.row);
                let e_i = model.item_emb.row(s.item);
                let fwd = model.ntl.forward(e_u, e_i);
                let diff = fwd.out - s.target;
                epoch_loss += diff * diff;
                let (gu, gi) = (
                    &mut g_user[s.row * d..(s.row + 1) * d],
                    &mut g_item[s.item * d..(s.item + 1) * d],
                );
                model.ntl.backward(e_u, e_i, &fwd, 2.0 * diff * scale, &mut g_ntl, gu, gi);
            }
            let ntl = &mut model.ntl;
            opt.apply_update(&mut [
                ParamBlock::new("stage1.user_emb", model.user_emb.data_mut(), &g_user),
                ParamBlock::new("stage1.item_emb", model.item_emb.data_mut(), &g_item),
                ParamBlock::new("stage1.w1", ntl.w1.data_mut(), &g_ntl.w1),
                ParamBlock::new("stage1.w2", ntl.w2.data_mut(), &g_ntl.w2),
                ParamBlock::new("stage1.b", ntl.b.data_mut(), &g_ntl.b),
                ParamBlock::new("stage1.h", ntl.h.data_mut(), &g_ntl.h),
            ])
            .map_err(|e| Error::Training(format!("stage 1, epoch {epoch}: {e}")))?;
        }
        let loss = mean(epoch_loss, samples.len());
        if !loss.is_finite() {
            return Err(Error::Training(format!("stage 1 diverged at epoch {epoch}")));
        }
        model.loss_trace.push(loss);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::build_pif_index;

    #[test]
    fn every_basket_item_learns_pif_one() {
        let ds = BasketDataset::from_histories(vec![vec![vec![0]; 8]], 5).unwrap();
        let idx = build_pif_index(&ds);
        let cfg = TrainConfig {
            learning_rate: 0.01,
            epochs: 300,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let model = train_stage1(&ds, &idx, &cfg).unwrap();
        assert!(model.predict(0, 8, 0).unwrap() >= 0.9);
        assert!(model.predict(0, 8, 3).unwrap() < 0.2);
    }

    #[test]
    fn lookup_bounds() {
        let ds = BasketDataset::from_histories(vec![vec![vec![0], vec![1], vec![0]]], 2).unwrap();
        let idx = build_pif_index(&ds);
        let cfg = TrainConfig { epochs: 1, ..TrainConfig::default() };
        let m = train_stage1(&ds, &idx, &cfg).unwrap();
        assert!(m.predict(0, 2, 0).is_ok() && m.predict(0, 3, 1).is_ok());
        assert!(matches!(m.predict(0, 1, 0), Err(Error::Lookup(_))));
        assert!(matches!(m.predict(0, 4, 0), Err(Error::Lookup(_))));
        assert!(matches!(m.predict(1, 2, 0), Err(Error::Lookup(_))));
        assert!(matches!(m.predict(0, 2, 9), Err(Error::Lookup(_))));
        assert_eq!(m.loss_trace.len(), 1);
    }

    #[test]
    fn zero_ratio_visits_only_positive_pif() {
        let ds = BasketDataset::from_histories(vec![vec![vec![0, 1], vec![1], vec![2]]], 6).unwrap();
        let idx = build_pif_index(&ds);
        let offsets = [0];
        let rows = positive_rows(&idx, &offsets, &[3]);
        // t = 2: {0: 1, 1: 1}; t = 3: {0: 1/2, 1: 1}
        assert_eq!(rows[0], (0, vec![(0, 1.0), (1, 1.0)]));
        assert_eq!(rows[1], (1, vec![(0, 0.5), (1, 1.0)]));
    }

    #[test]
    fn deterministic_given_seed() {
        let ds = BasketDataset::from_histories(vec![vec![vec![0, 1], vec![1], vec![2, 3]]; 3], 6).unwrap();
        let idx = build_pif_index(&ds);
        let cfg = TrainConfig { epochs: 3, ..TrainConfig::default() };
        assert_eq!(train_stage1(&ds, &idx, &cfg).unwrap(), train_stage1(&ds, &idx, &cfg).unwrap());
    }
}
