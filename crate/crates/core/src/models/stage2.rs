use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{mean, Ranker, Stage1Model, TrainConfig};
use crate::dataset::{BasketDataset, ItemId, SplitView, UserId};
use crate::error::{Error, Result};
use crate::numerics::{neg_log_sigmoid, sigmoid, NtlGradients, NtlParams, OptimizerState, ParamBlock, Tensor};

/// Deconfounded ranker: a frozen [`Stage1Model`] supplies the PIF score `p`,
/// a second tensor layer over confounder embeddings supplies `c`, and the
/// final score is `ω·c + (1 − ω)·p`.
///
/// Confounder user embeddings are one vector per user, shared by all basket
/// indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Model {
    pub stage1: Stage1Model,
    pub user_emb: Tensor,
    pub item_emb: Tensor,
    pub ntl: NtlParams,
    pub omega: f64,
    /// `ω` at the start of each epoch; entry 0 is `omega_init`.
    pub omega_trace: Vec<f64>,
    /// Mean pairwise loss per epoch.
    pub loss_trace: Vec<f64>,
}

impl Stage2Model {
    fn user_row(&self, u: UserId) -> Result<&[f64]> {
        if u >= self.user_emb.rows() {
            return Err(Error::Lookup(format!("unknown user {u}")));
        }
        Ok(self.user_emb.row(u))
    }

    /// Confounder score `c_(u,i)`.
    pub fn confounder_score(&self, u: UserId, i: ItemId) -> Result<f64> {
        if i >= self.item_emb.rows() {
            return Err(Error::Lookup(format!("unknown item {i}")));
        }
        Ok(self.ntl.score(self.user_row(u)?, self.item_emb.row(i)))
    }

    pub fn confounder_row(&self, u: UserId) -> Result<Vec<f64>> {
        let e_u = self.user_row(u)?;
        Ok((0..self.item_emb.rows())
            .map(|i| self.ntl.score(e_u, self.item_emb.row(i)))
            .collect())
    }

    /// Ranker that mixes with `omega` instead of the trained weight.
    pub fn with_omega(&self, omega: f64) -> FenderRanker<'_> {
        FenderRanker {
            model: self,
            omega,
            name: format!("fender@omega={omega}"),
        }
    }

    pub fn ranker(&self) -> FenderRanker<'_> {
        FenderRanker {
            model: self,
            omega: self.omega,
            name: "fender".into(),
        }
    }
}

/// `ω·c + (1 − ω)·p` for `(u, t, i)`, with an optional inference-time `ω`.
pub fn fender_score(model: &Stage2Model, u: UserId, t: usize, i: ItemId, omega: Option<f64>) -> Result<f64> {
    let w = omega.unwrap_or(model.omega);
    let c = model.confounder_score(u, i)?;
    let p = model.stage1.predict(u, t, i)?;
    Ok(w * c + (1.0 - w) * p)
}

pub struct FenderRanker<'a> {
    model: &'a Stage2Model,
    omega: f64,
    name: String,
}

impl FenderRanker<'_> {
    pub fn omega(&self) -> f64 {
        self.omega
    }
}

impl Ranker for FenderRanker<'_> {
    fn name(&self) -> &str {
        &self.name
    }

    fn n_items(&self) -> usize {
        self.model.item_emb.rows()
    }

    fn score(&self, u: UserId, t: usize, i: ItemId) -> Result<f64> {
        fender_score(self.model, u, t, i, Some(self.omega))
    }

    fn scores(&self, u: UserId, t: usize) -> Result<Vec<f64>> {
        let p = self.model.stage1.predict_row(u, t)?;
        let c = self.model.confounder_row(u)?;
        let w = self.omega;
        Ok(c.iter().zip(&p).map(|(c, p)| w * c + (1.0 - w) * p).collect())
    }
}

/// Loss and gradients of one `(u, i, j)` pairwise term
/// `-ln σ(r̂_i − r̂_j)` with `r̂ = ω·NTL(e_u, e_item) + (1 − ω)·p`.
#[derive(Clone, Debug, PartialEq)]
pub struct TripletGradients {
    pub loss: f64,
    /// Layer parameters; `e_u` / `e_i` hold the user and positive-item gradients.
    pub ntl: NtlGradients,
    pub e_neg: Vec<f64>,
    pub omega: f64,
}

struct TripletInput<'a> {
    e_u: &'a [f64],
    e_pos: &'a [f64],
    e_neg: &'a [f64],
    p_pos: f64,
    p_neg: f64,
}

/// Adds `scale`-weighted gradients into the buffers; returns the loss and
/// the `ω` gradient.
#[allow(clippy::too_many_arguments)]
fn accumulate_triplet(
    ntl: &NtlParams,
    omega: f64,
    x: &TripletInput<'_>,
    scale: f64,
    g_ntl: &mut NtlGradients,
    g_user: &mut [f64],
    g_pos: &mut [f64],
    g_neg: &mut [f64],
) -> (f64, f64) {
    let f_pos = ntl.forward(x.e_u, x.e_pos);
    let f_neg = ntl.forward(x.e_u, x.e_neg);
    let (c_pos, c_neg) = (f_pos.out, f_neg.out);
    let delta = omega * (c_pos - c_neg) + (1.0 - omega) * (x.p_pos - x.p_neg);
    let loss = neg_log_sigmoid(delta);
    let d_delta = -sigmoid(-delta) * scale;
    let d_omega = d_delta * ((c_pos - x.p_pos) - (c_neg - x.p_neg));
    ntl.backward(x.e_u, x.e_pos, &f_pos, d_delta * omega, g_ntl, g_user, g_pos);
    ntl.backward(x.e_u, x.e_neg, &f_neg, -d_delta * omega, g_ntl, g_user, g_neg);
    (loss, d_omega)
}

/// One stage-2 pairwise term with its full gradient; `p_pos` / `p_neg` are
/// the frozen stage-1 scores.
pub fn stage2_triplet(
    ntl: &NtlParams,
    omega: f64,
    e_u: &[f64],
    e_pos: &[f64],
    e_neg: &[f64],
    p_pos: f64,
    p_neg: f64,
) -> Result<TripletGradients> {
    crate::numerics::ntl_forward(ntl, e_u, e_pos)?;
    crate::numerics::ntl_forward(ntl, e_u, e_neg)?;
    let d = ntl.d();
    let mut g = NtlGradients::zeros(d, ntl.k());
    let (mut gu, mut gp, mut gn) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let input = TripletInput { e_u, e_pos, e_neg, p_pos, p_neg };
    let (loss, d_omega) = accumulate_triplet(ntl, omega, &input, 1.0, &mut g, &mut gu, &mut gp, &mut gn);
    g.e_u = gu;
    g.e_i = gp;
    Ok(TripletGradients {
        loss,
        ntl: g,
        e_neg: gn,
        omega: d_omega,
    })
}

struct TrainRow {
    user: UserId,
    t: usize,
    /// Frozen stage-1 scores for every item.
    p: Vec<f64>,
}

/// Samples `negatives` items absent from `basket` (sorted).
fn sample_negatives(basket: &[ItemId], n_items: usize, count: usize, rng: &mut impl Rng, out: &mut Vec<ItemId>) {
    out.clear();
    for _ in 0..count {
        let j = loop {
            let j = rng.random_range(0..n_items);
            if basket.binary_search(&j).is_err() {
                break j;
            }
        };
        out.push(j);
    }
}

/// Trains confounder embeddings, the second tensor layer and `ω` on the
/// training baskets of `split`.
pub fn train_stage2(ds: &BasketDataset, split: &SplitView, stage1: &Stage1Model, cfg: &TrainConfig) -> Result<Stage2Model> {
    let horizons: Vec<usize> = split.users.iter().map(|s| s.train_end).collect();
    train_stage2_until(ds, &horizons, stage1, cfg)
}

/// Like [`train_stage2`] but trains on baskets `2..=horizons[u]` of each user.
///
/// Every epoch pairs each positive of each training basket with
/// `cfg.negatives` fresh uniform negatives from outside that basket. The
/// stage-1 model is cloned into the result and never updated.
pub fn train_stage2_until(
    ds: &BasketDataset,
    horizons: &[usize],
    stage1: &Stage1Model,
    cfg: &TrainConfig,
) -> Result<Stage2Model> {
    cfg.validate()?;
    if horizons.len() != ds.n_users() || stage1.n_users() != ds.n_users() || stage1.n_items() != ds.n_items() {
        return Err(Error::Precondition("stage-1 model and horizons must match the dataset".into()));
    }
    let (d, k) = (cfg.dim, cfg.ntl_slices);
    let n_items = ds.n_items();

    let mut rows = Vec::new();
    for user in ds.users() {
        let last = horizons[user.user_id].min(user.len());
        for t in 2..=last {
            let basket = user.basket(t);
            if basket.is_empty() {
                continue;
            }
            if basket.len() >= n_items {
                return Err(Error::Sampling(format!(
                    "user {} basket {t} contains every item; no negatives to sample",
                    user.user_id
                )));
            }
            rows.push(TrainRow {
                user: user.user_id,
                t,
                p: stage1.predict_row(user.user_id, t)?,
            });
        }
    }
    if rows.is_empty() {
        return Err(Error::Precondition("no stage-2 training baskets (need t >= 2)".into()));
    }

    let mut init_rng = cfg.rng(4);
    let bound = 1.0 / (d as f64).sqrt();
    let mut model = Stage2Model {
        stage1: stage1.clone(),
        user_emb: Tensor::uniform(&[ds.n_users(), d], bound, &mut init_rng),
        item_emb: Tensor::uniform(&[n_items, d], bound, &mut init_rng),
        ntl: NtlParams::init(d, k, &mut init_rng),
        omega: cfg.omega_init,
        omega_trace: Vec::with_capacity(cfg.epochs),
        loss_trace: Vec::with_capacity(cfg.epochs),
    };

    let mut rng = cfg.rng(2);
    let mut opt = OptimizerState::new(cfg.optimizer, cfg.step_size(), cfg.lambda_r)?;
    let mut g_user = vec![0.0; model.user_emb.len()];
    let mut g_item = vec![0.0; model.item_emb.len()];
    let mut g_ntl = NtlGradients::zeros(d, k);
    let mut g_omega = [0.0];
    let mut negs = Vec::with_capacity(cfg.negatives);
    let mut scratch_pos = vec![0.0; d];
    let mut scratch_neg = vec![0.0; d];
    let mut scratch_user = vec![0.0; d];

    for epoch in 1..=cfg.epochs {
        model.omega_trace.push(model.omega);
        // (row, positive, negative)
        let mut triples: Vec<(u32, u32, u32)> = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            let basket = ds.users()[row.user].basket(row.t);
            for &i in basket {
                sample_negatives(basket, n_items, cfg.negatives, &mut rng, &mut negs);
                triples.extend(negs.iter().map(|&j| (r as u32, i as u32, j as u32)));
            }
        }
        triples.shuffle(&mut rng);

        let mut epoch_loss = 0.0;
        for batch in triples.chunks(cfg.batch_size) {
            g_user.fill(0.0);
            g_item.fill(0.0);
            g_ntl.clear();
            g_omega[0] = 0.0;
            let scale = 1.0 / batch.len() as f64;
            for &(r, i, j) in batch {
                let row = &rows[r as usize];
                let (u, i, j) = (row.user, i as usize, j as usize);
                let input = TripletInput {
                    e_u: model.user_emb.row(u),
                    e_pos: model.item_emb.row(i),
                    e_neg: model.item_emb.row(j),
                    p_pos: row.p[i],
                    p_neg: row.p[j],
                };
                scratch_user.fill(0.0);
                scratch_pos.fill(0.0);
                scratch_neg.fill(0.0);
                let (loss, d_omega) = accumulate_triplet(
                    &model.ntl,
                    model.omega,
                    &input,
                    scale,
                    &mut g_ntl,
                    &mut scratch_user,
                    &mut scratch_pos,
                    &mut scratch_neg,
                );
                epoch_loss += loss;
                g_omega[0] += d_omega;
                add_row(&mut g_user, u, d, &scratch_user);
                add_row(&mut g_item, i, d, &scratch_pos);
                add_row(&mut g_item, j, d, &scratch_neg);
            }
            if cfg.freeze_omega {
                g_omega[0] = 0.0;
            }
            let mut omega = [model.omega];
            let ntl = &mut model.ntl;
            opt.apply_update(&mut [
                ParamBlock::new("stage2.user_emb", model.user_emb.data_mut(), &g_user),
                ParamBlock::new("stage2.item_emb", model.item_emb.data_mut(), &g_item),
                ParamBlock::new("stage2.w1", ntl.w1.data_mut(), &g_ntl.w1),
                ParamBlock::new("stage2.w2", ntl.w2.data_mut(), &g_ntl.w2),
                ParamBlock::new("stage2.b", ntl.b.data_mut(), &g_ntl.b),
                ParamBlock::new("stage2.h", ntl.h.data_mut(), &g_ntl.h),
                ParamBlock::new("stage2.omega", &mut omega, &g_omega),
            ])
            .map_err(|e| Error::Training(format!("stage 2, epoch {epoch}: {e}")))?;
            if !cfg.freeze_omega {
                model.omega = omega[0];
            }
        }
        let loss = mean(epoch_loss, triples.len());
        if !loss.is_finite() || !model.omega.is_finite() {
            return Err(Error::Training(format!("stage 2 diverged at epoch {epoch}")));
        }
        model.loss_trace.push(loss);
    }
    Ok(model)
}

fn add_row(buf: &mut [f64], row: usize, d: usize, g: &[f64]) {
    for (a, b) in buf[row * d..(row + 1) * d].iter_mut().zip(g) {
        *a += b;
    }
}
