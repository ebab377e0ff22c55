//! The two-stage deconfounder and the frequency / matrix-factorization
//! baselines, unified behind [`Ranker`].

mod baselines;
mod checkpoint;
mod stage1;
mod stage2;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ItemId, UserId};
use crate::error::{Error, Result};
use crate::numerics::OptimizerMode;

pub use baselines::{pif_ranker, train_bprmf, train_propensity_mf, ips_weight, MfKind, MfModel, PifRanker};
pub use checkpoint::{Checkpoint, ModelParams};
pub use stage1::{train_stage1, Stage1Model};
pub use stage2::{fender_score, stage2_triplet, train_stage2, train_stage2_until, FenderRanker, Stage2Model, TripletGradients};

/// Hyperparameters shared by every trainable model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Embedding dimension `d`.
    pub dim: usize,
    /// Tensor slices of each neural tensor layer.
    pub ntl_slices: usize,
    /// Base learning rate; see [`TrainConfig::step_size`].
    pub learning_rate: f64,
    /// Multiply the base rate by `sqrt(batch_size)` when stepping.
    pub scale_lr_by_batch: bool,
    pub epochs: usize,
    pub omega_init: f64,
    /// Keep `ω` at `omega_init` during stage-2 training.
    pub freeze_omega: bool,
    pub lambda_p: f64,
    pub lambda_r: f64,
    /// Sampled zero-PIF pairs per positive-PIF pair in stage 1.
    pub zero_pair_ratio: usize,
    /// Sampled negatives per positive in pairwise training.
    pub negatives: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerMode,
    /// Propensity floor for the inverse-propensity baseline.
    pub propensity_floor: f64,
    /// Weight cap for the inverse-propensity baseline.
    pub propensity_cap: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 8,
            ntl_slices: 4,
            learning_rate: 1e-4,
            scale_lr_by_batch: true,
            epochs: 100,
            omega_init: 0.1,
            freeze_omega: false,
            lambda_p: 1e-4,
            lambda_r: 1e-4,
            zero_pair_ratio: 3,
            negatives: 4,
            batch_size: 256,
            seed: 7,
            optimizer: OptimizerMode::Adam,
            propensity_floor: 0.05,
            propensity_cap: 20.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.dim == 0 || self.ntl_slices == 0 {
            return bad("dim and ntl_slices must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.negatives == 0 {
            return bad("negatives must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate > 0.0) || !(self.lambda_p >= 0.0) || !(self.lambda_r >= 0.0) {
            return bad("learning_rate must be > 0 and weight decays >= 0");
        }
        if !self.omega_init.is_finite() {
            return bad("omega_init must be finite");
        }
        if !(self.propensity_floor > 0.0) || !(self.propensity_cap >= 1.0) {
            return bad("propensity_floor must be > 0 and propensity_cap >= 1");
        }
        Ok(())
    }

    /// Rate handed to the optimizer. The base rate is quoted per example;
    /// averaging gradients over a minibatch shrinks their noise by
    /// `sqrt(batch_size)`, so the step grows by the same factor.
    pub fn step_size(&self) -> f64 {
        if self.scale_lr_by_batch {
            self.learning_rate * (self.batch_size as f64).sqrt()
        } else {
            self.learning_rate
        }
    }

    /// Seeded generator for one role. Streams: 0 stage-1 init, 1 stage-1
    /// sampling, 2 stage-2 sampling, 3 matrix-factorization sampling,
    /// 4 stage-2 init, 5 matrix-factorization init.
    pub(crate) fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Anything that scores every item for a user at basket index `t`.
pub trait Ranker {
    fn name(&self) -> &str;

    fn n_items(&self) -> usize;

    fn score(&self, u: UserId, t: usize, i: ItemId) -> Result<f64>;

    /// Scores for the full vocabulary.
    fn scores(&self, u: UserId, t: usize) -> Result<Vec<f64>> {
        (0..self.n_items()).map(|i| self.score(u, t, i)).collect()
    }

    /// Top `min(k, n_items)` items by descending score, ties by ascending id.
    fn recommend(&self, u: UserId, t: usize, k: usize) -> Result<Vec<ItemId>> {
        Ok(top_k(&self.scores(u, t)?, k))
    }
}

pub fn recommend(model: &dyn Ranker, u: UserId, t: usize, k: usize) -> Result<Vec<ItemId>> {
    model.recommend(u, t, k)
}

/// Indices of the `k` largest scores, ties broken by ascending index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<ItemId> {
    let mut order: Vec<ItemId> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

/// Mean of `values`, or 0 for an empty slice.
pub(crate) fn mean(sum: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}
