//! Confounded synthetic basket data. Hidden user and item traits drive both
//! how often an item was bought before and whether it is bought next, so
//! purchase frequency is a confounded signal by construction.

use rand::seq::index::sample_weighted;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::dataset::{repeat_percentage, BasketDataset, ItemId, UserId};
use crate::error::{Error, Result};
use crate::models::Ranker;
use crate::numerics::{dot, sigmoid};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub baskets_per_user: usize,
    /// Dimension of the hidden user and item traits.
    pub latent_dim: usize,
    pub perishable_frac: f64,
    /// Poisson mean of the basket size.
    pub basket_size: f64,
    /// Logit boost per unit of past purchase frequency.
    pub pif_effect: f64,
    pub tau_min: usize,
    pub tau_max: usize,
    /// Multiplier on the latent inner product.
    pub affinity_scale: f64,
    /// Offset added to every purchase logit.
    pub affinity_bias: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 200,
            n_items: 300,
            baskets_per_user: 10,
            latent_dim: 8,
            perishable_frac: 0.7,
            basket_size: 8.5,
            pif_effect: 9.0,
            tau_min: 3,
            tau_max: 6,
            affinity_scale: 6.0,
            affinity_bias: -4.5,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n_users == 0 || self.n_items == 0 || self.baskets_per_user == 0 || self.latent_dim == 0 {
            return bad("synthetic counts must all be >= 1");
        }
        if !(0.0..=1.0).contains(&self.perishable_frac) {
            return bad("perishable_frac must lie in [0, 1]");
        }
        if !(self.basket_size > 0.0) || !self.basket_size.is_finite() {
            return bad("basket_size must be positive");
        }
        if self.tau_min == 0 || self.tau_min > self.tau_max {
            return bad("need 1 <= tau_min <= tau_max");
        }
        if ![self.pif_effect, self.affinity_scale, self.affinity_bias].iter().all(|v| v.is_finite()) {
            return bad("generator coefficients must be finite");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemType {
    Perishable,
    Durable,
}

/// The hidden variables behind a generated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub user_latent: Vec<Vec<f64>>,
    pub item_latent: Vec<Vec<f64>>,
    pub item_type: Vec<ItemType>,
    /// Replenishment period; 0 for perishables.
    pub period: Vec<usize>,
    pub affinity_scale: f64,
    pub affinity_bias: f64,
}

impl GroundTruth {
    /// Base affinity `σ(z_u·z_i)`.
    pub fn affinity(&self, u: UserId, i: ItemId) -> f64 {
        sigmoid(dot(&self.user_latent[u], &self.item_latent[i]))
    }

    fn logit(&self, u: UserId, i: ItemId) -> f64 {
        self.affinity_scale * dot(&self.user_latent[u], &self.item_latent[i]) + self.affinity_bias
    }
}

/// Step-by-step generator. Each user draws from their own random stream, so
/// what one user buys never shifts another user's draws.
#[derive(Clone, Debug)]
pub struct Simulator {
    cfg: SynthConfig,
    truth: GroundTruth,
    histories: Vec<Vec<Vec<ItemId>>>,
    counts: Vec<Vec<u32>>,
    last_bought: Vec<Vec<Option<usize>>>,
    rngs: Vec<ChaCha8Rng>,
    size_dist: Poisson<f64>,
}

impl Simulator {
    pub fn new(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, 1.0 / (cfg.latent_dim as f64).sqrt()).expect("valid std");
        let mut latent = |n: usize| -> Vec<Vec<f64>> {
            (0..n).map(|_| (0..cfg.latent_dim).map(|_| normal.sample(&mut rng)).collect()).collect()
        };
        let user_latent = latent(cfg.n_users);
        let item_latent = latent(cfg.n_items);
        use rand::Rng;
        let mut item_type = Vec::with_capacity(cfg.n_items);
        let mut period = Vec::with_capacity(cfg.n_items);
        for _ in 0..cfg.n_items {
            if rng.random::<f64>() < cfg.perishable_frac {
                item_type.push(ItemType::Perishable);
                period.push(0);
            } else {
                item_type.push(ItemType::Durable);
                period.push(rng.random_range(cfg.tau_min..=cfg.tau_max));
            }
        }
        let rngs = (0..cfg.n_users)
            .map(|u| {
                let mut r = ChaCha8Rng::seed_from_u64(cfg.seed);
                r.set_stream(u as u64 + 1);
                r
            })
            .collect();
        Ok(Simulator {
            truth: GroundTruth {
                user_latent,
                item_latent,
                item_type,
                period,
                affinity_scale: cfg.affinity_scale,
                affinity_bias: cfg.affinity_bias,
            },
            histories: vec![Vec::new(); cfg.n_users],
            counts: vec![vec![0; cfg.n_items]; cfg.n_users],
            last_bought: vec![vec![None; cfg.n_items]; cfg.n_users],
            rngs,
            size_dist: Poisson::new(cfg.basket_size).map_err(|e| Error::Config(e.to_string()))?,
            cfg: cfg.clone(),
        })
    }

    pub fn truth(&self) -> &GroundTruth {
        &self.truth
    }

    pub fn histories(&self) -> &[Vec<Vec<ItemId>>] {
        &self.histories
    }

    /// Purchase propensity of every item for user `u`'s next basket, with
    /// `boost` added to the logit of each item in `exposed`.
    pub fn propensities(&self, u: UserId, exposed: &[ItemId], boost: f64) -> Vec<f64> {
        let t = self.histories[u].len() + 1;
        let mut logits: Vec<f64> = (0..self.cfg.n_items)
            .map(|i| {
                let pif = if t >= 2 {
                    self.counts[u][i] as f64 / (t - 1) as f64
                } else {
                    0.0
                };
                self.truth.logit(u, i) + self.cfg.pif_effect * pif
            })
            .collect();
        for &i in exposed {
            logits[i] += boost;
        }
        logits
            .into_iter()
            .enumerate()
            .map(|(i, l)| {
                let gated = self.truth.item_type[i] == ItemType::Durable
                    && self.last_bought[u][i].is_some_and(|s| t - s < self.truth.period[i]);
                if gated {
                    0.0
                } else {
                    sigmoid(l)
                }
            })
            .collect()
    }

    /// Appends one basket to user `u`.
    pub fn step_user(&mut self, u: UserId, exposed: &[ItemId], boost: f64) -> Result<()> {
        let weights = self.propensities(u, exposed, boost);
        let positive = weights.iter().filter(|&&w| w > 0.0).count();
        let rng = &mut self.rngs[u];
        let drawn = self.size_dist.sample(rng) as usize;
        let size = drawn.max(1).min(positive);
        let mut basket: Vec<ItemId> = if size == 0 {
            Vec::new()
        } else {
            sample_weighted(rng, weights.len(), |i| weights[i], size)
                .map_err(|e| Error::Sampling(e.to_string()))?
                .into_iter()
                .collect()
        };
        basket.sort_unstable();
        let t = self.histories[u].len() + 1;
        for &i in &basket {
            self.counts[u][i] += 1;
            self.last_bought[u][i] = Some(t);
        }
        self.histories[u].push(basket);
        Ok(())
    }

    pub fn step(&mut self) -> Result<()> {
        (0..self.cfg.n_users).try_for_each(|u| self.step_user(u, &[], 0.0))
    }

    pub fn dataset(&self) -> Result<BasketDataset> {
        BasketDataset::from_histories(self.histories.clone(), self.cfg.n_items)
    }
}

/// Draws `baskets_per_user` baskets for every user.
pub fn generate(cfg: &SynthConfig) -> Result<(BasketDataset, GroundTruth)> {
    let mut sim = Simulator::new(cfg)?;
    for _ in 0..cfg.baskets_per_user {
        sim.step()?;
    }
    Ok((sim.dataset()?, sim.truth.clone()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    pub rounds: usize,
    /// Logit boost applied to exposed items.
    pub exposure_boost: f64,
    /// Items exposed to each user per round.
    pub k_expose: usize,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            rounds: 5,
            exposure_boost: 2.0,
            k_expose: 10,
        }
    }
}

/// Runs the recommend-then-purchase loop on top of a generated dataset.
/// Returns, for each round, the mean fraction of the new basket's items the
/// user had bought before.
pub fn feedback_loop_sim<F>(cfg: &SynthConfig, loop_cfg: &LoopConfig, mut train: F) -> Result<Vec<f64>>
where
    F: FnMut(&BasketDataset) -> Result<Box<dyn Ranker>>,
{
    if loop_cfg.rounds == 0 {
        return Err(Error::Config("rounds must be >= 1".into()));
    }
    let mut sim = Simulator::new(cfg)?;
    for _ in 0..cfg.baskets_per_user {
        sim.step()?;
    }
    let mut curve = Vec::with_capacity(loop_cfg.rounds);
    for _ in 0..loop_cfg.rounds {
        let ds = sim.dataset()?;
        let ranker = train(&ds)?;
        for u in 0..cfg.n_users {
            let t = sim.histories[u].len() + 1;
            let exposed = if loop_cfg.exposure_boost != 0.0 && loop_cfg.k_expose > 0 {
                ranker.recommend(u, t, loop_cfg.k_expose)?
            } else {
                Vec::new()
            };
            sim.step_user(u, &exposed, loop_cfg.exposure_boost)?;
        }
        let ds = sim.dataset()?;
        let last = ds.max_baskets();
        curve.push(repeat_percentage(&ds, None)?.at(last));
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::pif_ranker;
    use crate::dataset::PifIndex;

    fn small() -> SynthConfig {
        SynthConfig {
            n_users: 30,
            n_items: 60,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic_and_well_formed() {
        let (a, ta) = generate(&small()).unwrap();
        let (b, tb) = generate(&small()).unwrap();
        assert_eq!(a.users(), b.users());
        assert_eq!(ta, tb);
        assert_eq!(a.n_users(), 30);
        for h in a.users() {
            assert_eq!(h.len(), 10);
            for bk in h.baskets() {
                assert!(!bk.is_empty());
                assert!(bk.windows(2).all(|w| w[0] < w[1]));
            }
        }
        for (i, p) in ta.period.iter().enumerate() {
            match ta.item_type[i] {
                ItemType::Durable => assert!((3..=6).contains(p)),
                ItemType::Perishable => assert_eq!(*p, 0),
            }
        }
    }

    #[test]
    fn no_pif_effect_gives_time_invariant_propensities() {
        let cfg = SynthConfig {
            pif_effect: 0.0,
            perishable_frac: 1.0,
            ..small()
        };
        let mut sim = Simulator::new(&cfg).unwrap();
        let before = sim.propensities(3, &[], 0.0);
        for _ in 0..4 {
            sim.step().unwrap();
        }
        assert_eq!(before, sim.propensities(3, &[], 0.0));
    }

    #[test]
    fn durables_respect_their_period() {
        let cfg = SynthConfig {
            perishable_frac: 0.0,
            tau_min: 3,
            tau_max: 3,
            n_items: 80,
            ..small()
        };
        let (ds, _) = generate(&cfg).unwrap();
        for h in ds.users() {
            for i in 0..cfg.n_items {
                let pos: Vec<usize> = (1..=h.len()).filter(|&t| h.basket(t).contains(&i)).collect();
                assert!(pos.windows(2).all(|w| w[1] - w[0] >= 3), "item {i} at {pos:?}");
            }
        }
    }

    #[test]
    fn reference_basket_size_near_target() {
        let (ds, _) = generate(&SynthConfig::default()).unwrap();
        let avg = ds.meta().avg_basket_size;
        assert!((avg - 8.5).abs() <= 0.15 * 8.5, "avg basket size {avg}");
    }

    #[test]
    fn frequency_is_confounded_by_affinity() {
        let (ds, truth) = generate(&SynthConfig::default()).unwrap();
        let idx = PifIndex::build(&ds);
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for u in 0..ds.n_users() {
            let t = ds.users()[u].len();
            for i in 0..ds.n_items() {
                if truth.item_type[i] == ItemType::Perishable {
                    xs.push(idx.pif(u, i, t).unwrap());
                    ys.push(truth.affinity(u, i));
                }
            }
        }
        let mx = xs.iter().sum::<f64>() / xs.len() as f64;
        let my = ys.iter().sum::<f64>() / ys.len() as f64;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        assert!(cov > 0.0);
    }

    #[test]
    fn oversized_basket_is_clipped() {
        let cfg = SynthConfig {
            n_items: 3,
            basket_size: 50.0,
            perishable_frac: 1.0,
            ..small()
        };
        let (ds, _) = generate(&cfg).unwrap();
        assert!(ds.users().iter().flat_map(|h| h.baskets()).all(|b| b.len() == 3));
    }

    #[test]
    fn zero_boost_loop_matches_direct_generation() {
        let cfg = small();
        let lc = LoopConfig {
            rounds: 3,
            exposure_boost: 0.0,
            k_expose: 10,
        };
        let curve = feedback_loop_sim(&cfg, &lc, |ds| Ok(Box::new(pif_ranker(&PifIndex::build(ds))))).unwrap();
        let longer = SynthConfig {
            baskets_per_user: 13,
            ..cfg
        };
        let (ds, _) = generate(&longer).unwrap();
        let direct = repeat_percentage(&ds, None).unwrap();
        assert_eq!(curve, direct.values()[10..13].to_vec());
    }

    #[test]
    fn loop_is_deterministic_and_rejects_zero_rounds() {
        let cfg = small();
        let lc = LoopConfig {
            rounds: 2,
            ..LoopConfig::default()
        };
        let f = |ds: &BasketDataset| -> Result<Box<dyn Ranker>> { Ok(Box::new(pif_ranker(&PifIndex::build(ds)))) };
        assert_eq!(feedback_loop_sim(&cfg, &lc, f).unwrap(), feedback_loop_sim(&cfg, &lc, f).unwrap());
        let zero = LoopConfig { rounds: 0, ..lc };
        assert!(feedback_loop_sim(&cfg, &zero, f).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(generate(&SynthConfig { perishable_frac: 1.5, ..small() }).is_err());
        assert!(generate(&SynthConfig { tau_min: 5, tau_max: 2, ..small() }).is_err());
        assert!(generate(&SynthConfig { basket_size: 0.0, ..small() }).is_err());
    }
}
