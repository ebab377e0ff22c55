//! Experiment driver behind the `fender` binary: resolves the run
//! configuration and implements every subcommand as a library call, so the
//! same code paths are reachable from tests.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    insert_noise_item, load_dataset, repeat_percentage, split, BasketDataset, ItemId, PifIndex, Predictions,
    DEFAULT_MIN_BASKETS,
};
use crate::error::{Error, Result};
use crate::metrics::{
    average_inserted_rank, distinct_item_count, evaluate_lists, EvalReport, FrequencyScope, ModelRow, TopFrequentSet,
    DEFAULT_K,
};
use crate::models::{
    pif_ranker, train_bprmf, train_propensity_mf, train_stage1, train_stage2, train_stage2_until, Checkpoint,
    ModelParams, Ranker, Stage1Model, TrainConfig,
};
use crate::synthgen::{feedback_loop_sim, generate, LoopConfig, SynthConfig};

pub const DEFAULT_SEED: u64 = 7;
pub const SEED_ENV: &str = "FENDER_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Pif,
    Bprmf,
    Ipsmf,
    Fender,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Pif, ModelKind::Bprmf, ModelKind::Ipsmf, ModelKind::Fender];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Pif => "pif",
            ModelKind::Bprmf => "bprmf",
            ModelKind::Ipsmf => "ipsmf",
            ModelKind::Fender => "fender",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|m| m.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown model `{s}` (expected pif, bprmf, ipsmf or fender)")))
    }
}

/// Parses a comma-separated model list.
pub fn parse_models(s: &str) -> Result<Vec<ModelKind>> {
    let models: Vec<ModelKind> = s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect::<Result<_>>()?;
    if models.is_empty() {
        return Err(Error::Config("model list is empty".into()));
    }
    Ok(models)
}

/// Inference-time mixing weight for FENDER.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum OmegaChoice {
    Trained,
    Fixed(f64),
}

impl FromStr for OmegaChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "trained" {
            return Ok(OmegaChoice::Trained);
        }
        match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(OmegaChoice::Fixed(v)),
            _ => Err(Error::Config(format!("bad omega `{s}` (expected a number or `trained`)"))),
        }
    }
}

/// Parses `trained`, a number, or a comma-separated sweep such as `0,trained,1`.
pub fn parse_omegas(s: &str) -> Result<Vec<OmegaChoice>> {
    s.split(',').map(str::parse).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CaseStudyConfig {
    /// Dense user id.
    pub user: usize,
    /// Baskets used for training before the predicted ones.
    pub warmup: usize,
    /// Number of predicted baskets.
    pub horizon: usize,
    pub list_len: usize,
}

impl Default for CaseStudyConfig {
    fn default() -> Self {
        CaseStudyConfig {
            user: 0,
            warmup: 5,
            horizon: 5,
            list_len: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Transaction CSV. Mutually exclusive with `synth`.
    pub dataset: Option<PathBuf>,
    pub synth: Option<SynthConfig>,
    pub min_baskets: usize,
    pub train: TrainConfig,
    pub k: usize,
    pub models: Vec<ModelKind>,
    pub out: PathBuf,
    pub seed: Option<u64>,
    /// Inference `ω` for FENDER, e.g. `trained` or `0,trained,1`.
    pub omega: String,
    pub frequency_scope: FrequencyScope,
    /// Model whose repeat curve `pilot` compares with the data.
    pub pilot_model: ModelKind,
    pub casestudy: CaseStudyConfig,
    pub feedback: LoopConfig,
    /// Model retrained each round of the feedback loop.
    pub loop_model: ModelKind,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: None,
            synth: None,
            min_baskets: DEFAULT_MIN_BASKETS,
            train: TrainConfig::default(),
            k: DEFAULT_K,
            models: ModelKind::ALL.to_vec(),
            out: PathBuf::from("out"),
            seed: None,
            omega: "trained".into(),
            frequency_scope: FrequencyScope::Personal,
            pilot_model: ModelKind::Pif,
            casestudy: CaseStudyConfig::default(),
            feedback: LoopConfig::default(),
            loop_model: ModelKind::Pif,
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub k: Option<usize>,
    pub omega: Option<String>,
    pub models: Option<Vec<ModelKind>>,
}

impl RunConfig {
    /// Reads an optional JSON config, applies overrides and resolves the
    /// seed: flag, then config, then `FENDER_SEED`, then the default.
    pub fn resolve(config: Option<&Path>, overrides: Overrides, env_seed: Option<&str>) -> Result<Self> {
        let mut cfg = match config {
            Some(path) => {
                let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&body).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        let env_seed = env_seed
            .map(|s| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| Error::Config(format!("{SEED_ENV}=`{s}` is not an unsigned integer")))
            })
            .transpose()?;
        let seed = overrides.seed.or(cfg.seed).or(env_seed).unwrap_or(DEFAULT_SEED);
        cfg.seed = Some(seed);
        cfg.train.seed = seed;
        if cfg.dataset.is_none() && cfg.synth.is_none() {
            cfg.synth = Some(SynthConfig::default());
        }
        if let Some(s) = cfg.synth.as_mut() {
            s.seed = seed;
        }
        if let Some(out) = overrides.out {
            cfg.out = out;
        }
        if let Some(k) = overrides.k {
            cfg.k = k;
        }
        if let Some(omega) = overrides.omega {
            cfg.omega = omega;
        }
        if let Some(models) = overrides.models {
            cfg.models = models;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.is_some() == self.synth.is_some() {
            return Err(Error::Config("set exactly one of `dataset` and `synth`".into()));
        }
        if let Some(s) = &self.synth {
            s.validate()?;
        }
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if self.models.is_empty() {
            return Err(Error::Config("model list is empty".into()));
        }
        parse_omegas(&self.omega)?;
        self.train.validate()
    }

    fn prepare_out(&self) -> Result<()> {
        fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
        let path = self.out.join("run_config.json");
        write_file(&path, &serde_json::to_string_pretty(self)?)
    }

    /// The configured dataset, loaded or generated.
    pub fn dataset(&self) -> Result<BasketDataset> {
        match (&self.dataset, &self.synth) {
            (Some(path), _) => load_dataset(path, self.min_baskets),
            (None, Some(s)) => Ok(generate(s)?.0),
            (None, None) => Err(Error::Config("no dataset configured".into())),
        }
    }
}

fn write_file(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn write_series(path: &Path, header: &str, values: &[f64]) -> Result<()> {
    let mut body = format!("{header}\n");
    for (i, v) in values.iter().enumerate() {
        body.push_str(&format!("{},{v}\n", i + 1));
    }
    write_file(path, &body)
}

/// `gen`: writes `dataset.csv`, `ground_truth.json` and the id maps.
pub fn cmd_gen(cfg: &RunConfig) -> Result<BasketDataset> {
    let synth = cfg
        .synth
        .as_ref()
        .ok_or_else(|| Error::Config("gen needs a `synth` block, not a dataset path".into()))?;
    cfg.prepare_out()?;
    let (ds, truth) = generate(synth)?;
    ds.write_csv(&cfg.out.join("dataset.csv"))?;
    ds.write_id_maps(&cfg.out)?;
    write_file(&cfg.out.join("ground_truth.json"), &serde_json::to_string(&truth)?)?;
    Ok(ds)
}

/// Trains one model with the standard split: baselines and FENDER's
/// ranking stage see baskets `1..=T-2`.
pub fn train_model(kind: ModelKind, ds: &BasketDataset, train: &TrainConfig) -> Result<Checkpoint> {
    let params = match kind {
        ModelKind::Pif => ModelParams::Pif,
        ModelKind::Bprmf => ModelParams::Bprmf(train_bprmf(ds, &split(ds)?, train)?),
        ModelKind::Ipsmf => {
            let idx = PifIndex::build(ds);
            ModelParams::Ipsmf(train_propensity_mf(ds, &idx, &split(ds)?, train)?)
        }
        ModelKind::Fender => {
            let idx = PifIndex::build(ds);
            let stage1 = train_stage1(ds, &idx, train)?;
            ModelParams::Fender(Box::new(train_stage2(ds, &split(ds)?, &stage1, train)?))
        }
    };
    Ok(Checkpoint {
        model: kind.name().into(),
        config: train.clone(),
        params,
    })
}

/// A scorer rebuilt from a checkpoint. Frequency ranking needs the data.
pub fn ranker_from<'a>(ck: &'a Checkpoint, ds: &BasketDataset, omega: OmegaChoice) -> Result<Box<dyn Ranker + 'a>> {
    Ok(match &ck.params {
        ModelParams::Pif => Box::new(pif_ranker(&PifIndex::build(ds))),
        ModelParams::Bprmf(m) | ModelParams::Ipsmf(m) => Box::new(m.clone()),
        ModelParams::Fender(m) => match omega {
            OmegaChoice::Trained => Box::new(m.ranker()),
            OmegaChoice::Fixed(w) => Box::new(m.with_omega(w)),
        },
    })
}

fn checkpoint_path(out: &Path, kind: ModelKind) -> PathBuf {
    out.join(format!("{kind}.json"))
}

/// `train`: writes `<model>.json` per model plus loss traces and, for
/// FENDER, `omega_trace.csv`.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<Checkpoint>> {
    let ds = cfg.dataset()?;
    cfg.prepare_out()?;
    let mut out = Vec::new();
    for &kind in &cfg.models {
        let ck = train_model(kind, &ds, &cfg.train)?;
        ck.save(&checkpoint_path(&cfg.out, kind))?;
        match &ck.params {
            ModelParams::Pif => {}
            ModelParams::Bprmf(m) | ModelParams::Ipsmf(m) => {
                write_series(&cfg.out.join(format!("loss_{kind}.csv")), "epoch,loss", &m.loss_trace)?;
            }
            ModelParams::Fender(m) => {
                write_series(&cfg.out.join("loss_stage1.csv"), "epoch,loss", &m.stage1.loss_trace)?;
                write_series(&cfg.out.join("loss_fender.csv"), "epoch,loss", &m.loss_trace)?;
                write_series(&cfg.out.join("omega_trace.csv"), "epoch,omega", &m.omega_trace)?;
            }
        }
        out.push(ck);
    }
    Ok(out)
}

/// Top-`k` lists at each user's last basket plus the matching truth.
fn test_lists(r: &dyn Ranker, ds: &BasketDataset, k: usize) -> Result<(Vec<Vec<ItemId>>, Vec<Vec<ItemId>>)> {
    let mut recs = Vec::with_capacity(ds.n_users());
    let mut truth = Vec::with_capacity(ds.n_users());
    for h in ds.users() {
        let t = h.len();
        recs.push(r.recommend(h.user_id, t, k)?);
        truth.push(h.basket(t).to_vec());
    }
    Ok((recs, truth))
}

/// Frequency reference sets built from everything before each user's test basket.
pub fn test_topfreq(ds: &BasketDataset, k_freq: usize, scope: FrequencyScope) -> Result<TopFrequentSet> {
    let ends: Vec<usize> = ds.users().iter().map(|h| h.len() - 1).collect();
    TopFrequentSet::build(ds, &ends, k_freq, scope)
}

/// Scores checkpoints on each user's last basket. FENDER yields one row per
/// entry of `omegas`.
pub fn evaluate(
    ds: &BasketDataset,
    checkpoints: &[Checkpoint],
    k: usize,
    omegas: &[OmegaChoice],
    scope: FrequencyScope,
) -> Result<EvalReport> {
    let topfreq = test_topfreq(ds, DEFAULT_K, scope)?;
    let mut report = EvalReport::default();
    for ck in checkpoints {
        let choices: &[OmegaChoice] = match ck.params {
            ModelParams::Fender(_) => omegas,
            _ => &[OmegaChoice::Trained],
        };
        for &omega in choices {
            let r = ranker_from(ck, ds, omega)?;
            let name = match omega {
                OmegaChoice::Fixed(w) => format!("{}@omega={w}", ck.model),
                OmegaChoice::Trained => ck.model.clone(),
            };
            let (recs, truth) = test_lists(r.as_ref(), ds, k)?;
            report.rows.push(evaluate_lists(&name, &recs, &truth, &topfreq, k)?);
        }
        if let ModelParams::Fender(m) = &ck.params {
            report.curves.insert("omega_trace".into(), m.omega_trace.clone());
        }
    }
    Ok(report)
}

/// `eval`: reads each listed checkpoint from the output directory and
/// writes `report.csv` / `report.json`.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    let ds = cfg.dataset()?;
    cfg.prepare_out()?;
    let mut checkpoints = Vec::new();
    for &kind in &cfg.models {
        let path = checkpoint_path(&cfg.out, kind);
        if !path.exists() {
            return Err(Error::Config(format!(
                "no checkpoint for model `{kind}` at {} (run `train` first)",
                path.display()
            )));
        }
        checkpoints.push(Checkpoint::load(&path)?);
    }
    let report = evaluate(&ds, &checkpoints, cfg.k, &parse_omegas(&cfg.omega)?, cfg.frequency_scope)?;
    report.write(&cfg.out, "report")?;
    Ok(report)
}

/// Mean rank of each user's inserted item in the full ranking at the test basket.
pub fn inserted_rank(r: &dyn Ranker, ds: &BasketDataset, inserted: &[ItemId]) -> Result<f64> {
    let rankings: Vec<Vec<ItemId>> = ds
        .users()
        .iter()
        .map(|h| r.recommend(h.user_id, h.len(), ds.n_items()))
        .collect::<Result<_>>()?;
    average_inserted_rank(&rankings, inserted)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustRow {
    pub model: String,
    pub avg_inserted_rank: f64,
}

/// `robust`: inserts one unrelated item into every basket of each user,
/// retrains every model on the noised data and writes `robust.csv`.
pub fn cmd_robust(cfg: &RunConfig) -> Result<Vec<RobustRow>> {
    let ds = cfg.dataset()?;
    cfg.prepare_out()?;
    let (noised, inserted) = insert_noise_item(&ds, cfg.train.seed)?;
    let mut rows = Vec::new();
    let mut body = String::from("model,avg_inserted_rank\n");
    for &kind in &cfg.models {
        let ck = train_model(kind, &noised, &cfg.train)?;
        let r = ranker_from(&ck, &noised, OmegaChoice::Trained)?;
        let rank = inserted_rank(r.as_ref(), &noised, &inserted)?;
        body.push_str(&format!("{kind},{rank}\n"));
        rows.push(RobustRow {
            model: kind.name().into(),
            avg_inserted_rank: rank,
        });
    }
    write_file(&cfg.out.join("robust.csv"), &body)?;
    Ok(rows)
}

/// `pilot`: repeat-purchase share per basket index for the data and for the
/// top-|basket| lists of one model.
pub fn cmd_pilot(cfg: &RunConfig) -> Result<Vec<(f64, f64)>> {
    let ds = cfg.dataset()?;
    cfg.prepare_out()?;
    let ck = train_model(cfg.pilot_model, &ds, &cfg.train)?;
    let r = ranker_from(&ck, &ds, OmegaChoice::Trained)?;
    let rows = pilot_curves(r.as_ref(), &ds)?;
    let mut body = String::from("basket_index,truth_pct,model_pct\n");
    for (n, (truth, model)) in rows.iter().enumerate() {
        body.push_str(&format!("{},{truth},{model}\n", n + 1));
    }
    write_file(&cfg.out.join("pilot.csv"), &body)?;
    Ok(rows)
}

/// Ground-truth and model repeat curves, one pair per basket index.
pub fn pilot_curves(r: &dyn Ranker, ds: &BasketDataset) -> Result<Vec<(f64, f64)>> {
    let mut preds = Predictions::new();
    for h in ds.users() {
        for t in 2..=h.len() {
            preds.insert((h.user_id, t), r.recommend(h.user_id, t, h.basket(t).len())?);
        }
    }
    let truth = repeat_percentage(ds, None)?;
    let model = repeat_percentage(ds, Some(&preds))?;
    Ok(truth.values().iter().copied().zip(model.values().iter().copied()).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseStudy {
    pub user: usize,
    /// Basket indices of the predicted baskets.
    pub baskets: Vec<usize>,
    /// Model name and one top list per predicted basket.
    pub lists: Vec<(String, Vec<Vec<ItemId>>)>,
}

impl CaseStudy {
    pub fn distinct(&self, model: &str) -> Option<usize> {
        self.lists.iter().find(|(m, _)| m == model).map(|(_, l)| distinct_item_count(l))
    }
}

/// FENDER's ranking stage is fitted on the first `warmup` baskets of every
/// user; both models then predict baskets `warmup+1..=warmup+horizon` of the
/// chosen user from the purchases observed before each of them.
pub fn case_study(ds: &BasketDataset, stage1: &Stage1Model, cfg: &RunConfig) -> Result<CaseStudy> {
    let cs = &cfg.casestudy;
    let user = ds
        .user(cs.user)
        .ok_or_else(|| Error::Lookup(format!("unknown user {}", cs.user)))?;
    if cs.warmup < 2 || cs.horizon == 0 || cs.list_len == 0 {
        return Err(Error::Config("case study needs warmup >= 2, horizon >= 1 and list_len >= 1".into()));
    }
    if user.len() < cs.warmup + cs.horizon {
        return Err(Error::Precondition(format!(
            "user {} has {} baskets, case study needs {}",
            cs.user,
            user.len(),
            cs.warmup + cs.horizon
        )));
    }
    let horizons = vec![cs.warmup; ds.n_users()];
    let fender = train_stage2_until(ds, &horizons, stage1, &cfg.train)?;
    let pif = pif_ranker(&PifIndex::build(ds));
    let baskets: Vec<usize> = (cs.warmup + 1..=cs.warmup + cs.horizon).collect();
    let lists_for = |r: &dyn Ranker| -> Result<Vec<Vec<ItemId>>> {
        baskets.iter().map(|&t| r.recommend(cs.user, t, cs.list_len)).collect()
    };
    Ok(CaseStudy {
        user: cs.user,
        lists: vec![
            ("fender".into(), lists_for(&fender.ranker())?),
            ("pif".into(), lists_for(&pif)?),
        ],
        baskets,
    })
}

/// `casestudy`: writes `casestudy.csv` (one row per model and basket, item
/// labels as in the input) and `casestudy_distinct.csv`.
pub fn cmd_casestudy(cfg: &RunConfig) -> Result<CaseStudy> {
    let ds = cfg.dataset()?;
    cfg.prepare_out()?;
    let stage1 = train_stage1(&ds, &PifIndex::build(&ds), &cfg.train)?;
    let cs = case_study(&ds, &stage1, cfg)?;
    let mut body = String::from("model,basket_index");
    for r in 1..=cfg.casestudy.list_len {
        body.push_str(&format!(",rank{r}"));
    }
    body.push('\n');
    let mut distinct = String::from("model,distinct_items\n");
    for (model, lists) in &cs.lists {
        for (t, list) in cs.baskets.iter().zip(lists) {
            body.push_str(&format!("{model},{t}"));
            for &i in list {
                body.push_str(&format!(",{}", ds.item_label(i)));
            }
            body.push('\n');
        }
        distinct.push_str(&format!("{model},{}\n", distinct_item_count(lists)));
    }
    write_file(&cfg.out.join("casestudy.csv"), &body)?;
    write_file(&cfg.out.join("casestudy_distinct.csv"), &distinct)?;
    Ok(cs)
}

/// `loop`: repeat-purchase share of each simulated round, written to `loop.csv`.
pub fn cmd_loop(cfg: &RunConfig) -> Result<Vec<f64>> {
    let synth = cfg
        .synth
        .as_ref()
        .ok_or_else(|| Error::Config("loop needs a `synth` block, not a dataset path".into()))?;
    cfg.prepare_out()?;
    let kind = cfg.loop_model;
    let train = cfg.train.clone();
    let curve = feedback_loop_sim(synth, &cfg.feedback, |ds| {
        let ck = train_model(kind, ds, &train)?;
        let owned: Box<dyn Ranker> = match ck.params {
            ModelParams::Pif => Box::new(pif_ranker(&PifIndex::build(ds))),
            ModelParams::Bprmf(m) | ModelParams::Ipsmf(m) => Box::new(m),
            ModelParams::Fender(m) => Box::new(OwnedFender(*m)),
        };
        Ok(owned)
    })?;
    let mut body = String::from("round,repeat_pct\n");
    for (r, v) in curve.iter().enumerate() {
        body.push_str(&format!("{},{v}\n", r + 1));
    }
    write_file(&cfg.out.join("loop.csv"), &body)?;
    Ok(curve)
}

struct OwnedFender(crate::models::Stage2Model);

impl Ranker for OwnedFender {
    fn name(&self) -> &str {
        "fender"
    }

    fn n_items(&self) -> usize {
        self.0.stage1.n_items()
    }

    fn score(&self, u: usize, t: usize, i: ItemId) -> Result<f64> {
        self.0.ranker().score(u, t, i)
    }

    fn scores(&self, u: usize, t: usize) -> Result<Vec<f64>> {
        self.0.ranker().scores(u, t)
    }
}

/// Everything one reference run produces, for callers that want the
/// numbers rather than the files.
#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub checkpoints: Vec<Checkpoint>,
    pub report: EvalReport,
    pub robust: Vec<RobustRow>,
}

impl PipelineOutput {
    pub fn row(&self, model: &str) -> Option<&ModelRow> {
        self.report.rows.iter().find(|r| r.model == model)
    }

    pub fn robust_rank(&self, model: &str) -> Option<f64> {
        self.robust.iter().find(|r| r.model == model).map(|r| r.avg_inserted_rank)
    }
}

/// `gen`, `train`, `eval` and `robust` in sequence against one output directory.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutput> {
    let mut cfg = cfg.clone();
    if cfg.synth.is_some() {
        cmd_gen(&cfg)?;
        cfg.dataset = Some(cfg.out.join("dataset.csv"));
        cfg.synth = None;
    }
    let checkpoints = cmd_train(&cfg)?;
    let report = cmd_eval(&cfg)?;
    let robust = cmd_robust(&cfg)?;
    Ok(PipelineOutput {
        checkpoints,
        report,
        robust,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_precedence() {
        let with = |flag, env| RunConfig::resolve(None, Overrides { seed: flag, ..Default::default() }, env).unwrap();
        assert_eq!(with(None, None).seed, Some(DEFAULT_SEED));
        assert_eq!(with(None, Some("11")).seed, Some(11));
        assert_eq!(with(Some(3), Some("11")).seed, Some(3));
        let cfg = with(Some(3), None);
        assert_eq!((cfg.train.seed, cfg.synth.unwrap().seed), (3, 3));
        assert!(RunConfig::resolve(None, Overrides::default(), Some("x")).is_err());
    }

    #[test]
    fn config_seed_beats_env_but_not_flag() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"seed": 5, "k": 10, "models": ["pif"]}"#).unwrap();
        let cfg = RunConfig::resolve(Some(&path), Overrides::default(), Some("11")).unwrap();
        assert_eq!((cfg.seed, cfg.k, cfg.models.clone()), (Some(5), 10, vec![ModelKind::Pif]));
        let o = Overrides {
            seed: Some(1),
            k: Some(3),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(Some(&path), o, Some("11")).unwrap();
        assert_eq!((cfg.seed, cfg.k), (Some(1), 3));
    }

    #[test]
    fn dataset_and_synth_are_exclusive() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        fs::write(&path, r#"{"dataset": "x.csv", "synth": {}}"#).unwrap();
        assert!(RunConfig::resolve(Some(&path), Overrides::default(), None).is_err());
    }

    #[test]
    fn parsing() {
        assert_eq!(parse_models("pif,fender").unwrap(), vec![ModelKind::Pif, ModelKind::Fender]);
        assert!(parse_models("pif,knn").is_err());
        assert_eq!(
            parse_omegas("0,trained,1").unwrap(),
            vec![OmegaChoice::Fixed(0.0), OmegaChoice::Trained, OmegaChoice::Fixed(1.0)]
        );
        assert!(parse_omegas("nan").is_err() && parse_omegas("high").is_err());
    }
}
