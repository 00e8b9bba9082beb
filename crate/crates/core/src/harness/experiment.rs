use std::borrow::Cow;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{ConfigEcho, ReportConfig, TrialRecord, TrialReport};
use super::splits::{sample_model_split, split_pool, CalibRule, ModelSplit, NODES_PER_CLASS};
use super::tuning::{raps_grid, snaps_grid, tune_raps, tune_snaps, Hyperparams};
use crate::conformal::{calibrate, predict_sets, CalibratedThreshold};
use crate::error::{Error, Result};
use crate::graph::{build_knn_graph, KnnConfig, SparseGraph};
use crate::matrixio::{DatasetBundle, LabelVector};
use crate::metrics::{evaluate, MetricSummary};
use crate::numeric::derive_seed;
use crate::propagate::{NeighborTerms, SnapsParams};
use crate::scores::{
    aps_scores, class_ranks, raps_from_aps, RapsParams, ScoreKind, ScoreMatrix, XiPolicy,
};

const XI_STREAM: u64 = 0x7869;
const MODEL_STREAM: u64 = 0x6d6f;
const TRIAL_STREAM: u64 = 0x7472;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Aps,
    Raps,
    Daps,
    Snaps,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aps" => Ok(Method::Aps),
            "raps" => Ok(Method::Raps),
            "daps" => Ok(Method::Daps),
            "snaps" => Ok(Method::Snaps),
            other => Err(Error::InvalidParameter(format!("unknown method {other:?}"))),
        }
    }
}

/// Score that DAPS/SNAPS aggregate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaseScore {
    Aps,
    Raps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub alpha: f64,
    pub method: Method,
    pub base: BaseScore,
    /// Penalties when `base` is RAPS under DAPS/SNAPS.
    pub base_raps: RapsParams,
    pub knn: KnnConfig,
    pub grid_step: f64,
    pub n_model_splits: usize,
    pub n_conformal_splits: usize,
    pub calib_rule: CalibRule,
    pub nodes_per_class: usize,
    pub seed: u64,
    /// Skip tuning and use these parameters with the whole calibration set.
    pub fixed_params: Option<Hyperparams>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            method: Method::Snaps,
            base: BaseScore::Aps,
            base_raps: RapsParams::default(),
            knn: KnnConfig::default(),
            grid_step: 0.05,
            n_model_splits: 10,
            n_conformal_splits: 100,
            calib_rule: CalibRule::PaperMin1000,
            nodes_per_class: NODES_PER_CLASS,
            seed: 0,
            fixed_params: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha {} outside (0, 1)",
                self.alpha
            )));
        }
        if self.n_model_splits == 0 || self.n_conformal_splits == 0 {
            return Err(Error::InvalidParameter(
                "split counts must be at least 1".into(),
            ));
        }
        snaps_grid(self.grid_step, false)?;
        self.base_raps.validate()?;
        match (self.method, self.fixed_params) {
            (_, None) => Ok(()),
            (Method::Raps, Some(Hyperparams::Raps(p))) => p.validate(),
            (Method::Snaps, Some(Hyperparams::Snaps(p))) => p.validate(),
            (Method::Daps, Some(Hyperparams::Snaps(p))) if p.lambda == 0.0 => p.validate(),
            (m, Some(p)) => Err(Error::InvalidParameter(format!(
                "parameters {p:?} do not apply to {m:?}"
            ))),
        }
    }

    fn needs_tuning(&self) -> bool {
        self.method != Method::Aps && self.fixed_params.is_none()
    }

    pub(crate) fn xi(&self) -> XiPolicy {
        xi_for_seed(self.seed)
    }
}

/// Randomization policy of the base scores for a run seed.
pub fn xi_for_seed(seed: u64) -> XiPolicy {
    XiPolicy::uniform(derive_seed(seed, XI_STREAM))
}

/// Repeated-split protocol: model splits fix train/valid, then each trial
/// draws a fresh calibration/test partition of the remaining pool.
#[derive(Debug, Clone)]
pub struct Protocol {
    model_splits: Vec<ModelSplit>,
    n_conformal_splits: usize,
    calib_rule: CalibRule,
    seed: u64,
}

impl Protocol {
    pub fn new(
        labels: &LabelVector,
        n_model_splits: usize,
        n_conformal_splits: usize,
        calib_rule: CalibRule,
        nodes_per_class: usize,
        seed: u64,
    ) -> Result<Self> {
        let model_seed = derive_seed(seed, MODEL_STREAM);
        let model_splits = (0..n_model_splits)
            .map(|m| sample_model_split(labels, nodes_per_class, derive_seed(model_seed, m as u64)))
            .collect::<Result<Vec<_>>>()?;
        if let Some(ms) = model_splits.first() {
            calib_rule.calib_size(ms.pool.len())?;
        }
        Ok(Self {
            model_splits,
            n_conformal_splits,
            calib_rule,
            seed: derive_seed(seed, TRIAL_STREAM),
        })
    }

    pub fn num_trials(&self) -> usize {
        self.model_splits.len() * self.n_conformal_splits
    }

    pub fn model_split(&self, trial: usize) -> &ModelSplit {
        &self.model_splits[trial / self.n_conformal_splits]
    }

    /// `(calib, test)` of trial `t`; depends only on the global seed and `t`.
    pub fn trial_split(&self, trial: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        split_pool(
            &self.model_split(trial).pool,
            self.calib_rule,
            derive_seed(self.seed, trial as u64),
        )
    }

    pub(crate) fn record(
        &self,
        trial: usize,
        threshold: &CalibratedThreshold,
        params: Option<Hyperparams>,
        metrics: MetricSummary,
    ) -> TrialRecord {
        TrialRecord {
            trial,
            model_split: trial / self.n_conformal_splits,
            conformal_split: trial % self.n_conformal_splits,
            n_calib: threshold.n_calib,
            q_hat: (!threshold.is_saturated()).then_some(threshold.q_hat),
            params,
            metrics,
        }
    }
}

/// Calibrates on `calib`, predicts and scores `test`.
pub fn evaluate_split(
    scores: &ScoreMatrix,
    labels: &LabelVector,
    calib: &[usize],
    test: &[usize],
    alpha: f64,
) -> Result<(CalibratedThreshold, MetricSummary)> {
    let threshold = calibrate(scores, labels, calib, alpha)?;
    let sets = predict_sets(scores, &threshold, test)?;
    let metrics = evaluate(&sets, labels)?;
    Ok((threshold, metrics))
}

/// Base scores and neighbor terms shared by every trial.
#[derive(Debug, Clone)]
pub struct ScoreContext {
    base: ScoreMatrix,
    ranks: Option<Vec<u32>>,
    terms: Option<NeighborTerms>,
}

impl ScoreContext {
    /// `knn` overrides building the similarity graph from `cfg.knn` (e.g. a
    /// cached graph); it is only used by SNAPS.
    pub fn prepare(
        bundle: &DatasetBundle,
        cfg: &ExperimentConfig,
        knn: Option<SparseGraph>,
    ) -> Result<Self> {
        let p = &bundle.probabilities;
        let aps = aps_scores(p, &cfg.xi())?;
        let needs_ranks = cfg.method == Method::Raps
            || (cfg.method != Method::Aps && cfg.base == BaseScore::Raps);
        let ranks = needs_ranks.then(|| class_ranks(p));
        let base = match (cfg.method, cfg.base, &ranks) {
            (Method::Daps | Method::Snaps, BaseScore::Raps, Some(r)) => {
                raps_from_aps(&aps, r, &cfg.base_raps)
            }
            _ => aps,
        };
        let terms = match cfg.method {
            Method::Aps | Method::Raps => None,
            Method::Daps => Some(NeighborTerms::new(&base, None, &bundle.adjacency())?),
            Method::Snaps => {
                let knn = match knn {
                    Some(g) => g,
                    None => build_knn_graph(&bundle.features, &cfg.knn)?,
                };
                Some(NeighborTerms::new(&base, Some(&knn), &bundle.adjacency())?)
            }
        };
        Ok(Self { base, ranks, terms })
    }

    pub fn base(&self) -> &ScoreMatrix {
        &self.base
    }

    /// Selects parameters using only `tune_idx`.
    pub fn tune(
        &self,
        cfg: &ExperimentConfig,
        labels: &LabelVector,
        tune_idx: &[usize],
    ) -> Result<Option<Hyperparams>> {
        Ok(match cfg.method {
            Method::Aps => None,
            Method::Raps => {
                let ranks = self.ranks.as_deref().expect("ranks prepared for RAPS");
                let grid = raps_grid(self.base.num_classes());
                Some(Hyperparams::Raps(tune_raps(
                    &self.base, ranks, labels, tune_idx, cfg.alpha, &grid,
                )?))
            }
            Method::Daps | Method::Snaps => {
                let grid = snaps_grid(cfg.grid_step, cfg.method == Method::Daps)?;
                let terms = self.terms.as_ref().expect("terms prepared for aggregation");
                Some(Hyperparams::Snaps(tune_snaps(
                    terms, labels, tune_idx, cfg.alpha, &grid,
                )?))
            }
        })
    }

    /// Scores of `method` under `params`.
    pub fn scores(&self, method: Method, params: Option<Hyperparams>) -> Cow<'_, ScoreMatrix> {
        match (method, params) {
            (Method::Aps, _) => Cow::Borrowed(&self.base),
            (Method::Raps, Some(Hyperparams::Raps(p))) => Cow::Owned(raps_from_aps(
                &self.base,
                self.ranks.as_deref().expect("ranks"),
                &p,
            )),
            (Method::Daps | Method::Snaps, Some(Hyperparams::Snaps(p))) => {
                let kind = if method == Method::Daps {
                    ScoreKind::Daps
                } else {
                    ScoreKind::Snaps
                };
                Cow::Owned(self.terms.as_ref().expect("terms").mix(&p, kind))
            }
            (m, p) => unreachable!("{m:?} scored with {p:?}"),
        }
    }
}

/// Runs every trial of the protocol for one method.
pub fn run_experiment(bundle: &DatasetBundle, cfg: &ExperimentConfig) -> Result<TrialReport> {
    run_experiment_with_knn(bundle, cfg, None)
}

pub fn run_experiment_with_knn(
    bundle: &DatasetBundle,
    cfg: &ExperimentConfig,
    knn: Option<SparseGraph>,
) -> Result<TrialReport> {
    cfg.validate()?;
    let labels = &bundle.labels;
    let ctx = ScoreContext::prepare(bundle, cfg, knn)?;
    let protocol = Protocol::new(
        labels,
        cfg.n_model_splits,
        cfg.n_conformal_splits,
        cfg.calib_rule,
        cfg.nodes_per_class,
        cfg.seed,
    )?;

    let trials = (0..protocol.num_trials())
        .into_par_iter()
        .map(|t| {
            let (calib, test) = protocol.trial_split(t)?;
            let (params, conformal_idx) = if cfg.needs_tuning() {
                let (tune_idx, rest) = calib.split_at(calib.len() / 2);
                (ctx.tune(cfg, labels, tune_idx)?, rest)
            } else {
                (cfg.fixed_params, &calib[..])
            };
            let scores = ctx.scores(cfg.method, params);
            let (threshold, metrics) =
                evaluate_split(&scores, labels, conformal_idx, &test, cfg.alpha)?;
            Ok(protocol.record(t, &threshold, params, metrics))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(TrialReport::new(
        ReportConfig {
            dataset: bundle.name.clone(),
            run: ConfigEcho::Experiment(cfg.clone()),
        },
        trials,
    ))
}

/// Fixed SNAPS weights, for reduction checks and CLI overrides.
pub fn fixed_snaps(lambda: f64, mu: f64) -> Result<Option<Hyperparams>> {
    Ok(Some(Hyperparams::Snaps(SnapsParams::new(lambda, mu)?)))
}
