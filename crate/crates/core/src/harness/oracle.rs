use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::experiment::{evaluate_split, xi_for_seed, Protocol};
use super::report::{ConfigEcho, ReportConfig, TrialReport};
use super::splits::{CalibRule, NODES_PER_CLASS};
use crate::error::{Error, Result};
use crate::matrixio::DatasetBundle;
use crate::numeric::derive_seed;
use crate::propagate::oracle_aggregate;
use crate::scores::aps_scores;

const AGGREGATE_STREAM: u64 = 0x6f72;

/// Same-label aggregation sweep with ground-truth labels everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub alpha: f64,
    pub m_sweep: Vec<usize>,
    pub w: f64,
    pub n_model_splits: usize,
    pub n_conformal_splits: usize,
    pub calib_rule: CalibRule,
    pub nodes_per_class: usize,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            m_sweep: vec![0, 1, 2, 4, 8, 16, 32],
            w: 0.5,
            n_model_splits: 10,
            n_conformal_splits: 100,
            calib_rule: CalibRule::PaperMin1000,
            nodes_per_class: NODES_PER_CLASS,
            seed: 0,
        }
    }
}

/// One report per entry of `m_sweep`. Splits and base scores match
/// [`super::run_experiment`] with the same seed, so `m = 0` reproduces APS.
pub fn run_oracle_experiment(
    bundle: &DatasetBundle,
    cfg: &OracleConfig,
) -> Result<Vec<TrialReport>> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha {} outside (0, 1)",
            cfg.alpha
        )));
    }
    let labels = &bundle.labels;
    let base = aps_scores(&bundle.probabilities, &xi_for_seed(cfg.seed))?;
    let protocol = Protocol::new(
        labels,
        cfg.n_model_splits,
        cfg.n_conformal_splits,
        cfg.calib_rule,
        cfg.nodes_per_class,
        cfg.seed,
    )?;
    let agg_seed = derive_seed(cfg.seed, AGGREGATE_STREAM);

    cfg.m_sweep
        .iter()
        .map(|&m| {
            let aggregated = (0..cfg.n_model_splits)
                .map(|ms| {
                    oracle_aggregate(&base, labels, m, cfg.w, derive_seed(agg_seed, ms as u64))
                })
                .collect::<Result<Vec<_>>>()?;
            let trials = (0..protocol.num_trials())
                .into_par_iter()
                .map(|t| {
                    let (calib, test) = protocol.trial_split(t)?;
                    let scores = &aggregated[t / cfg.n_conformal_splits];
                    let (threshold, metrics) =
                        evaluate_split(scores, labels, &calib, &test, cfg.alpha)?;
                    Ok(protocol.record(t, &threshold, None, metrics))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(TrialReport::new(
                ReportConfig {
                    dataset: bundle.name.clone(),
                    run: ConfigEcho::Oracle {
                        m,
                        config: cfg.clone(),
                    },
                },
                trials,
            ))
        })
        .collect()
}
