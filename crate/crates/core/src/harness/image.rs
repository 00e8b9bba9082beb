//! Graph-free mode: neighbors come from feature similarity to calibration
//! examples only.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::experiment::xi_for_seed;
use super::report::{ConfigEcho, ReportConfig, TrialRecord, TrialReport};
use crate::conformal::{predict_sets, CalibratedThreshold};
use crate::error::{Error, Result};
use crate::matrixio::{DatasetBundle, DenseMatrix, LabelVector};
use crate::metrics::{evaluate, MetricSummary};
use crate::numeric::derive_seed;
use crate::propagate::image_snaps;
use crate::scores::{aps_scores_keyed, ScoreMatrix};

/// Probabilities, features and labels of one set of examples.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageData {
    pub probabilities: DenseMatrix,
    pub features: DenseMatrix,
    pub labels: LabelVector,
}

impl ImageData {
    pub fn new(
        probabilities: DenseMatrix,
        features: DenseMatrix,
        labels: LabelVector,
    ) -> Result<Self> {
        for (what, rows) in [("features", features.rows()), ("labels", labels.len())] {
            if rows != probabilities.rows() {
                return Err(Error::RowMismatch {
                    what: what.into(),
                    expected: probabilities.rows(),
                    actual: rows,
                });
            }
        }
        if labels.classes() != probabilities.cols() {
            return Err(Error::InvalidParameter(format!(
                "{} label classes but {} probability columns",
                labels.classes(),
                probabilities.cols()
            )));
        }
        Ok(Self {
            probabilities,
            features,
            labels,
        })
    }

    /// Drops the graph of a bundle.
    pub fn from_bundle(b: &DatasetBundle) -> Self {
        Self {
            probabilities: b.probabilities.clone(),
            features: b.features.clone(),
            labels: b.labels.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            probabilities: self.probabilities.select_rows(idx),
            features: self.features.select_rows(idx),
            labels: self.labels.select(idx),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageConfig {
    pub k: usize,
    pub eta: f64,
    pub alpha: f64,
    /// Random calibration/test resplits of a pooled set.
    pub n_trials: usize,
    pub calib_fraction: f64,
    pub seed: u64,
}

impl Default for ImageConfig {
    fn default() -> Self {
        Self {
            k: 5,
            eta: 0.5,
            alpha: 0.1,
            n_trials: 100,
            calib_fraction: 0.5,
            seed: 0,
        }
    }
}

/// APS and corrected-score metrics of one calibration/test split.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageOutcome {
    pub aps: (CalibratedThreshold, MetricSummary),
    pub snaps: (CalibratedThreshold, MetricSummary),
}

fn evaluate_scores(
    calib: &ScoreMatrix,
    calib_labels: &LabelVector,
    test: &ScoreMatrix,
    test_labels: &LabelVector,
    alpha: f64,
) -> Result<(CalibratedThreshold, MetricSummary)> {
    let true_scores: Vec<f64> = (0..calib.num_nodes())
        .map(|i| calib.get(i, calib_labels.get(i)))
        .collect();
    let threshold = CalibratedThreshold::from_scores(&true_scores, alpha)?;
    let idx: Vec<usize> = (0..test.num_nodes()).collect();
    let sets = predict_sets(test, &threshold, &idx)?;
    Ok((threshold, evaluate(&sets, test_labels)?))
}

/// Scores both sets, keying the randomization of calibration row `i` by
/// `calib_keys[i]` and test row `j` by `test_keys[j]`.
pub fn run_image_trial_keyed(
    calib: &ImageData,
    test: &ImageData,
    calib_keys: &[u64],
    test_keys: &[u64],
    cfg: &ImageConfig,
) -> Result<ImageOutcome> {
    let xi = xi_for_seed(cfg.seed);
    let cs = aps_scores_keyed(&calib.probabilities, &xi, calib_keys)?;
    let ts = aps_scores_keyed(&test.probabilities, &xi, test_keys)?;
    let corrected = image_snaps(&ts, &cs, &test.features, &calib.features, cfg.k, cfg.eta)?;
    Ok(ImageOutcome {
        aps: evaluate_scores(&cs, &calib.labels, &ts, &test.labels, cfg.alpha)?,
        snaps: evaluate_scores(
            &corrected.calib,
            &calib.labels,
            &corrected.test,
            &test.labels,
            cfg.alpha,
        )?,
    })
}

/// One evaluation on a given split; test rows are keyed after calibration rows.
pub fn run_image_trial(
    calib: &ImageData,
    test: &ImageData,
    cfg: &ImageConfig,
) -> Result<ImageOutcome> {
    let n = calib.len() as u64;
    let ck: Vec<u64> = (0..n).collect();
    let tk: Vec<u64> = (n..n + test.len() as u64).collect();
    run_image_trial_keyed(calib, test, &ck, &tk, cfg)
}

/// Reports for APS and the corrected scores over `n_trials` random
/// calibration/test partitions of `pool`.
pub fn run_image_experiment(
    name: &str,
    pool: &ImageData,
    cfg: &ImageConfig,
) -> Result<(TrialReport, TrialReport)> {
    if cfg.n_trials == 0 {
        return Err(Error::InvalidParameter(
            "n_trials must be at least 1".into(),
        ));
    }
    let n_cal = (cfg.calib_fraction * pool.len() as f64).round() as usize;
    if n_cal < cfg.k.max(1) || n_cal >= pool.len() {
        return Err(Error::PoolExhausted(format!(
            "calibration fraction {} of {} examples",
            cfg.calib_fraction,
            pool.len()
        )));
    }
    let outcomes = (0..cfg.n_trials)
        .into_par_iter()
        .map(|t| {
            let mut perm: Vec<usize> = (0..pool.len()).collect();
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(derive_seed(
                cfg.seed, t as u64,
            )));
            let (ci, ti) = perm.split_at(n_cal);
            let keys = |idx: &[usize]| idx.iter().map(|&i| i as u64).collect::<Vec<_>>();
            run_image_trial_keyed(
                &pool.select(ci),
                &pool.select(ti),
                &keys(ci),
                &keys(ti),
                cfg,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let report =
        |method: &str, pick: fn(&ImageOutcome) -> &(CalibratedThreshold, MetricSummary)| {
            let trials = outcomes
                .iter()
                .enumerate()
                .map(|(t, o)| {
                    let (th, m) = pick(o);
                    TrialRecord {
                        trial: t,
                        model_split: 0,
                        conformal_split: t,
                        n_calib: th.n_calib,
                        q_hat: (!th.is_saturated()).then_some(th.q_hat),
                        params: None,
                        metrics: *m,
                    }
                })
                .collect();
            TrialReport::new(
                ReportConfig {
                    dataset: name.to_string(),
                    run: ConfigEcho::Image {
                        method: method.to_string(),
                        config: cfg.clone(),
                    },
                },
                trials,
            )
        };
    Ok((report("aps", |o| &o.aps), report("snaps", |o| &o.snaps)))
}
