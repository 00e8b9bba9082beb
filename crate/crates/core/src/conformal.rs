//! Split-conformal calibration and prediction sets.
//!
//! With `n` calibration scores, the threshold is the `ceil((1 - alpha)(n + 1))`-th
//! smallest true-label score (`+inf` when that rank exceeds `n`), and a label
//! enters a node's set when its score does not exceed the threshold.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::matrixio::LabelVector;
use crate::scores::ScoreMatrix;

/// Calibrated score threshold `q_hat`.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedThreshold {
    pub q_hat: f64,
    pub alpha: f64,
    pub n_calib: usize,
    /// Sorted calibration node ids; empty when calibrated from bare scores.
    calib_nodes: Vec<usize>,
}

impl CalibratedThreshold {
    /// Threshold from bare true-label scores, without node bookkeeping.
    pub fn from_scores(true_scores: &[f64], alpha: f64) -> Result<Self> {
        Ok(Self {
            q_hat: conformal_quantile(true_scores, alpha)?,
            alpha,
            n_calib: true_scores.len(),
            calib_nodes: Vec::new(),
        })
    }

    pub fn is_saturated(&self) -> bool {
        self.q_hat == f64::INFINITY
    }

    pub fn calib_nodes(&self) -> &[usize] {
        &self.calib_nodes
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha {alpha} outside (0, 1)"
        )));
    }
    Ok(())
}

/// 1-based order-statistic rank `ceil((1 - alpha)(n + 1))`.
///
/// A relative slack of 1e-9 absorbs binary rounding of decimal `alpha`, so
/// that e.g. `alpha = 0.1, n = 9` gives rank 9 rather than 10.
pub fn conformal_rank(n: usize, alpha: f64) -> usize {
    let x = (1.0 - alpha) * (n + 1) as f64;
    (x - 1e-9 * x.max(1.0)).ceil().max(1.0) as usize
}

/// The conformal quantile of `values`; `+inf` when the rank exceeds `n`.
pub fn conformal_quantile(values: &[f64], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if values.is_empty() {
        return Err(Error::EmptySet("calibration"));
    }
    if let Some(v) = values.iter().find(|v| v.is_nan()) {
        return Err(Error::InvalidParameter(format!("calibration score {v}")));
    }
    let rank = conformal_rank(values.len(), alpha);
    if rank > values.len() {
        return Ok(f64::INFINITY);
    }
    let mut buf = values.to_vec();
    let (_, q, _) = buf.select_nth_unstable_by(rank - 1, f64::total_cmp);
    Ok(*q)
}

/// Calibrates on the true-label scores of `calib_idx`.
pub fn calibrate(
    scores: &ScoreMatrix,
    labels: &LabelVector,
    calib_idx: &[usize],
    alpha: f64,
) -> Result<CalibratedThreshold> {
    check_alpha(alpha)?;
    if calib_idx.is_empty() {
        return Err(Error::EmptySet("calibration"));
    }
    let n = scores.num_nodes();
    let mut true_scores = Vec::with_capacity(calib_idx.len());
    for &i in calib_idx {
        if i >= n || i >= labels.len() {
            return Err(Error::NodeOutOfRange { index: i, n });
        }
        true_scores.push(scores.get(i, labels.get(i)));
    }
    let mut calib_nodes = calib_idx.to_vec();
    calib_nodes.sort_unstable();
    Ok(CalibratedThreshold {
        q_hat: conformal_quantile(&true_scores, alpha)?,
        alpha,
        n_calib: calib_idx.len(),
        calib_nodes,
    })
}

/// Per-node label sets stored as bitsets.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSets {
    nodes: Vec<usize>,
    num_classes: usize,
    words: usize,
    bits: Vec<u64>,
    pub threshold: CalibratedThreshold,
}

impl PredictionSets {
    fn with_capacity(
        nodes: Vec<usize>,
        num_classes: usize,
        threshold: CalibratedThreshold,
    ) -> Self {
        let words = num_classes.div_ceil(64).max(1);
        Self {
            bits: vec![0; nodes.len() * words],
            nodes,
            num_classes,
            words,
            threshold,
        }
    }

    /// Builds sets from explicit label lists.
    pub fn from_label_lists(
        num_classes: usize,
        nodes: Vec<usize>,
        lists: &[Vec<usize>],
        threshold: CalibratedThreshold,
    ) -> Result<Self> {
        if lists.len() != nodes.len() {
            return Err(Error::RowMismatch {
                what: "label lists".into(),
                expected: nodes.len(),
                actual: lists.len(),
            });
        }
        let mut sets = Self::with_capacity(nodes, num_classes, threshold);
        for (r, list) in lists.iter().enumerate() {
            for &y in list {
                if y >= num_classes {
                    return Err(Error::LabelOutOfRange {
                        node: sets.nodes[r],
                        label: y,
                        classes: num_classes,
                    });
                }
                sets.insert(r, y);
            }
        }
        Ok(sets)
    }

    #[inline]
    fn insert(&mut self, r: usize, y: usize) {
        self.bits[r * self.words + y / 64] |= 1 << (y % 64);
    }

    /// Evaluated node ids, in set order.
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Whether the `r`-th set contains label `y`.
    #[inline]
    pub fn contains(&self, r: usize, y: usize) -> bool {
        y < self.num_classes && self.bits[r * self.words + y / 64] & (1 << (y % 64)) != 0
    }

    /// Cardinality of the `r`-th set.
    #[inline]
    pub fn size(&self, r: usize) -> usize {
        self.bits[r * self.words..(r + 1) * self.words]
            .iter()
            .map(|w| w.count_ones() as usize)
            .sum()
    }

    pub fn labels(&self, r: usize) -> Vec<usize> {
        (0..self.num_classes)
            .filter(|&y| self.contains(r, y))
            .collect()
    }
}

/// Sets `{y : score(i, y) <= q_hat}` for each node of `eval_idx`.
///
/// Fails when an evaluated node was used for calibration.
pub fn predict_sets(
    scores: &ScoreMatrix,
    threshold: &CalibratedThreshold,
    eval_idx: &[usize],
) -> Result<PredictionSets> {
    let n = scores.num_nodes();
    for &i in eval_idx {
        if i >= n {
            return Err(Error::NodeOutOfRange { index: i, n });
        }
        if threshold.calib_nodes.binary_search(&i).is_ok() {
            return Err(Error::SplitOverlap(i));
        }
    }
    let k = scores.num_classes();
    let mut sets = PredictionSets::with_capacity(eval_idx.to_vec(), k, threshold.clone());
    let q = threshold.q_hat;
    for (r, &i) in eval_idx.iter().enumerate() {
        for (y, &s) in scores.row(i).iter().enumerate() {
            if s.partial_cmp(&q) != Some(Ordering::Greater) {
                sets.insert(r, y);
            }
        }
    }
    Ok(sets)
}
