//! Grid search of aggregation weights and RAPS penalties.
//!
//! Candidates are scored on the tuning nodes only: the first half calibrates,
//! the second half measures set size. The smallest total size wins, then the
//! most singleton hits, then the smallest total weight, then grid order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conformal::conformal_quantile;
use crate::error::{Error, Result};
use crate::matrixio::LabelVector;
use crate::propagate::{NeighborTerms, SnapsParams};
use crate::scores::{RapsParams, ScoreMatrix};

/// Hyperparameters selected for one trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Hyperparams {
    Raps(RapsParams),
    Snaps(SnapsParams),
}

/// All `(lambda, mu)` on the `step` lattice with `lambda + mu <= 1`, lambda
/// outer. With `structural_only`, lambda is pinned to zero.
pub fn snaps_grid(step: f64, structural_only: bool) -> Result<Vec<SnapsParams>> {
    let steps = (1.0 / step).round();
    if !(step > 0.0 && step <= 1.0) || ((steps * step) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(format!(
            "grid step {step} must divide 1 evenly"
        )));
    }
    let steps = steps as usize;
    let lambdas = if structural_only { 0..=0 } else { 0..=steps };
    Ok(lambdas
        .flat_map(|i| {
            (0..=steps - i).map(move |j| SnapsParams {
                lambda: i as f64 / steps as f64,
                mu: j as f64 / steps as f64,
            })
        })
        .collect())
}

/// RAPS candidates: `k_reg` in 1..=min(5, K), `lambda_reg` from a log-spaced list.
pub fn raps_grid(classes: usize) -> Vec<RapsParams> {
    const LAMBDAS: [f64; 7] = [0.0, 0.001, 0.01, 0.02, 0.05, 0.1, 0.2];
    (1..=classes.clamp(1, 5))
        .flat_map(|k_reg| {
            LAMBDAS
                .iter()
                .map(move |&lambda_reg| RapsParams { k_reg, lambda_reg })
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Outcome {
    size: usize,
    hits: usize,
}

/// Splits tuning nodes into a calibration half and a measurement half.
pub fn tuning_halves(tune_idx: &[usize]) -> Result<(&[usize], &[usize])> {
    if tune_idx.len() < 2 {
        return Err(Error::EmptySet("tuning"));
    }
    Ok(tune_idx.split_at(tune_idx.len() / 2))
}

fn assess(
    row_scores: &(dyn Fn(usize, &mut [f64]) + Sync),
    classes: usize,
    labels: &LabelVector,
    calib: &[usize],
    measure: &[usize],
    alpha: f64,
) -> Result<Outcome> {
    let mut buf = vec![0.0; classes];
    let mut true_scores = Vec::with_capacity(calib.len());
    for &i in calib {
        row_scores(i, &mut buf);
        true_scores.push(buf[labels.get(i)]);
    }
    let q = conformal_quantile(&true_scores, alpha)?;
    let mut out = Outcome { size: 0, hits: 0 };
    for &i in measure {
        row_scores(i, &mut buf);
        let size = buf.iter().filter(|&&s| s <= q).count();
        out.size += size;
        out.hits += (size == 1 && buf[labels.get(i)] <= q) as usize;
    }
    Ok(out)
}

fn select<P: Copy + Send + Sync>(
    candidates: &[P],
    weight: impl Fn(&P) -> f64 + Sync,
    evaluate: impl Fn(&P) -> Result<Outcome> + Sync,
) -> Result<P> {
    if candidates.is_empty() {
        return Err(Error::InvalidParameter("empty tuning grid".into()));
    }
    let outcomes: Vec<Outcome> = candidates
        .par_iter()
        .map(&evaluate)
        .collect::<Result<_>>()?;
    let best = (0..candidates.len())
        .min_by(|&a, &b| {
            let (oa, ob) = (outcomes[a], outcomes[b]);
            oa.size
                .cmp(&ob.size)
                .then(ob.hits.cmp(&oa.hits))
                .then(weight(&candidates[a]).total_cmp(&weight(&candidates[b])))
                .then(a.cmp(&b))
        })
        .unwrap();
    Ok(candidates[best])
}

/// Picks aggregation weights from `grid` using only the `tune_idx` nodes.
pub fn tune_snaps(
    terms: &NeighborTerms,
    labels: &LabelVector,
    tune_idx: &[usize],
    alpha: f64,
    grid: &[SnapsParams],
) -> Result<SnapsParams> {
    let (calib, measure) = tuning_halves(tune_idx)?;
    let k = terms.num_classes();
    select(
        grid,
        |p| p.lambda + p.mu,
        |p| {
            assess(
                &|i, out| terms.mix_row(i, p, out),
                k,
                labels,
                calib,
                measure,
                alpha,
            )
        },
    )
}

/// Picks RAPS penalties from `grid` using only the `tune_idx` nodes.
pub fn tune_raps(
    aps: &ScoreMatrix,
    ranks: &[u32],
    labels: &LabelVector,
    tune_idx: &[usize],
    alpha: f64,
    grid: &[RapsParams],
) -> Result<RapsParams> {
    let (calib, measure) = tuning_halves(tune_idx)?;
    let k = aps.num_classes();
    select(
        grid,
        |p| p.lambda_reg * (k.saturating_sub(p.k_reg)) as f64,
        |p| {
            assess(
                &|i, out: &mut [f64]| {
                    for (y, o) in out.iter_mut().enumerate() {
                        *o = aps.get(i, y) + p.penalty(ranks[i * k + y] as usize);
                    }
                },
                k,
                labels,
                calib,
                measure,
                alpha,
            )
        },
    )
}
