//! Base non-conformity scores computed for every (node, class) pair.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrixio::DenseMatrix;
use crate::numeric::keyed_unit;

/// Which score function produced a [`ScoreMatrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Aps,
    Raps,
    Daps,
    Snaps,
    Oracle,
    Image,
}

/// `N x K` non-conformity scores; lower means more conforming.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub values: DenseMatrix,
    pub kind: ScoreKind,
    /// Seed the randomization term was drawn from.
    pub xi_seed: u64,
}

impl ScoreMatrix {
    pub fn new(values: DenseMatrix, kind: ScoreKind, xi_seed: u64) -> Self {
        Self {
            values,
            kind,
            xi_seed,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.values.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.values.cols()
    }

    #[inline]
    pub fn get(&self, node: usize, class: usize) -> f64 {
        self.values.get(node, class)
    }

    #[inline]
    pub fn row(&self, node: usize) -> &[f64] {
        self.values.row(node)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "lowercase")]
pub enum XiMode {
    /// One uniform draw per (node, class), keyed by the seed.
    Uniform,
    Fixed(f64),
}

/// How the randomization term of APS is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct XiPolicy {
    pub mode: XiMode,
    pub seed: u64,
}

impl XiPolicy {
    pub fn uniform(seed: u64) -> Self {
        Self {
            mode: XiMode::Uniform,
            seed,
        }
    }

    pub fn fixed(value: f64) -> Self {
        Self {
            mode: XiMode::Fixed(value),
            seed: 0,
        }
    }

    #[inline]
    pub fn draw(&self, node_key: u64, class: usize) -> f64 {
        match self.mode {
            XiMode::Uniform => keyed_unit(self.seed, node_key, class as u64),
            XiMode::Fixed(v) => v,
        }
    }

    fn validate(&self) -> Result<()> {
        match self.mode {
            XiMode::Fixed(v) if !(0.0..=1.0).contains(&v) => Err(Error::InvalidParameter(format!(
                "fixed xi {v} outside [0, 1]"
            ))),
            _ => Ok(()),
        }
    }
}

/// Regularization of RAPS: `lambda_reg * max(0, rank - k_reg)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RapsParams {
    pub k_reg: usize,
    pub lambda_reg: f64,
}

impl Default for RapsParams {
    fn default() -> Self {
        Self {
            k_reg: 1,
            lambda_reg: 0.01,
        }
    }
}

impl RapsParams {
    pub fn validate(&self) -> Result<()> {
        if self.k_reg < 1 || !self.lambda_reg.is_finite() || self.lambda_reg < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "RAPS needs k_reg >= 1 and lambda_reg >= 0, got {self:?}"
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn penalty(&self, rank: usize) -> f64 {
        self.lambda_reg * rank.saturating_sub(self.k_reg) as f64
    }
}

fn check_probabilities(p: &DenseMatrix) -> Result<()> {
    p.validate_stochastic(crate::matrixio::PROBABILITY_TOLERANCE)
}

/// APS scores, keying the randomization of row `i` by node id `i`.
pub fn aps_scores(p: &DenseMatrix, xi: &XiPolicy) -> Result<ScoreMatrix> {
    let keys: Vec<u64> = (0..p.rows() as u64).collect();
    aps_scores_keyed(p, xi, &keys)
}

/// APS scores `sum_i pi_i 1[pi_i > pi_y] + xi * pi_y`, with the randomization
/// for row `r` keyed by `node_keys[r]`.
///
/// The inequality is strict: classes tied with `y` contribute nothing.
pub fn aps_scores_keyed(p: &DenseMatrix, xi: &XiPolicy, node_keys: &[u64]) -> Result<ScoreMatrix> {
    check_probabilities(p)?;
    xi.validate()?;
    if node_keys.len() != p.rows() {
        return Err(Error::RowMismatch {
            what: "xi node keys".into(),
            expected: p.rows(),
            actual: node_keys.len(),
        });
    }
    let k = p.cols();
    let mut out = DenseMatrix::zeros(p.rows(), k);
    out.data_mut()
        .par_chunks_mut(k.max(1))
        .zip(node_keys.par_iter())
        .enumerate()
        .for_each_init(
            || (Vec::with_capacity(k), vec![0.0; k]),
            |(order, above), (i, (dst, &key))| {
                mass_above(p.row(i), order, above);
                for y in 0..k {
                    dst[y] = above[y] + xi.draw(key, y) * p.get(i, y);
                }
            },
        );
    Ok(ScoreMatrix::new(out, ScoreKind::Aps, xi.seed))
}

/// For each class, the probability mass of classes strictly more probable.
fn mass_above(row: &[f64], order: &mut Vec<usize>, above: &mut [f64]) {
    order.clear();
    order.extend(0..row.len());
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    let mut cum = 0.0;
    let mut g = 0;
    while g < order.len() {
        let v = row[order[g]];
        let mut h = g;
        while h < order.len() && row[order[h]] == v {
            above[order[h]] = cum;
            h += 1;
        }
        for &c in &order[g..h] {
            cum += row[c];
        }
        g = h;
    }
}

/// 1-based rank of every class by descending probability, class index
/// breaking ties.
pub fn class_ranks(p: &DenseMatrix) -> Vec<u32> {
    let k = p.cols();
    let mut ranks = vec![0u32; p.rows() * k];
    ranks
        .par_chunks_mut(k.max(1))
        .enumerate()
        .for_each(|(i, dst)| {
            let row = p.row(i);
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
            for (r, &c) in order.iter().enumerate() {
                dst[c] = r as u32 + 1;
            }
        });
    ranks
}

/// RAPS scores: APS plus a penalty on classes ranked beyond `k_reg`.
pub fn raps_scores(p: &DenseMatrix, xi: &XiPolicy, rp: &RapsParams) -> Result<ScoreMatrix> {
    rp.validate()?;
    let aps = aps_scores(p, xi)?;
    Ok(raps_from_aps(&aps, &class_ranks(p), rp))
}

/// Adds the RAPS penalty to precomputed APS scores and ranks.
pub fn raps_from_aps(aps: &ScoreMatrix, ranks: &[u32], rp: &RapsParams) -> ScoreMatrix {
    let mut values = aps.values.clone();
    for (v, &r) in values.data_mut().iter_mut().zip(ranks) {
        *v += rp.penalty(r as usize);
    }
    ScoreMatrix::new(values, ScoreKind::Raps, aps.xi_seed)
}
