//! Score aggregation over feature-similarity and structural neighborhoods.
//!
//! The corrected score of node `i` for class `y` is
//!
//! ```text
//! (1 - lambda - mu) s(i, y)
//!     + lambda / D_s(i) * sum_j A_s(i, j) s(j, y)
//!     + mu / |N(i)|     * sum_{j in N(i)} s(j, y)
//! ```
//!
//! A node with an empty k-NN row gives its `lambda` share back to its own
//! score; an isolated node does the same with `mu`. Neighbor sums are exactly
//! rounded, so results do not depend on node numbering.

mod image;

pub use image::{image_snaps, ImageScores};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SparseGraph;
use crate::matrixio::{DenseMatrix, LabelVector};
use crate::numeric::{derive_seed, exact_sum};
use crate::scores::{ScoreKind, ScoreMatrix};

/// Mixing weights: `lambda` for the k-NN term, `mu` for structural neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapsParams {
    pub lambda: f64,
    pub mu: f64,
}

impl SnapsParams {
    pub const IDENTITY: SnapsParams = SnapsParams {
        lambda: 0.0,
        mu: 0.0,
    };

    pub fn new(lambda: f64, mu: f64) -> Result<Self> {
        let p = Self { lambda, mu };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda >= 0.0 && self.mu >= 0.0 && self.lambda + self.mu <= 1.0 + 1e-12;
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "need lambda >= 0, mu >= 0, lambda + mu <= 1; got lambda = {}, mu = {}",
                self.lambda, self.mu
            )));
        }
        Ok(())
    }
}

/// Base scores together with their k-NN and structural neighbor means.
///
/// Built once per graph pair; [`NeighborTerms::mix`] then produces corrected
/// scores for any weights in `O(N K)`.
#[derive(Debug, Clone)]
pub struct NeighborTerms {
    base: ScoreMatrix,
    feature: DenseMatrix,
    structural: DenseMatrix,
    has_feature: Vec<bool>,
    has_structural: Vec<bool>,
}

fn weighted_means(s: &ScoreMatrix, g: &SparseGraph) -> Result<(DenseMatrix, Vec<bool>)> {
    let (n, k) = (s.num_nodes(), s.num_classes());
    if g.num_nodes() != n {
        return Err(Error::RowMismatch {
            what: "graph nodes".into(),
            expected: n,
            actual: g.num_nodes(),
        });
    }
    for i in 0..n {
        if let Some(&w) = g.weights(i).iter().find(|&&w| w < 0.0) {
            return Err(Error::NegativeWeight { row: i, weight: w });
        }
    }
    let mut out = DenseMatrix::zeros(n, k);
    let present: Vec<bool> = (0..n).map(|i| g.degree(i) > 0.0).collect();
    out.data_mut()
        .par_chunks_mut(k.max(1))
        .enumerate()
        .for_each(|(i, dst)| {
            if !present[i] {
                return;
            }
            let (nbrs, ws, d) = (g.neighbors(i), g.weights(i), g.degree(i));
            for (y, v) in dst.iter_mut().enumerate() {
                *v = exact_sum(nbrs.iter().zip(ws).map(|(&j, &w)| w * s.get(j, y))) / d;
            }
        });
    Ok((out, present))
}

impl NeighborTerms {
    /// `knn` may be omitted when only the structural term is needed.
    pub fn new(s: &ScoreMatrix, knn: Option<&SparseGraph>, adj: &SparseGraph) -> Result<Self> {
        let (feature, has_feature) = match knn {
            Some(g) => weighted_means(s, g)?,
            None => (
                DenseMatrix::zeros(s.num_nodes(), s.num_classes()),
                vec![false; s.num_nodes()],
            ),
        };
        let (structural, has_structural) = weighted_means(s, adj)?;
        Ok(Self {
            base: s.clone(),
            feature,
            structural,
            has_feature,
            has_structural,
        })
    }

    pub fn base(&self) -> &ScoreMatrix {
        &self.base
    }

    pub fn num_nodes(&self) -> usize {
        self.base.num_nodes()
    }

    pub fn num_classes(&self) -> usize {
        self.base.num_classes()
    }

    /// Corrected score row of node `i` written into `out`.
    #[inline]
    pub fn mix_row(&self, i: usize, p: &SnapsParams, out: &mut [f64]) {
        let lambda = if self.has_feature[i] { p.lambda } else { 0.0 };
        let mu = if self.has_structural[i] { p.mu } else { 0.0 };
        let s = self.base.row(i);
        if lambda == 0.0 && mu == 0.0 {
            out.copy_from_slice(s);
            return;
        }
        let ego = 1.0 - lambda - mu;
        let (f, g) = (self.feature.row(i), self.structural.row(i));
        for y in 0..s.len() {
            let mut v = ego * s[y];
            if lambda != 0.0 {
                v += lambda * f[y];
            }
            if mu != 0.0 {
                v += mu * g[y];
            }
            out[y] = v;
        }
    }

    pub fn mix(&self, p: &SnapsParams, kind: ScoreKind) -> ScoreMatrix {
        let k = self.num_classes();
        let mut values = DenseMatrix::zeros(self.num_nodes(), k);
        values
            .data_mut()
            .par_chunks_mut(k.max(1))
            .enumerate()
            .for_each(|(i, dst)| self.mix_row(i, p, dst));
        ScoreMatrix::new(values, kind, self.base.xi_seed)
    }
}

/// Corrected scores mixing each node with its k-NN and structural neighbors.
pub fn snaps_scores(
    s: &ScoreMatrix,
    knn: &SparseGraph,
    adj: &SparseGraph,
    p: &SnapsParams,
) -> Result<ScoreMatrix> {
    p.validate()?;
    Ok(NeighborTerms::new(s, Some(knn), adj)?.mix(p, ScoreKind::Snaps))
}

/// Structural-only correction: [`snaps_scores`] with `lambda = 0`.
pub fn daps_scores(s: &ScoreMatrix, adj: &SparseGraph, mu: f64) -> Result<ScoreMatrix> {
    let p = SnapsParams::new(0.0, mu)?;
    Ok(NeighborTerms::new(s, None, adj)?.mix(&p, ScoreKind::Daps))
}

/// Mixes every node's scores with the mean of `m` random other nodes that
/// share its ground-truth label: `(1 - w) s_v + w * mean(selected)`.
///
/// Sampling is without replacement and excludes the node itself; smaller
/// classes contribute all their other members.
pub fn oracle_aggregate(
    s: &ScoreMatrix,
    labels: &LabelVector,
    m: usize,
    w: f64,
    seed: u64,
) -> Result<ScoreMatrix> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::InvalidParameter(format!(
            "oracle weight {w} outside [0, 1]"
        )));
    }
    if labels.len() != s.num_nodes() {
        return Err(Error::RowMismatch {
            what: "labels".into(),
            expected: s.num_nodes(),
            actual: labels.len(),
        });
    }
    let members = labels.class_members();
    let k = s.num_classes();
    let mut values = s.values.clone();
    if m == 0 || w == 0.0 {
        return Ok(ScoreMatrix::new(values, ScoreKind::Oracle, s.xi_seed));
    }
    values
        .data_mut()
        .par_chunks_mut(k.max(1))
        .enumerate()
        .for_each(|(v, dst)| {
            let class = &members[labels.get(v)];
            let others = class.len() - 1;
            if others == 0 {
                return;
            }
            let take = m.min(others);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, v as u64));
            let picked: Vec<usize> = index::sample(&mut rng, others, take)
                .into_iter()
                .map(|p| {
                    // positions index the class list with `v` removed
                    let u = class[p];
                    if u >= v {
                        class[p + 1]
                    } else {
                        u
                    }
                })
                .collect();
            for (y, out) in dst.iter_mut().enumerate() {
                let mean = exact_sum(picked.iter().map(|&u| s.get(u, y))) / take as f64;
                *out = (1.0 - w) * s.get(v, y) + w * mean;
            }
        });
    Ok(ScoreMatrix::new(values, ScoreKind::Oracle, s.xi_seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scores(rows: &[&[f64]]) -> ScoreMatrix {
        let m =
            DenseMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap();
        ScoreMatrix::new(m, ScoreKind::Aps, 0)
    }

    fn graph(rows: Vec<Vec<(usize, f64)>>) -> SparseGraph {
        SparseGraph::from_rows(rows).unwrap()
    }

    #[test]
    fn zero_weights_are_identity() {
        let s = scores(&[&[0.1, 0.9], &[0.4, 0.6], &[0.7, 0.3]]);
        let knn = graph(vec![vec![(1, 0.9)], vec![(2, 0.5)], vec![(0, 0.2)]]);
        let adj = SparseGraph::from_sorted_arcs(3, &[(0, 1), (1, 0)]);
        let out = snaps_scores(&s, &knn, &adj, &SnapsParams::IDENTITY).unwrap();
        assert_eq!(out.values, s.values);
    }

    #[test]
    fn hand_mix() {
        // node 0: ego 0.4, knn neighbors 1 and 2 with weights giving mean 0.8,
        // structural neighbors 3 and 4 with mean 0.2
        let s = scores(&[&[0.4], &[0.7], &[0.9], &[0.1], &[0.3]]);
        let knn = graph(vec![
            vec![(1, 0.5), (2, 0.5)],
            vec![],
            vec![],
            vec![],
            vec![],
        ]);
        let adj = SparseGraph::from_sorted_arcs(5, &[(0, 3), (0, 4), (3, 0), (4, 0)]);
        let out = snaps_scores(&s, &knn, &adj, &SnapsParams::new(0.25, 0.25).unwrap()).unwrap();
        assert!((out.get(0, 0) - 0.45).abs() < 1e-12);
    }

    #[test]
    fn isolated_node_keeps_base_score() {
        let s = scores(&[&[0.4, 0.6], &[0.1, 0.9]]);
        let knn = SparseGraph::empty(2);
        let adj = SparseGraph::empty(2);
        let out = snaps_scores(&s, &knn, &adj, &SnapsParams::new(0.3, 0.5).unwrap()).unwrap();
        assert_eq!(out.values, s.values);
    }

    #[test]
    fn missing_knn_row_returns_lambda_to_ego() {
        let s = scores(&[&[0.4], &[0.8]]);
        let adj = SparseGraph::from_sorted_arcs(2, &[(0, 1), (1, 0)]);
        let out = snaps_scores(
            &s,
            &SparseGraph::empty(2),
            &adj,
            &SnapsParams::new(0.3, 0.5).unwrap(),
        )
        .unwrap();
        // (1 - 0.5) * 0.4 + 0.5 * 0.8
        assert!((out.get(0, 0) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn daps_hand_example_and_identity() {
        let s = scores(&[&[0.4], &[0.2], &[0.6]]);
        let adj = SparseGraph::from_sorted_arcs(3, &[(0, 1), (0, 2), (1, 0), (2, 0)]);
        let out = daps_scores(&s, &adj, 0.5).unwrap();
        assert!((out.get(0, 0) - 0.4).abs() < 1e-12);
        assert_eq!(daps_scores(&s, &adj, 0.0).unwrap().values, s.values);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(SnapsParams::new(0.6, 0.5).is_err());
        assert!(SnapsParams::new(-0.1, 0.5).is_err());
        let s = scores(&[&[0.4]]);
        assert!(daps_scores(&s, &SparseGraph::empty(1), 1.5).is_err());
        assert!(snaps_scores(
            &s,
            &SparseGraph::empty(2),
            &SparseGraph::empty(1),
            &SnapsParams::IDENTITY
        )
        .is_err());
    }

    #[test]
    fn oracle_identity_and_pairs() {
        let s = scores(&[&[0.2, 0.8], &[0.6, 0.4], &[0.9, 0.1]]);
        let labels = LabelVector::new(vec![0, 0, 1], 2).unwrap();
        assert_eq!(
            oracle_aggregate(&s, &labels, 0, 0.5, 1).unwrap().values,
            s.values
        );
        let out = oracle_aggregate(&s, &labels, 1, 0.5, 1).unwrap();
        // two-node class: both rows become the pair average
        assert!((out.get(0, 0) - 0.4).abs() < 1e-12 && (out.get(1, 0) - 0.4).abs() < 1e-12);
        assert!((out.get(0, 1) - 0.6).abs() < 1e-12 && (out.get(1, 1) - 0.6).abs() < 1e-12);
        // singleton class untouched
        assert_eq!(out.row(2), s.row(2));
    }

    #[test]
    fn oracle_full_class_gives_leave_one_out_mean() {
        let rows: Vec<Vec<f64>> = (0..6)
            .map(|i| vec![i as f64 / 10.0, 1.0 - i as f64 / 10.0])
            .collect();
        let s = ScoreMatrix::new(DenseMatrix::from_rows(&rows).unwrap(), ScoreKind::Aps, 0);
        let labels = LabelVector::new(vec![0, 1, 0, 1, 0, 1], 2).unwrap();
        let out = oracle_aggregate(&s, &labels, 2, 1.0, 5).unwrap();
        for v in 0..6 {
            let mates: Vec<usize> = (0..6)
                .filter(|&u| u != v && labels.get(u) == labels.get(v))
                .collect();
            for y in 0..2 {
                let mean = mates.iter().map(|&u| s.get(u, y)).sum::<f64>() / mates.len() as f64;
                assert!((out.get(v, y) - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn oracle_never_selects_self_or_other_classes() {
        // scores encode node ids, so w = 1 reveals the selected set's mean
        let n = 40;
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let s = ScoreMatrix::new(DenseMatrix::from_rows(&rows).unwrap(), ScoreKind::Aps, 0);
        let labels = LabelVector::new((0..n).map(|i| i % 4).collect(), 4).unwrap();
        let out = oracle_aggregate(&s, &labels, 1, 1.0, 11).unwrap();
        for v in 0..n {
            let u = out.get(v, 0) as usize;
            assert_ne!(u, v);
            assert_eq!(labels.get(u), labels.get(v));
        }
    }
}
