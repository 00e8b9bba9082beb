use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::SparseGraph;
use crate::error::{Error, Result};
use crate::matrixio::DenseMatrix;

/// Above this node count the exact builder must be forced explicitly.
pub const EXACT_MODE_LIMIT: usize = 50_000;

/// k-NN graph construction parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnConfig {
    pub k: usize,
    /// Candidate pool size per row for large graphs; `None` compares against all nodes.
    pub sample_size: Option<usize>,
    pub seed: u64,
    /// Arcs with similarity at or below this value are dropped.
    pub min_similarity: f64,
    /// Allow exact mode above [`EXACT_MODE_LIMIT`] nodes.
    pub force_exact: bool,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self {
            k: 20,
            sample_size: None,
            seed: 0,
            min_similarity: 0.0,
            force_exact: false,
        }
    }
}

impl KnnConfig {
    pub fn exact(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.k > 0 && self.k >= n {
            return Err(Error::InvalidParameter(format!(
                "k = {} must be below node count {n}",
                self.k
            )));
        }
        if !self.min_similarity.is_finite() {
            return Err(Error::InvalidParameter(
                "min_similarity must be finite".into(),
            ));
        }
        match self.sample_size {
            Some(m) => {
                if m > n {
                    return Err(Error::InvalidParameter(format!(
                        "sample size {m} exceeds node count {n}"
                    )));
                }
                if m < 10 * self.k {
                    return Err(Error::InvalidParameter(format!(
                        "sample size {m} must be at least 10 * k = {}",
                        10 * self.k
                    )));
                }
            }
            None if n > EXACT_MODE_LIMIT && !self.force_exact => {
                return Err(Error::InvalidParameter(format!(
                    "{n} nodes exceeds the exact-mode limit {EXACT_MODE_LIMIT}; set a sample size or force exact mode"
                )));
            }
            None => {}
        }
        Ok(())
    }
}

/// `x.y / (|x| |y|)`, or 0 when either norm vanishes.
pub fn cosine_similarity(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidParameter(format!(
            "cosine similarity of vectors with dimensions {} and {}",
            x.len(),
            y.len()
        )));
    }
    Ok(cosine_with_norms(x, y, norm(x), norm(y)))
}

#[inline]
fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[inline]
fn cosine_with_norms(x: &[f64], y: &[f64], nx: f64, ny: f64) -> f64 {
    if nx == 0.0 || ny == 0.0 {
        return 0.0;
    }
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (dot / (nx * ny)).clamp(-1.0, 1.0)
}

/// Higher similarity first, smaller index on ties.
#[inline]
fn rank_order(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

fn keep_top_k(mut cands: Vec<(f64, usize)>, k: usize) -> Vec<(f64, usize)> {
    if cands.len() > k {
        if k > 0 {
            cands.select_nth_unstable_by(k - 1, rank_order);
        }
        cands.truncate(k);
    }
    cands.sort_unstable_by(rank_order);
    cands
}

/// Rows whose feature vector has zero norm; they receive no k-NN arcs.
pub fn zero_norm_rows(features: &DenseMatrix) -> Vec<usize> {
    features
        .row_iter()
        .enumerate()
        .filter(|(_, r)| norm(r) == 0.0)
        .map(|(i, _)| i)
        .collect()
}

/// Builds the directed cosine k-NN graph: row `i` holds the `k` most similar
/// candidates `j != i` with weight `Sim(i, j)`, ordered by descending
/// similarity (index breaks ties).
///
/// In sampled mode one random ordering of all nodes is drawn per build, and
/// each row's pool is the first `M` nodes of that ordering other than itself,
/// so the cost is `O(n M d)`.
pub fn build_knn_graph(features: &DenseMatrix, cfg: &KnnConfig) -> Result<SparseGraph> {
    let n = features.rows();
    cfg.validate(n)?;
    if cfg.k == 0 {
        return Ok(SparseGraph::empty(n));
    }
    let norms: Vec<f64> = features.row_iter().map(norm).collect();
    let pool: Option<Vec<usize>> = cfg.sample_size.map(|_| {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
        order
    });

    let rows: Vec<Vec<(usize, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            if norms[i] == 0.0 {
                return Vec::new();
            }
            let xi = features.row(i);
            let score = |j: usize| {
                (
                    cosine_with_norms(xi, features.row(j), norms[i], norms[j]),
                    j,
                )
            };
            let cands: Vec<(f64, usize)> = match (&pool, cfg.sample_size) {
                (Some(order), Some(m)) => order
                    .iter()
                    .copied()
                    .filter(|&j| j != i)
                    .take(m)
                    .map(score)
                    .filter(|&(s, _)| s > cfg.min_similarity)
                    .collect(),
                _ => (0..n)
                    .filter(|&j| j != i)
                    .map(score)
                    .filter(|&(s, _)| s > cfg.min_similarity)
                    .collect(),
            };
            keep_top_k(cands, cfg.k)
                .into_iter()
                .map(|(s, j)| (j, s))
                .collect()
        })
        .collect();
    SparseGraph::from_rows(rows)
}

/// The `k` rows of `pool` most cosine-similar to `query`, as `(row, similarity)`
/// in descending similarity order. `exclude` removes one pool row (the query
/// itself when it belongs to the pool). No similarity threshold is applied.
pub fn top_k_by_similarity(
    query: &[f64],
    pool: &DenseMatrix,
    k: usize,
    exclude: Option<usize>,
) -> Vec<(usize, f64)> {
    SimilarityIndex::new(pool).top_k(query, k, exclude)
}

/// A pool of rows with cached norms for repeated [`top_k_by_similarity`] queries.
#[derive(Debug, Clone)]
pub struct SimilarityIndex<'a> {
    pool: &'a DenseMatrix,
    norms: Vec<f64>,
}

impl<'a> SimilarityIndex<'a> {
    pub fn new(pool: &'a DenseMatrix) -> Self {
        Self {
            pool,
            norms: pool.row_iter().map(norm).collect(),
        }
    }

    pub fn top_k(&self, query: &[f64], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
        let nq = norm(query);
        let cands = (0..self.pool.rows())
            .filter(|&j| Some(j) != exclude)
            .map(|j| {
                (
                    cosine_with_norms(query, self.pool.row(j), nq, self.norms[j]),
                    j,
                )
            })
            .collect();
        keep_top_k(cands, k)
            .into_iter()
            .map(|(s, j)| (j, s))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[3.0, 4.0], &[4.0, 3.0]).unwrap() - 0.96).abs() < 1e-12);
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!(cosine_similarity(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn three_node_example() {
        let f = m(&[&[1.0, 0.0], &[1.0, 0.01], &[0.0, 1.0]]);
        let g = build_knn_graph(&f, &KnnConfig::exact(1)).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
        assert_eq!(g.neighbors(2), &[1]);
    }

    #[test]
    fn k_zero_is_empty() {
        let f = m(&[&[1.0, 0.0], &[1.0, 0.01], &[0.0, 1.0]]);
        let g = build_knn_graph(&f, &KnnConfig::exact(0)).unwrap();
        assert_eq!(g.num_arcs(), 0);
        assert!(g.degrees().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn duplicate_rows_pick_each_other() {
        let f = m(&[&[2.0, 1.0], &[2.0, 1.0], &[-1.0, 3.0]]);
        let g = build_knn_graph(&f, &KnnConfig::exact(1)).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
        assert!((g.weights(0)[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ties_break_by_index_and_zero_rows_get_nothing() {
        let f = m(&[&[1.0, 0.0], &[1.0, 0.0], &[1.0, 0.0], &[0.0, 0.0]]);
        let g = build_knn_graph(&f, &KnnConfig::exact(1)).unwrap();
        assert_eq!(g.neighbors(2), &[0]);
        assert!(g.neighbors(3).is_empty());
        assert_eq!(zero_norm_rows(&f), vec![3]);
    }

    #[test]
    fn rejects_k_at_least_n() {
        let f = m(&[&[1.0], &[2.0]]);
        assert!(build_knn_graph(&f, &KnnConfig::exact(2)).is_err());
    }

    #[test]
    fn sample_size_rules() {
        let cfg = KnnConfig {
            k: 2,
            sample_size: Some(15),
            ..KnnConfig::default()
        };
        assert!(cfg.validate(100).is_err());
        assert!(KnnConfig {
            sample_size: Some(20),
            ..cfg
        }
        .validate(100)
        .is_ok());
        assert!(KnnConfig {
            sample_size: Some(101),
            ..cfg
        }
        .validate(100)
        .is_err());
        assert!(KnnConfig::exact(2).validate(EXACT_MODE_LIMIT + 1).is_err());
        assert!(KnnConfig {
            force_exact: true,
            ..KnnConfig::exact(2)
        }
        .validate(EXACT_MODE_LIMIT + 1)
        .is_ok());
    }

    #[test]
    fn negative_similarities_dropped_by_default() {
        let f = m(&[&[1.0, 0.0], &[-1.0, 0.1], &[-1.0, -0.1]]);
        let g = build_knn_graph(&f, &KnnConfig::exact(1)).unwrap();
        assert!(g.neighbors(0).is_empty());
        assert_eq!(g.neighbors(1), &[2]);
    }
}
