//! Compressed-row adjacency and the cosine-similarity k-NN graph.

mod cache;
mod knn;

pub use cache::{
    build_knn_cached, feature_file_hash, read_knn_cache, write_knn_cache, KnnCacheKey,
};
pub use knn::{
    build_knn_graph, cosine_similarity, top_k_by_similarity, zero_norm_rows, KnnConfig,
    SimilarityIndex, EXACT_MODE_LIMIT,
};

use crate::error::{Error, Result};
use crate::numeric::exact_sum;

/// Weighted directed graph in compressed-row form.
///
/// Row `i` lists the out-arcs of node `i`. Structural graphs carry unit weights
/// and are stored symmetrized; k-NN graphs are directed and carry similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    weights: Vec<f64>,
    degrees: Vec<f64>,
}

impl SparseGraph {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            row_offsets: vec![0; n + 1],
            col_indices: Vec::new(),
            weights: Vec::new(),
            degrees: vec![0.0; n],
        }
    }

    /// Unit-weight graph from arcs sorted by `(source, target)` without duplicates.
    pub fn from_sorted_arcs(n: usize, arcs: &[(usize, usize)]) -> Self {
        debug_assert!(arcs.windows(2).all(|w| w[0] < w[1]));
        let mut row_offsets = vec![0; n + 1];
        for &(u, _) in arcs {
            row_offsets[u + 1] += 1;
        }
        for i in 0..n {
            row_offsets[i + 1] += row_offsets[i];
        }
        let col_indices: Vec<usize> = arcs.iter().map(|&(_, v)| v).collect();
        let weights = vec![1.0; col_indices.len()];
        let degrees = (0..n)
            .map(|i| (row_offsets[i + 1] - row_offsets[i]) as f64)
            .collect();
        Self {
            n,
            row_offsets,
            col_indices,
            weights,
            degrees,
        }
    }

    /// Builds from per-row `(target, weight)` lists, keeping row order.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = rows.len();
        let nnz = rows.iter().map(Vec::len).sum();
        let mut row_offsets = Vec::with_capacity(n + 1);
        let mut col_indices = Vec::with_capacity(nnz);
        let mut weights = Vec::with_capacity(nnz);
        let mut degrees = Vec::with_capacity(n);
        let mut seen = vec![usize::MAX; n];
        row_offsets.push(0);
        for (i, row) in rows.into_iter().enumerate() {
            for &(j, w) in &row {
                if j >= n {
                    return Err(Error::NodeOutOfRange { index: j, n });
                }
                if seen[j] == i {
                    return Err(Error::InvalidParameter(format!("duplicate arc ({i}, {j})")));
                }
                if !w.is_finite() {
                    return Err(Error::NonFinite {
                        row: i,
                        col: j,
                        value: w,
                    });
                }
                seen[j] = i;
                col_indices.push(j);
                weights.push(w);
            }
            degrees.push(exact_sum(row.iter().map(|&(_, w)| w)));
            row_offsets.push(col_indices.len());
        }
        Ok(Self {
            n,
            row_offsets,
            col_indices,
            weights,
            degrees,
        })
    }

    pub(crate) fn from_raw(
        n: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        if row_offsets.len() != n + 1
            || row_offsets[0] != 0
            || row_offsets.windows(2).any(|w| w[0] > w[1])
            || row_offsets[n] != col_indices.len()
            || weights.len() != col_indices.len()
        {
            return Err(Error::InvalidParameter(
                "inconsistent compressed-row arrays".into(),
            ));
        }
        let rows = (0..n)
            .map(|i| {
                let r = row_offsets[i]..row_offsets[i + 1];
                col_indices[r.clone()]
                    .iter()
                    .copied()
                    .zip(weights[r].iter().copied())
                    .collect()
            })
            .collect();
        Self::from_rows(rows)
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_arcs(&self) -> usize {
        self.col_indices.len()
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    #[inline]
    pub fn weights(&self, i: usize) -> &[f64] {
        &self.weights[self.row_offsets[i]..self.row_offsets[i + 1]]
    }

    /// Weighted out-degree.
    #[inline]
    pub fn degree(&self, i: usize) -> f64 {
        self.degrees[i]
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn all_weights(&self) -> &[f64] {
        &self.weights
    }

    /// Arc weight, or `None` when absent.
    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        self.neighbors(i)
            .iter()
            .position(|&c| c == j)
            .map(|p| self.weights(i)[p])
    }
}

/// Scales each nonempty row to sum to one (`D^-1 A`). Empty rows stay empty.
pub fn row_normalize(g: &SparseGraph) -> Result<SparseGraph> {
    let mut out = g.clone();
    for i in 0..g.n {
        let range = g.row_offsets[i]..g.row_offsets[i + 1];
        if let Some(&w) = g.weights[range.clone()].iter().find(|&&w| w < 0.0) {
            return Err(Error::NegativeWeight { row: i, weight: w });
        }
        let d = g.degrees[i];
        if range.is_empty() || d == 0.0 {
            continue;
        }
        for w in &mut out.weights[range.clone()] {
            *w /= d;
        }
        out.degrees[i] = exact_sum(out.weights[range].iter().copied());
    }
    Ok(out)
}
