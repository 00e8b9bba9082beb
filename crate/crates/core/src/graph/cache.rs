//! Sidecar cache for built k-NN graphs.
//!
//! Layout (little-endian): magic `SNPG`, `n: u32`, `nnz: u32`, 32-byte SHA-256
//! of the feature file, `k: u32`, `sample_size: u32` (0 = exact), `seed: u64`,
//! `min_similarity: f64`, then `n + 1` row offsets (`u32`), `nnz` column
//! indices (`u32`) and `nnz` weights (`f64`).

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{build_knn_graph, KnnConfig, SparseGraph};
use crate::error::{Error, Result};
use crate::matrixio::DenseMatrix;

pub const GRAPH_MAGIC: &[u8; 4] = b"SNPG";

/// Identifies the inputs a cached graph was built from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnnCacheKey {
    pub feature_hash: [u8; 32],
    pub k: u32,
    pub sample_size: u32,
    pub seed: u64,
    pub min_similarity: f64,
}

impl KnnCacheKey {
    pub fn new(feature_hash: [u8; 32], cfg: &KnnConfig) -> Self {
        Self {
            feature_hash,
            k: cfg.k as u32,
            sample_size: cfg.sample_size.unwrap_or(0) as u32,
            seed: cfg.seed,
            min_similarity: cfg.min_similarity,
        }
    }
}

pub fn feature_file_hash(path: impl AsRef<Path>) -> Result<[u8; 32]> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).into())
}

pub fn write_knn_cache(
    path: impl AsRef<Path>,
    graph: &SparseGraph,
    key: &KnnCacheKey,
) -> Result<()> {
    let path = path.as_ref();
    let n = graph.num_nodes();
    let nnz = graph.num_arcs();
    let mut out = Vec::with_capacity(72 + (n + 1) * 4 + nnz * 12);
    out.extend_from_slice(GRAPH_MAGIC);
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(nnz as u32).to_le_bytes());
    out.extend_from_slice(&key.feature_hash);
    out.extend_from_slice(&key.k.to_le_bytes());
    out.extend_from_slice(&key.sample_size.to_le_bytes());
    out.extend_from_slice(&key.seed.to_le_bytes());
    out.extend_from_slice(&key.min_similarity.to_le_bytes());
    for &o in graph.row_offsets() {
        out.extend_from_slice(&(o as u32).to_le_bytes());
    }
    for &c in graph.col_indices() {
        out.extend_from_slice(&(c as u32).to_le_bytes());
    }
    for &w in graph.all_weights() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, len: usize) -> Option<&'a [u8]> {
        let s = self.buf.get(self.pos..self.pos + len)?;
        self.pos += len;
        Some(s)
    }
    fn u32(&mut self) -> Option<u32> {
        self.take(4)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
    fn u64(&mut self) -> Option<u64> {
        self.take(8)
            .map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
    fn f64(&mut self) -> Option<f64> {
        self.u64().map(f64::from_bits)
    }
}

pub fn read_knn_cache(path: impl AsRef<Path>) -> Result<(KnnCacheKey, SparseGraph)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 || &bytes[..4] != GRAPH_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "SNPG",
        });
    }
    let mut c = Cursor {
        buf: &bytes,
        pos: 4,
    };
    let truncated = || Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: "truncated graph cache".into(),
    };
    let n = c.u32().ok_or_else(truncated)? as usize;
    let nnz = c.u32().ok_or_else(truncated)? as usize;
    let key = KnnCacheKey {
        feature_hash: c.take(32).ok_or_else(truncated)?.try_into().unwrap(),
        k: c.u32().ok_or_else(truncated)?,
        sample_size: c.u32().ok_or_else(truncated)?,
        seed: c.u64().ok_or_else(truncated)?,
        min_similarity: c.f64().ok_or_else(truncated)?,
    };
    let expected_len = c.pos + (n + 1) * 4 + nnz * 12;
    if bytes.len() != expected_len {
        return Err(Error::DimensionMismatch {
            rows: n,
            cols: nnz,
            expected: expected_len,
            actual: bytes.len(),
        });
    }
    let offsets = (0..=n).map(|_| c.u32().unwrap() as usize).collect();
    let cols = (0..nnz).map(|_| c.u32().unwrap() as usize).collect();
    let weights = (0..nnz).map(|_| c.f64().unwrap()).collect();
    Ok((key, SparseGraph::from_raw(n, offsets, cols, weights)?))
}

/// Loads the graph from `cache` when its key matches, otherwise builds it and
/// writes the cache. Returns the graph and whether the cache was hit.
pub fn build_knn_cached(
    features: &DenseMatrix,
    feature_path: impl AsRef<Path>,
    cfg: &KnnConfig,
    cache: impl AsRef<Path>,
) -> Result<(SparseGraph, bool)> {
    let key = KnnCacheKey::new(feature_file_hash(feature_path)?, cfg);
    let cache = cache.as_ref();
    if cache.exists() {
        if let Ok((found, graph)) = read_knn_cache(cache) {
            if found == key && graph.num_nodes() == features.rows() {
                return Ok((graph, true));
            }
        }
    }
    let graph = build_knn_graph(features, cfg)?;
    write_knn_cache(cache, &graph, &key)?;
    Ok((graph, false))
}
