use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::{
    load_labels, load_matrix, write_labels, write_matrix, DenseMatrix, LabelVector, MatrixFormat,
};
use crate::error::{Error, Result};
use crate::graph::SparseGraph;

/// Tolerance on `|sum_k P[i,k] - 1|` for probability rows.
pub const PROBABILITY_TOLERANCE: f64 = 1e-4;

/// Features, predicted probabilities, labels and undirected edges of one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub name: String,
    pub features: DenseMatrix,
    pub probabilities: DenseMatrix,
    pub labels: LabelVector,
    /// Directed arcs, symmetrized, sorted and free of duplicates and self-loops.
    pub edges: Vec<(usize, usize)>,
    /// Self-loops removed while loading.
    pub dropped_self_loops: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BundleOptions {
    /// Rescale probability rows instead of rejecting them.
    pub renormalize: bool,
}

impl DatasetBundle {
    /// Validates and assembles a bundle from in-memory parts. `edges` may be
    /// directed, duplicated or contain self-loops; the stored arc list is
    /// canonical.
    pub fn new(
        name: impl Into<String>,
        features: DenseMatrix,
        mut probabilities: DenseMatrix,
        labels: LabelVector,
        edges: &[(usize, usize)],
        opts: BundleOptions,
    ) -> Result<Self> {
        let n = labels.len();
        for (what, m) in [("features", &features), ("probabilities", &probabilities)] {
            if m.rows() != n {
                return Err(Error::RowMismatch {
                    what: what.into(),
                    expected: n,
                    actual: m.rows(),
                });
            }
        }
        if probabilities.cols() != labels.classes() {
            return Err(Error::RowMismatch {
                what: "probability columns".into(),
                expected: labels.classes(),
                actual: probabilities.cols(),
            });
        }
        if opts.renormalize {
            probabilities.renormalize_rows();
        }
        probabilities.validate_stochastic(PROBABILITY_TOLERANCE)?;
        let (edges, dropped_self_loops) = canonical_arcs(n, edges)?;
        Ok(Self {
            name: name.into(),
            features,
            probabilities,
            labels,
            edges,
            dropped_self_loops,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.labels.len()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.classes()
    }

    /// Structural adjacency with unit weights.
    pub fn adjacency(&self) -> SparseGraph {
        SparseGraph::from_sorted_arcs(self.num_nodes(), &self.edges)
    }

    /// Fraction of undirected edges joining same-label nodes.
    pub fn edge_homophily(&self) -> f64 {
        if self.edges.is_empty() {
            return 0.0;
        }
        let same = self
            .edges
            .iter()
            .filter(|&&(u, v)| self.labels.get(u) == self.labels.get(v))
            .count();
        same as f64 / self.edges.len() as f64
    }
}

fn canonical_arcs(n: usize, edges: &[(usize, usize)]) -> Result<(Vec<(usize, usize)>, usize)> {
    let mut arcs = Vec::with_capacity(edges.len() * 2);
    let mut loops = 0;
    for &(u, v) in edges {
        for x in [u, v] {
            if x >= n {
                return Err(Error::NodeOutOfRange { index: x, n });
            }
        }
        if u == v {
            loops += 1;
            continue;
        }
        arcs.push((u, v));
        arcs.push((v, u));
    }
    arcs.sort_unstable();
    arcs.dedup();
    Ok((arcs, loops))
}

/// Parsed `key = value` manifest. Relative paths resolve against the
/// manifest's directory.
#[derive(Debug, Clone)]
pub struct Manifest {
    pub name: String,
    pub classes: usize,
    pub features: PathBuf,
    pub probabilities: PathBuf,
    pub labels: PathBuf,
    pub edges: PathBuf,
}

impl Manifest {
    pub fn parse(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let bad = |message: String| Error::Manifest {
            path: path.to_path_buf(),
            message,
        };

        let mut kv = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .or_else(|| line.split_once(':'))
                .ok_or_else(|| bad(format!("line {}: expected key = value", i + 1)))?;
            kv.insert(
                k.trim().to_ascii_lowercase(),
                v.trim().trim_matches('"').to_string(),
            );
        }
        let mut take = |key: &str| {
            kv.remove(key)
                .ok_or_else(|| bad(format!("missing key {key:?}")))
        };
        let resolve = |p: String| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let classes = take("classes")?;
        Ok(Self {
            classes: classes
                .parse()
                .map_err(|_| bad(format!("classes must be a count, got {classes:?}")))?,
            name: take("name")?,
            features: resolve(take("features")?),
            probabilities: resolve(take("probabilities")?),
            labels: resolve(take("labels")?),
            edges: resolve(take("edges")?),
        })
    }
}

pub fn load_bundle(manifest: impl AsRef<Path>) -> Result<DatasetBundle> {
    load_bundle_with(manifest, BundleOptions::default())
}

pub fn load_bundle_with(manifest: impl AsRef<Path>, opts: BundleOptions) -> Result<DatasetBundle> {
    let m = Manifest::parse(manifest)?;
    let features = load_matrix(&m.features, MatrixFormat::from_path(&m.features))?;
    let probabilities = load_matrix(&m.probabilities, MatrixFormat::from_path(&m.probabilities))?;
    let labels = load_labels(&m.labels, m.classes)?;
    let edges = load_edges(&m.edges)?;
    DatasetBundle::new(m.name, features, probabilities, labels, &edges, opts)
}

/// Whitespace- or comma-separated node pairs, one per line.
pub fn load_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut edges = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty());
        let mut next = || -> Result<usize> {
            parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("expected two node indices, got {line:?}"),
                })
        };
        let u = next()?;
        let v = next()?;
        edges.push((u, v));
    }
    Ok(edges)
}

/// Writes a bundle as binary matrices plus text labels/edges and a manifest.
/// Returns the manifest path.
pub fn write_bundle(dir: impl AsRef<Path>, bundle: &DatasetBundle) -> Result<PathBuf> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_matrix(
        dir.join("features.bin"),
        &bundle.features,
        MatrixFormat::Binary,
    )?;
    write_matrix(
        dir.join("probabilities.bin"),
        &bundle.probabilities,
        MatrixFormat::Binary,
    )?;
    write_labels(dir.join("labels.txt"), &bundle.labels)?;

    let mut edges = String::new();
    for &(u, v) in bundle.edges.iter().filter(|(u, v)| u < v) {
        edges.push_str(&format!("{u} {v}\n"));
    }
    let edge_path = dir.join("edges.txt");
    fs::write(&edge_path, edges).map_err(|e| Error::io(&edge_path, e))?;

    let manifest = format!(
        "name = {}\nclasses = {}\nfeatures = features.bin\nprobabilities = probabilities.bin\nlabels = labels.txt\nedges = edges.txt\n",
        bundle.name,
        bundle.num_classes()
    );
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
