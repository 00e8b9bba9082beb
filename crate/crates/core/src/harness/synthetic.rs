//! Planted-partition graphs with class-dependent features and noisy softmax
//! probabilities.

use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrixio::{BundleOptions, DatasetBundle, DenseMatrix, LabelVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub classes: usize,
    pub dim: usize,
    /// Target fraction of intra-class edges.
    pub homophily: f64,
    /// Norm of the class mean in feature space and the true-class logit margin.
    pub class_sep: f64,
    /// Standard deviation of per-class logit noise.
    pub noise: f64,
    /// Standard deviation of per-coordinate feature noise.
    pub feature_noise: f64,
    pub avg_degree: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 5000,
            classes: 8,
            dim: 16,
            homophily: 0.8,
            class_sep: 2.0,
            noise: 1.0,
            feature_noise: 1.0,
            avg_degree: 10.0,
            seed: 0,
        }
    }
}

fn pairs(n: usize) -> u64 {
    (n as u64) * (n as u64).saturating_sub(1) / 2
}

/// Generates a bundle:
///
/// * labels are balanced (class counts differ by at most one), randomly placed;
/// * `n * avg_degree / 2` distinct undirected edges, of which
///   `round(homophily * E)` join same-class pairs, each drawn uniformly;
/// * features are `class_sep * m_y + feature_noise * N(0, I)`, with class means
///   `m_c` orthonormal when `dim >= classes` and random unit vectors otherwise;
/// * probabilities are `softmax(class_sep * e_y + noise * N(0, I))`.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<DatasetBundle> {
    let (n, k) = (cfg.n, cfg.classes);
    if k == 0 || n < 40 * k {
        return Err(Error::InvalidParameter(format!(
            "need n >= 40 * classes, got n = {n}, classes = {k}"
        )));
    }
    if !(0.0..=1.0).contains(&cfg.homophily) {
        return Err(Error::InvalidParameter(format!(
            "homophily {} outside [0, 1]",
            cfg.homophily
        )));
    }
    if cfg.dim == 0 || cfg.noise < 0.0 || cfg.feature_noise < 0.0 || cfg.avg_degree < 0.0 {
        return Err(Error::InvalidParameter(
            "dim must be positive and noise levels non-negative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut labels: Vec<usize> = (0..n).map(|i| i % k).collect();
    labels.shuffle(&mut rng);
    let labels = LabelVector::new(labels, k)?;
    let members = labels.class_members();

    let edges = planted_edges(&members, &labels, cfg, &mut rng)?;

    let means: Vec<Vec<f64>> = (0..k)
        .map(|c| {
            if cfg.dim >= k {
                (0..cfg.dim)
                    .map(|j| if j == c { 1.0 } else { 0.0 })
                    .collect()
            } else {
                let v: Vec<f64> = (0..cfg.dim).map(|_| rng.sample(StandardNormal)).collect();
                let norm = v
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt()
                    .max(f64::MIN_POSITIVE);
                v.into_iter().map(|x| x / norm).collect()
            }
        })
        .collect();
    let mut features = Vec::with_capacity(n * cfg.dim);
    let mut probs = Vec::with_capacity(n * k);
    let mut logits = vec![0.0; k];
    for i in 0..n {
        let y = labels.get(i);
        for mean in &means[y] {
            let e: f64 = StandardNormal.sample(&mut rng);
            features.push(cfg.class_sep * mean + cfg.feature_noise * e);
        }
        for (c, z) in logits.iter_mut().enumerate() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *z = if c == y { cfg.class_sep } else { 0.0 } + cfg.noise * e;
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logits.iter().map(|z| (z - max).exp()).sum();
        probs.extend(logits.iter().map(|z| (z - max).exp() / total));
    }

    DatasetBundle::new(
        format!("synthetic-n{n}-k{k}-h{}", cfg.homophily),
        DenseMatrix::new(n, cfg.dim, features)?,
        DenseMatrix::new(n, k, probs)?,
        labels,
        &edges,
        BundleOptions::default(),
    )
}

fn planted_edges(
    members: &[Vec<usize>],
    labels: &LabelVector,
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(usize, usize)>> {
    let n = labels.len();
    let total = (n as f64 * cfg.avg_degree / 2.0).round() as u64;
    let intra_target = (cfg.homophily * total as f64).round() as u64;
    let inter_target = total - intra_target;
    let intra_pairs: u64 = members.iter().map(|m| pairs(m.len())).sum();
    let inter_pairs = pairs(n) - intra_pairs;
    if intra_target > intra_pairs || inter_target > inter_pairs {
        return Err(Error::InfeasibleGraph(format!(
            "{intra_target} intra-class edges of {intra_pairs} pairs and {inter_target} inter-class of {inter_pairs}"
        )));
    }

    let mut chosen: HashSet<(usize, usize)> = HashSet::with_capacity(total as usize);
    let class_weights: Vec<u64> = members.iter().map(|m| pairs(m.len())).collect();
    let mut edges = Vec::with_capacity(total as usize);

    let mut draw =
        |target: u64, available: u64, intra: bool, chosen: &mut HashSet<(usize, usize)>| {
            if target == 0 {
                return;
            }
            if target * 2 > available {
                // dense regime: enumerate and subsample
                let all: Vec<(usize, usize)> = (0..n)
                    .flat_map(|u| (u + 1..n).map(move |v| (u, v)))
                    .filter(|&(u, v)| (labels.get(u) == labels.get(v)) == intra)
                    .collect();
                for p in index::sample(rng, all.len(), target as usize) {
                    chosen.insert(all[p]);
                    edges.push(all[p]);
                }
                return;
            }
            let mut got = 0;
            while got < target {
                let (u, v) = if intra {
                    let mut r = rng.random_range(0..intra_pairs);
                    let c = class_weights
                        .iter()
                        .position(|&w| {
                            if r < w {
                                true
                            } else {
                                r -= w;
                                false
                            }
                        })
                        .unwrap();
                    let m = &members[c];
                    let a = rng.random_range(0..m.len());
                    let mut b = rng.random_range(0..m.len() - 1);
                    if b >= a {
                        b += 1;
                    }
                    (m[a], m[b])
                } else {
                    let u = rng.random_range(0..n);
                    let v = rng.random_range(0..n);
                    if labels.get(u) == labels.get(v) {
                        continue;
                    }
                    (u, v)
                };
                let key = (u.min(v), u.max(v));
                if chosen.insert(key) {
                    edges.push(key);
                    got += 1;
                }
            }
        };
    draw(intra_target, intra_pairs, true, &mut chosen);
    draw(inter_target, inter_pairs, false, &mut chosen);
    Ok(edges)
}
