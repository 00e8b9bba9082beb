//! Coverage, set size, singleton hit ratio and size-stratified coverage violation.

use serde::{Deserialize, Serialize};

use crate::conformal::PredictionSets;
use crate::error::{Error, Result};
use crate::matrixio::LabelVector;

/// Set-size strata used by SSCV, inclusive bounds.
pub const SSCV_STRATA: [(usize, usize); 5] = [(0, 1), (2, 3), (4, 10), (11, 100), (101, 1000)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub coverage: f64,
    pub size: f64,
    pub sh: f64,
    /// `None` when no stratum is populated.
    pub sscv: Option<f64>,
    pub n_eval: usize,
}

/// Integer tallies behind a [`MetricSummary`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SetCounts {
    pub covered: usize,
    pub total_size: usize,
    pub singleton_hits: usize,
    pub n: usize,
}

fn label_of(sets: &PredictionSets, labels: &LabelVector, r: usize) -> Result<usize> {
    let node = sets.nodes()[r];
    if node >= labels.len() {
        return Err(Error::NodeOutOfRange {
            index: node,
            n: labels.len(),
        });
    }
    Ok(labels.get(node))
}

pub fn count_sets(sets: &PredictionSets, labels: &LabelVector) -> Result<SetCounts> {
    let mut c = SetCounts {
        n: sets.len(),
        ..SetCounts::default()
    };
    for r in 0..sets.len() {
        let y = label_of(sets, labels, r)?;
        let size = sets.size(r);
        let hit = sets.contains(r, y);
        c.total_size += size;
        c.covered += hit as usize;
        c.singleton_hits += (hit && size == 1) as usize;
    }
    Ok(c)
}

/// Summary metrics over the evaluated nodes of `sets`; SSCV uses the
/// threshold's `alpha`.
pub fn evaluate(sets: &PredictionSets, labels: &LabelVector) -> Result<MetricSummary> {
    if sets.is_empty() {
        return Err(Error::EmptySet("evaluation"));
    }
    let c = count_sets(sets, labels)?;
    let n = c.n as f64;
    Ok(MetricSummary {
        coverage: c.covered as f64 / n,
        size: c.total_size as f64 / n,
        sh: c.singleton_hits as f64 / n,
        sscv: sscv(sets, labels, sets.threshold.alpha)?,
        n_eval: c.n,
    })
}

/// Largest absolute gap between per-stratum coverage and `1 - alpha`, over
/// populated strata only.
pub fn sscv(sets: &PredictionSets, labels: &LabelVector, alpha: f64) -> Result<Option<f64>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "alpha {alpha} outside (0, 1)"
        )));
    }
    let k = sets.num_classes();
    let strata: Vec<(usize, usize)> = SSCV_STRATA
        .iter()
        .copied()
        .filter(|&(lo, _)| lo <= k)
        .collect();
    let mut hits = vec![0usize; strata.len()];
    let mut counts = vec![0usize; strata.len()];
    for r in 0..sets.len() {
        let size = sets.size(r);
        if let Some(s) = strata
            .iter()
            .position(|&(lo, hi)| (lo..=hi).contains(&size))
        {
            counts[s] += 1;
            hits[s] += sets.contains(r, label_of(sets, labels, r)?) as usize;
        }
    }
    let target = 1.0 - alpha;
    Ok(hits
        .iter()
        .zip(&counts)
        .filter(|(_, &c)| c > 0)
        .map(|(&h, &c)| (h as f64 / c as f64 - target).abs())
        .reduce(f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::CalibratedThreshold;

    fn sets(k: usize, lists: &[Vec<usize>], alpha: f64) -> PredictionSets {
        let t = CalibratedThreshold::from_scores(&[0.5; 50], alpha).unwrap();
        PredictionSets::from_label_lists(k, (0..lists.len()).collect(), lists, t).unwrap()
    }

    #[test]
    fn hand_example() {
        let s = sets(3, &[vec![0], vec![0, 1], vec![2]], 0.1);
        let labels = LabelVector::new(vec![0, 1, 0], 3).unwrap();
        let m = evaluate(&s, &labels).unwrap();
        assert!((m.coverage - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.size - 4.0 / 3.0).abs() < 1e-15);
        assert!((m.sh - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.n_eval, 3);
    }

    #[test]
    fn full_and_empty_sets() {
        let labels = LabelVector::new(vec![0, 1, 2, 3], 4).unwrap();
        let full = evaluate(&sets(4, &vec![vec![0, 1, 2, 3]; 4], 0.1), &labels).unwrap();
        assert_eq!((full.coverage, full.size, full.sh), (1.0, 4.0, 0.0));
        let empty = evaluate(&sets(4, &vec![vec![]; 4], 0.1), &labels).unwrap();
        assert_eq!((empty.coverage, empty.size, empty.sh), (0.0, 0.0, 0.0));
    }

    #[test]
    fn empty_eval_errors() {
        let labels = LabelVector::new(vec![], 2).unwrap();
        assert!(matches!(
            evaluate(&sets(2, &[], 0.1), &labels),
            Err(Error::EmptySet(_))
        ));
    }

    #[test]
    fn sscv_two_strata() {
        // stratum 0-1: 20 singletons, 19 covered (0.95); stratum 2-3: 20 pairs, 17 covered (0.85)
        let mut lists = vec![vec![0]; 20];
        lists.extend(vec![vec![0, 1]; 20]);
        let mut labels = vec![0; 40];
        labels[0] = 1;
        for l in labels.iter_mut().skip(20).take(3) {
            *l = 2;
        }
        let s = sets(4, &lists, 0.1);
        let v = sscv(&s, &LabelVector::new(labels, 4).unwrap(), 0.1)
            .unwrap()
            .unwrap();
        assert!((v - 0.05).abs() < 1e-12);
    }

    #[test]
    fn sscv_single_stratum_full_coverage() {
        let s = sets(2, &vec![vec![0]; 10], 0.1);
        let v = sscv(&s, &LabelVector::new(vec![0; 10], 2).unwrap(), 0.1)
            .unwrap()
            .unwrap();
        assert!((v - 0.1).abs() < 1e-12);
    }

    #[test]
    fn sscv_exact_target_is_zero() {
        // 9 of 10 covered in each of two strata
        let mut lists = vec![vec![0]; 10];
        lists.extend(vec![vec![0, 1]; 10]);
        let mut labels = vec![0; 20];
        labels[0] = 1;
        labels[10] = 2;
        let s = sets(3, &lists, 0.1);
        let v = sscv(&s, &LabelVector::new(labels, 3).unwrap(), 0.1)
            .unwrap()
            .unwrap();
        assert!(v < 1e-12);
    }
}
