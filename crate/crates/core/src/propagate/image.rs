use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::SimilarityIndex;
use crate::matrixio::DenseMatrix;
use crate::numeric::exact_sum;
use crate::scores::{ScoreKind, ScoreMatrix};

/// Corrected calibration and test scores for graph-free data.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageScores {
    pub calib: ScoreMatrix,
    pub test: ScoreMatrix,
}

/// Mixes each row with the mean score row of its `k` most cosine-similar
/// calibration examples: `(1 - eta) s(x) + eta * mean_{x' in N(x)} s(x')`.
///
/// Calibration rows use the other calibration rows as neighbors. Rows whose
/// features have zero norm keep their base scores.
pub fn image_snaps(
    test_scores: &ScoreMatrix,
    calib_scores: &ScoreMatrix,
    test_features: &DenseMatrix,
    calib_features: &DenseMatrix,
    k: usize,
    eta: f64,
) -> Result<ImageScores> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidParameter(format!("eta {eta} outside [0, 1]")));
    }
    let n_cal = calib_scores.num_nodes();
    if k > n_cal {
        return Err(Error::InvalidParameter(format!(
            "k = {k} exceeds calibration size {n_cal}"
        )));
    }
    for (what, m, expected) in [
        ("calibration features", calib_features.rows(), n_cal),
        (
            "test features",
            test_features.rows(),
            test_scores.num_nodes(),
        ),
    ] {
        if m != expected {
            return Err(Error::RowMismatch {
                what: what.into(),
                expected,
                actual: m,
            });
        }
    }
    if calib_features.cols() != test_features.cols()
        || calib_scores.num_classes() != test_scores.num_classes()
    {
        return Err(Error::InvalidParameter(
            "calibration and test column counts differ".into(),
        ));
    }

    let index = SimilarityIndex::new(calib_features);
    let correct = |scores: &ScoreMatrix, feats: &DenseMatrix, exclude_self: bool| -> ScoreMatrix {
        let kc = scores.num_classes();
        let mut values = scores.values.clone();
        if eta > 0.0 && k > 0 {
            values
                .data_mut()
                .par_chunks_mut(kc.max(1))
                .enumerate()
                .for_each(|(i, dst)| {
                    let q = feats.row(i);
                    if q.iter().all(|&v| v == 0.0) {
                        return;
                    }
                    let nbrs = index.top_k(q, k, exclude_self.then_some(i));
                    if nbrs.is_empty() {
                        return;
                    }
                    for (y, out) in dst.iter_mut().enumerate() {
                        let mean = exact_sum(nbrs.iter().map(|&(j, _)| calib_scores.get(j, y)))
                            / nbrs.len() as f64;
                        *out = (1.0 - eta) * scores.get(i, y) + eta * mean;
                    }
                });
        }
        ScoreMatrix::new(values, ScoreKind::Image, scores.xi_seed)
    };

    Ok(ImageScores {
        calib: correct(calib_scores, calib_features, true),
        test: correct(test_scores, test_features, false),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn sm(rows: &[&[f64]]) -> ScoreMatrix {
        ScoreMatrix::new(mat(rows), ScoreKind::Aps, 0)
    }

    fn fixture() -> (ScoreMatrix, ScoreMatrix, DenseMatrix, DenseMatrix) {
        let sc = sm(&[&[0.1, 0.9], &[0.3, 0.7], &[0.8, 0.2], &[0.6, 0.4]]);
        let st = sm(&[&[0.5, 0.5], &[0.2, 0.8]]);
        let fc = mat(&[&[1.0, 0.0], &[0.9, 0.1], &[0.0, 1.0], &[0.1, 0.9]]);
        let ft = mat(&[&[1.0, 0.05], &[0.0, 0.0]]);
        (st, sc, ft, fc)
    }

    #[test]
    fn eta_zero_is_identity() {
        let (st, sc, ft, fc) = fixture();
        let out = image_snaps(&st, &sc, &ft, &fc, 2, 0.0).unwrap();
        assert_eq!(out.test.values, st.values);
        assert_eq!(out.calib.values, sc.values);
    }

    #[test]
    fn full_neighborhood_gives_calibration_mean() {
        let (st, sc, ft, fc) = fixture();
        let out = image_snaps(&st, &sc, &ft, &fc, 4, 1.0).unwrap();
        let mean = [(0.1 + 0.3 + 0.8 + 0.6) / 4.0, (0.9 + 0.7 + 0.2 + 0.4) / 4.0];
        for y in 0..2 {
            assert!((out.test.get(0, y) - mean[y]).abs() < 1e-12);
        }
        // zero-norm test row falls back to its base score
        assert_eq!(out.test.row(1), st.row(1));
    }

    #[test]
    fn calibration_rows_exclude_self() {
        let (st, sc, ft, fc) = fixture();
        let out = image_snaps(&st, &sc, &ft, &fc, 1, 1.0).unwrap();
        // calib 0's nearest other calibration row is 1
        assert_eq!(out.calib.row(0), sc.row(1));
        assert_eq!(out.calib.row(1), sc.row(0));
        // test 0's nearest calibration row is 0
        assert_eq!(out.test.row(0), sc.row(0));
    }

    #[test]
    fn validates_inputs() {
        let (st, sc, ft, fc) = fixture();
        assert!(image_snaps(&st, &sc, &ft, &fc, 5, 0.5).is_err());
        assert!(image_snaps(&st, &sc, &ft, &fc, 2, 1.5).is_err());
        assert!(image_snaps(&st, &sc, &fc, &fc, 2, 0.5).is_err());
    }
}
