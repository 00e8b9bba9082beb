//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints a PASS/FAIL line whether or not output is captured.

use std::process::ExitCode;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use snaps_core::conformal::{calibrate, predict_sets, CalibratedThreshold, PredictionSets};
use snaps_core::graph::{build_knn_graph, cosine_similarity, KnnConfig, SparseGraph};
use snaps_core::harness::{
    fixed_snaps, generate_synthetic, run_experiment, run_image_experiment, run_oracle_experiment,
    CalibRule, ExperimentConfig, ImageConfig, ImageData, Method, OracleConfig, SynthConfig,
    TrialReport,
};
use snaps_core::matrixio::{DatasetBundle, DenseMatrix, LabelVector};
use snaps_core::metrics::{evaluate, sscv, SSCV_STRATA};
use snaps_core::propagate::{NeighborTerms, SnapsParams};
use snaps_core::scores::{aps_scores, aps_scores_keyed, ScoreKind, ScoreMatrix, XiPolicy};

const BAND_LOW: f64 = 0.006;
const BAND_HIGH: f64 = 0.001 + 0.006;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn in_band(coverage: f64, alpha: f64) -> bool {
    coverage >= 1.0 - alpha - BAND_LOW && coverage <= 1.0 - alpha + BAND_HIGH
}

fn bundle() -> DatasetBundle {
    generate_synthetic(&SynthConfig {
        n: 5000,
        classes: 8,
        dim: 16,
        homophily: 0.8,
        class_sep: 2.0,
        noise: 1.0,
        feature_noise: 1.0,
        avg_degree: 10.0,
        seed: 1,
    })
    .expect("synthetic bundle")
}

fn coverage_guarantee(b: &DatasetBundle) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for alpha in [0.05, 0.10] {
        for method in [Method::Aps, Method::Raps, Method::Daps, Method::Snaps] {
            let cfg = ExperimentConfig {
                alpha,
                method,
                knn: KnnConfig::exact(20),
                n_model_splits: 10,
                n_conformal_splits: 100,
                calib_rule: CalibRule::Fixed(1000),
                seed: 100,
                ..ExperimentConfig::default()
            };
            let r = run_experiment(b, &cfg).map_err(|e| e.to_string())?;
            let c = r.aggregate.coverage.mean;
            ok &= r.trials.len() == 1000 && in_band(c, alpha);
            lines.push(format!("{method:?}@{alpha}={c:.4}"));
        }
    }
    check(ok, lines.join(" "))
}

fn quantile_oracle() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let mut saturated = 0;
    for inst in 0..10_000 {
        let n = match inst % 4 {
            0 => r.random_range(1..20),
            1 => r.random_range(1..500),
            _ => r.random_range(1..=10_000),
        };
        // rational alpha = a / 1000 keeps the reference rank in integers
        let a: u32 = if inst % 5 == 0 {
            [50, 100, 200, 10, 1][inst % 3]
        } else {
            r.random_range(1..1000)
        };
        let alpha = a as f64 / 1000.0;
        let distinct = match inst % 3 {
            0 => 2,
            1 => 50,
            _ => u32::MAX,
        };
        let values: Vec<f64> = (0..n)
            .map(|_| {
                if distinct == u32::MAX {
                    r.random::<f64>()
                } else {
                    r.random_range(0..distinct) as f64 / distinct as f64
                }
            })
            .collect();
        // one-column score matrix with calibration over a shuffled subset of rows
        let scores = ScoreMatrix::new(
            DenseMatrix::new(n, 1, values.clone()).unwrap(),
            ScoreKind::Aps,
            0,
        );
        let labels = LabelVector::new(vec![0; n], 1).unwrap();
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut r);
        let q = calibrate(&scores, &labels, &idx, alpha)
            .map_err(|e| e.to_string())?
            .q_hat;

        let mut sorted = values;
        sorted.sort_by(f64::total_cmp);
        let rank = ((1000 - a) as usize * (n + 1)).div_ceil(1000);
        let expect = if rank > n {
            saturated += 1;
            f64::INFINITY
        } else {
            sorted[rank - 1]
        };
        if q.to_bits() != expect.to_bits() {
            return Err(format!(
                "instance {inst}: n={n} alpha={alpha} got {q} expected {expect}"
            ));
        }
    }
    check(
        saturated > 0,
        format!("10000 instances, {saturated} saturated"),
    )
}

fn snaps_efficiency(b: &DatasetBundle) -> Outcome {
    let run = |method| {
        run_experiment(
            b,
            &ExperimentConfig {
                alpha: 0.05,
                method,
                knn: KnnConfig::exact(20),
                n_model_splits: 1,
                n_conformal_splits: 100,
                seed: 300,
                ..ExperimentConfig::default()
            },
        )
        .map_err(|e| e.to_string())
    };
    let (aps, snaps) = (run(Method::Aps)?, run(Method::Snaps)?);
    let (sa, ss) = (aps.aggregate.size.mean, snaps.aggregate.size.mean);
    let (ha, hs) = (aps.aggregate.sh.mean, snaps.aggregate.sh.mean);
    check(
        (2.0..=4.0).contains(&sa) && ss <= 0.9 * sa && hs > ha,
        format!(
            "APS size {sa:.3} sh {ha:.3}; SNAPS size {ss:.3} sh {hs:.3} ({:.1}% smaller)",
            100.0 * (1.0 - ss / sa)
        ),
    )
}

fn oracle_trend(b: &DatasetBundle) -> Outcome {
    let cfg = OracleConfig {
        alpha: 0.05,
        n_model_splits: 2,
        n_conformal_splits: 100,
        seed: 400,
        ..OracleConfig::default()
    };
    let reports = run_oracle_experiment(b, &cfg).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (r, m) in reports.iter().zip(&cfg.m_sweep) {
        ok &= r.trials.len() == 200 && in_band(r.aggregate.coverage.mean, cfg.alpha);
        parts.push(format!("m={m}:{:.3}", r.aggregate.size.mean));
    }
    let up_to_8 = cfg
        .m_sweep
        .iter()
        .position(|&m| m == 8)
        .expect("m=8 in sweep");
    for w in reports[..=up_to_8].windows(2) {
        let (a, b) = (&w[0].aggregate.size, &w[1].aggregate.size);
        let se = (a.std.powi(2) / a.n as f64 + b.std.powi(2) / b.n as f64).sqrt();
        ok &= a.mean - b.mean > 3.0 * se;
    }
    check(ok, parts.join(" "))
}

fn exchangeability() -> Outcome {
    let b = generate_synthetic(&SynthConfig {
        n: 500,
        classes: 4,
        dim: 8,
        seed: 5,
        ..SynthConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let n = b.num_nodes();
    let xi = XiPolicy::uniform(55);
    let params = SnapsParams::new(0.3, 0.4).unwrap();
    let knn_cfg = KnnConfig::exact(10);
    let keys: Vec<u64> = (0..n as u64).collect();
    let scores =
        |probs: &DenseMatrix, feats: &DenseMatrix, edges: &[(usize, usize)], keys: &[u64]| {
            let s = aps_scores_keyed(probs, &xi, keys).unwrap();
            let knn = build_knn_graph(feats, &knn_cfg).unwrap();
            let mut arcs: Vec<(usize, usize)> =
                edges.iter().flat_map(|&(u, v)| [(u, v), (v, u)]).collect();
            arcs.sort_unstable();
            arcs.dedup();
            let adj = SparseGraph::from_sorted_arcs(n, &arcs);
            NeighborTerms::new(&s, Some(&knn), &adj)
                .unwrap()
                .mix(&params, ScoreKind::Snaps)
        };
    let base = scores(&b.probabilities, &b.features, &b.edges, &keys);
    let calib: Vec<usize> = (0..n).step_by(2).collect();
    let q0 = calibrate(&base, &b.labels, &calib, 0.1).unwrap().q_hat;
    let mut true0: Vec<u64> = calib
        .iter()
        .map(|&i| base.get(i, b.labels.get(i)).to_bits())
        .collect();
    true0.sort_unstable();

    let mut r = ChaCha8Rng::seed_from_u64(500);
    for t in 0..100 {
        // perm[new] = old
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);
        let mut inv = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let edges: Vec<(usize, usize)> = b.edges.iter().map(|&(u, v)| (inv[u], inv[v])).collect();
        let pk: Vec<u64> = perm.iter().map(|&o| keys[o]).collect();
        let moved = scores(
            &b.probabilities.select_rows(&perm),
            &b.features.select_rows(&perm),
            &edges,
            &pk,
        );
        for (new, &old) in perm.iter().enumerate() {
            if moved.row(new) != base.row(old) {
                return Err(format!("permutation {t}: row {old} changed"));
            }
        }
        let labels = b.labels.select(&perm);
        let pc: Vec<usize> = calib.iter().map(|&o| inv[o]).collect();
        let q = calibrate(&moved, &labels, &pc, 0.1).unwrap().q_hat;
        let mut tr: Vec<u64> = pc
            .iter()
            .map(|&i| moved.get(i, labels.get(i)).to_bits())
            .collect();
        tr.sort_unstable();
        if q.to_bits() != q0.to_bits() || tr != true0 {
            return Err(format!("permutation {t}: calibration differs"));
        }
    }
    Ok(format!("100 permutations of {n} nodes, q_hat {q0:.6}"))
}

fn same_outcomes(a: &TrialReport, b: &TrialReport) -> bool {
    let (ta, aa) = a.outcomes();
    let (tb, ab) = b.outcomes();
    let bits = |t: &[(usize, Option<f64>, snaps_core::metrics::MetricSummary)]| {
        t.iter()
            .map(|(n, q, m)| {
                (
                    *n,
                    q.map(f64::to_bits),
                    m.coverage.to_bits(),
                    m.size.to_bits(),
                    m.sh.to_bits(),
                    m.sscv.map(f64::to_bits),
                    m.n_eval,
                )
            })
            .collect::<Vec<_>>()
    };
    bits(&ta) == bits(&tb)
        && serde_json::to_string(&aa).unwrap() == serde_json::to_string(&ab).unwrap()
}

fn reductions() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(600);
    for c in 0..20 {
        let b = generate_synthetic(&SynthConfig {
            n: r.random_range(400..900),
            classes: r.random_range(2..6),
            dim: r.random_range(2..12),
            homophily: r.random_range(0.2..1.0),
            seed: r.random(),
            ..SynthConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let cfg = ExperimentConfig {
            alpha: r.random_range(0.02..0.3),
            knn: KnnConfig::exact(r.random_range(1..15)),
            n_model_splits: r.random_range(1..3),
            n_conformal_splits: r.random_range(1..6),
            seed: r.random(),
            ..ExperimentConfig::default()
        };
        let mu = r.random_range(0..=20) as f64 / 20.0;
        let run = |method, fixed| {
            run_experiment(
                &b,
                &ExperimentConfig {
                    method,
                    fixed_params: fixed,
                    ..cfg.clone()
                },
            )
            .map_err(|e| e.to_string())
        };
        let aps = run(Method::Aps, None)?;
        let s00 = run(Method::Snaps, fixed_snaps(0.0, 0.0).unwrap())?;
        let daps = run(Method::Daps, fixed_snaps(0.0, mu).unwrap())?;
        let s0m = run(Method::Snaps, fixed_snaps(0.0, mu).unwrap())?;
        if !same_outcomes(&aps, &s00) {
            return Err(format!("config {c}: snaps(0,0) differs from aps"));
        }
        if !same_outcomes(&daps, &s0m) {
            return Err(format!("config {c}: snaps(0,{mu}) differs from daps({mu})"));
        }
    }
    Ok("20 configs bit-identical".into())
}

fn knn_correctness() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(700);
    for t in 0..50 {
        let n = r.random_range(12..=200);
        let d = r.random_range(1..=32);
        let f = DenseMatrix::new(
            n,
            d,
            (0..n * d).map(|_| r.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let k = r.random_range(1..=((n - 1) / 10).max(1));
        let g = build_knn_graph(&f, &KnnConfig::exact(k)).map_err(|e| e.to_string())?;
        for i in 0..n {
            let mut c: Vec<(usize, f64)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (j, cosine_similarity(f.row(i), f.row(j)).unwrap()))
                .filter(|&(_, s)| s > 0.0)
                .collect();
            c.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            c.truncate(k);
            let ids: Vec<usize> = c.iter().map(|&(j, _)| j).collect();
            if g.neighbors(i) != &ids[..]
                || g.weights(i)
                    .iter()
                    .zip(&c)
                    .any(|(w, &(_, s))| (w - s).abs() > 1e-12)
            {
                return Err(format!("matrix {t}: row {i} differs from brute force"));
            }
        }
        let sampled = build_knn_graph(
            &f,
            &KnnConfig {
                sample_size: Some(n - 1),
                seed: r.random(),
                ..KnnConfig::exact(k)
            },
        )
        .map_err(|e| e.to_string())?;
        if sampled != g {
            return Err(format!("matrix {t}: sampled M=n-1 differs from exact"));
        }
    }
    Ok("50 matrices".into())
}

fn metrics_oracle() -> Outcome {
    let t = CalibratedThreshold::from_scores(&[0.0], 0.1).unwrap();
    let hand =
        PredictionSets::from_label_lists(3, vec![0, 1, 2], &[vec![0], vec![0, 1], vec![2]], t)
            .unwrap();
    let m = evaluate(&hand, &LabelVector::new(vec![0, 1, 0], 3).unwrap()).unwrap();
    if (m.coverage - 2.0 / 3.0).abs() > 1e-15
        || (m.size - 4.0 / 3.0).abs() > 1e-15
        || (m.sh - 1.0 / 3.0).abs() > 1e-15
    {
        return Err(format!("hand example gave {m:?}"));
    }
    let mut r = ChaCha8Rng::seed_from_u64(800);
    for inst in 0..1000 {
        let n = r.random_range(1..300);
        let k = r.random_range(1..1200);
        let alpha = r.random_range(0.01..0.5);
        let labels = LabelVector::new((0..n).map(|_| r.random_range(0..k)).collect(), k).unwrap();
        let lists: Vec<Vec<usize>> = (0..n)
            .map(|_| {
                let size = [0, 1, 2, 3, r.random_range(0..=k)][r.random_range(0..5)].min(k);
                let mut all: Vec<usize> = (0..k).collect();
                all.shuffle(&mut r);
                all.truncate(size);
                all
            })
            .collect();
        let t = CalibratedThreshold::from_scores(&[0.0], alpha).unwrap();
        let sets = PredictionSets::from_label_lists(k, (0..n).collect(), &lists, t).unwrap();
        let m = evaluate(&sets, &labels).map_err(|e| e.to_string())?;

        let (mut cov, mut size, mut sh) = (0usize, 0usize, 0usize);
        for (i, l) in lists.iter().enumerate() {
            let hit = l.contains(&labels.get(i));
            cov += hit as usize;
            size += l.len();
            sh += (hit && l.len() == 1) as usize;
        }
        let nf = n as f64;
        let mut worst: Option<f64> = None;
        for &(lo, hi) in SSCV_STRATA.iter().filter(|&&(lo, _)| lo <= k) {
            let (mut c, mut h) = (0, 0);
            for (i, l) in lists.iter().enumerate() {
                if (lo..=hi).contains(&l.len()) {
                    c += 1;
                    h += l.contains(&labels.get(i)) as usize;
                }
            }
            if c > 0 {
                let gap = (h as f64 / c as f64 - (1.0 - alpha)).abs();
                worst = Some(worst.map_or(gap, |w: f64| w.max(gap)));
            }
        }
        let direct = sscv(&sets, &labels, alpha).map_err(|e| e.to_string())?;
        if (m.coverage - cov as f64 / nf).abs() > 1e-12
            || (m.size - size as f64 / nf).abs() > 1e-12
            || (m.sh - sh as f64 / nf).abs() > 1e-12
            || m.sscv != worst
            || direct != worst
        {
            return Err(format!("instance {inst} mismatch: {m:?} vs sscv {worst:?}"));
        }
    }
    Ok("hand example and 1000 instances".into())
}

fn image_mode(b: &DatasetBundle) -> Outcome {
    let pool = ImageData::from_bundle(b);
    let cfg = ImageConfig {
        k: 5,
        eta: 0.5,
        alpha: 0.1,
        n_trials: 200,
        calib_fraction: 0.5,
        seed: 900,
    };
    let (aps, snaps) = run_image_experiment(&b.name, &pool, &cfg).map_err(|e| e.to_string())?;
    let (sa, ss) = (aps.aggregate.size.mean, snaps.aggregate.size.mean);
    let (ca, cs) = (aps.aggregate.coverage.mean, snaps.aggregate.coverage.mean);
    check(
        in_band(ca, cfg.alpha) && in_band(cs, cfg.alpha) && ss <= 0.95 * sa,
        format!(
            "APS size {sa:.3} cov {ca:.4}; SNAPS size {ss:.3} cov {cs:.4} ({:.1}% smaller)",
            100.0 * (1.0 - ss / sa)
        ),
    )
}

fn alpha_monotonicity() -> Outcome {
    let mut r = ChaCha8Rng::seed_from_u64(1000);
    for t in 0..50 {
        let b = generate_synthetic(&SynthConfig {
            n: r.random_range(400..1500),
            classes: r.random_range(2..10).min(8),
            dim: 8,
            class_sep: r.random_range(0.5..3.0),
            seed: r.random(),
            ..SynthConfig::default()
        })
        .map_err(|e| e.to_string())?;
        let s = aps_scores(&b.probabilities, &XiPolicy::uniform(r.random())).unwrap();
        let mut idx: Vec<usize> = (0..b.num_nodes()).collect();
        idx.shuffle(&mut r);
        let (calib, test) = idx.split_at(b.num_nodes() / 2);
        let wide = predict_sets(&s, &calibrate(&s, &b.labels, calib, 0.05).unwrap(), test).unwrap();
        let narrow =
            predict_sets(&s, &calibrate(&s, &b.labels, calib, 0.10).unwrap(), test).unwrap();
        for row in 0..test.len() {
            for y in 0..b.num_classes() {
                if narrow.contains(row, y) && !wide.contains(row, y) {
                    return Err(format!(
                        "trial {t}: node {} label {y} only at alpha 0.10",
                        test[row]
                    ));
                }
            }
        }
    }
    Ok("50 trials nested".into())
}

fn main() -> ExitCode {
    let shared = bundle();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        (
            "coverage guarantee",
            Box::new(|| coverage_guarantee(&shared)),
        ),
        ("quantile oracle", Box::new(quantile_oracle)),
        ("SNAPS efficiency", Box::new(|| snaps_efficiency(&shared))),
        ("oracle size trend", Box::new(|| oracle_trend(&shared))),
        ("exchangeability mechanics", Box::new(exchangeability)),
        ("reduction identities", Box::new(reductions)),
        ("k-NN correctness", Box::new(knn_correctness)),
        ("metrics oracle", Box::new(metrics_oracle)),
        ("image mode", Box::new(|| image_mode(&shared))),
        ("alpha monotonicity", Box::new(alpha_monotonicity)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name} ({secs:.1}s): {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name} ({secs:.1}s): {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {}/{} passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
