use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use snaps_core::graph::{build_knn_cached, build_knn_graph, zero_norm_rows, KnnConfig};
use snaps_core::harness::{
    fixed_snaps, generate_synthetic, run_experiment_with_knn, run_image_trial,
    run_oracle_experiment, BaseScore, CalibRule, ExperimentConfig, ImageConfig, ImageData, Method,
    OracleConfig, SynthConfig, NODES_PER_CLASS,
};
use snaps_core::matrixio::{
    load_bundle_with, load_labels, load_matrix, write_bundle, write_report, BundleOptions,
    DatasetBundle, Manifest, MatrixFormat, ReportFormat,
};
use snaps_core::metrics::MetricSummary;
use snaps_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "snaps",
    version,
    about = "Conformal prediction sets for node classification"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "SNAPS_NUM_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Repeated-split experiment for one method.
    Run(RunArgs),
    /// Same-label aggregation sweep using ground-truth labels.
    Oracle(OracleArgs),
    /// Write a synthetic planted-partition bundle.
    Synth(SynthArgs),
    /// Graph-free mode against a calibration set.
    Image(ImageArgs),
    /// Build a k-NN graph and store it in a cache file.
    KnnCache(KnnCacheArgs),
}

#[derive(Args)]
struct BundleArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Rescale probability rows to sum to 1 instead of rejecting them.
    #[arg(long)]
    renormalize: bool,
}

#[derive(Args)]
struct KnnArgs {
    #[arg(long, default_value_t = 20)]
    k: usize,
    /// Candidate pool per row; exact when omitted.
    #[arg(long = "sample-m")]
    sample_m: Option<usize>,
    /// Allow exact mode on very large graphs.
    #[arg(long)]
    force_exact: bool,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    bundle: BundleArgs,
    #[arg(long, default_value = "snaps")]
    method: Method,
    #[arg(long, value_parser = parse_base, default_value = "aps")]
    base: BaseScore,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Calibration/test splits per model split.
    #[arg(long, default_value_t = 100)]
    splits: usize,
    /// Model splits (train/valid draws).
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[command(flatten)]
    knn: KnnArgs,
    #[arg(long, default_value_t = 0.05)]
    grid_step: f64,
    /// Fixed calibration size instead of min(1000, pool/2).
    #[arg(long)]
    calib: Option<usize>,
    /// Fixed feature weight; skips tuning together with --mu.
    #[arg(long, requires = "mu")]
    lambda: Option<f64>,
    #[arg(long, requires = "lambda")]
    mu: Option<f64>,
    /// Reuse or create a k-NN cache file.
    #[arg(long)]
    knn_cache: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to the extension of --out.
    #[arg(long)]
    format: Option<ReportFormat>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    bundle: BundleArgs,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,4,8,16,32")]
    m_sweep: Vec<usize>,
    #[arg(long, default_value_t = 0.5)]
    w: f64,
    #[arg(long, default_value_t = 100)]
    splits: usize,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long)]
    calib: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON array of one report per m.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 0.8)]
    homophily: f64,
    #[arg(long, default_value_t = 2.0)]
    class_sep: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    #[arg(long, default_value_t = 1.0)]
    feature_noise: f64,
    #[arg(long, default_value_t = 10.0)]
    avg_degree: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct ImageArgs {
    #[arg(long)]
    probs_calib: PathBuf,
    #[arg(long)]
    probs_test: PathBuf,
    #[arg(long)]
    feats_calib: PathBuf,
    #[arg(long)]
    feats_test: PathBuf,
    /// One label per line for the calibration rows.
    #[arg(long)]
    labels_calib: PathBuf,
    #[arg(long)]
    labels_test: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 0.5)]
    eta: f64,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    renormalize: bool,
    /// Writes a JSON summary; printed to stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct KnnCacheArgs {
    #[arg(long)]
    features: PathBuf,
    #[command(flatten)]
    knn: KnnArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn parse_base(s: &str) -> std::result::Result<BaseScore, String> {
    match s.to_ascii_lowercase().as_str() {
        "aps" => Ok(BaseScore::Aps),
        "raps" => Ok(BaseScore::Raps),
        _ => Err(format!("unknown base score {s:?}")),
    }
}

impl KnnArgs {
    fn config(&self, seed: u64) -> KnnConfig {
        KnnConfig {
            k: self.k,
            sample_size: self.sample_m,
            seed,
            force_exact: self.force_exact,
            ..KnnConfig::default()
        }
    }
}

fn calib_rule(calib: Option<usize>) -> CalibRule {
    calib.map_or(CalibRule::PaperMin1000, CalibRule::Fixed)
}

fn load(args: &BundleArgs) -> Result<DatasetBundle> {
    let b = load_bundle_with(
        &args.manifest,
        BundleOptions {
            renormalize: args.renormalize,
        },
    )?;
    if b.dropped_self_loops > 0 {
        eprintln!("warning: dropped {} self-loops", b.dropped_self_loops);
    }
    Ok(b)
}

fn warn_zero_rows(what: &str, zero: &[usize]) {
    if !zero.is_empty() {
        eprintln!(
            "warning: {} {what} rows have zero norm and get no feature neighbors (first: {})",
            zero.len(),
            zero[0]
        );
    }
}

fn matrix(path: &Path) -> Result<snaps_core::matrixio::DenseMatrix> {
    load_matrix(path, MatrixFormat::from_path(path))
}

fn summary_line(label: &str, m: &snaps_core::harness::Aggregate) {
    println!(
        "{label}: coverage {:.4} ± {:.4}  size {:.4} ± {:.4}  sh {:.4}  ({} trials)",
        m.coverage.mean, m.coverage.std, m.size.mean, m.size.std, m.sh.mean, m.coverage.n
    );
}

fn run(args: RunArgs) -> Result<()> {
    let bundle = load(&args.bundle)?;
    let knn_cfg = args.knn.config(args.seed);
    let fixed_params = match (args.lambda, args.mu) {
        (Some(l), Some(m)) => fixed_snaps(l, m)?,
        _ => None,
    };
    let cfg = ExperimentConfig {
        alpha: args.alpha,
        method: args.method,
        base: args.base,
        knn: knn_cfg,
        grid_step: args.grid_step,
        n_model_splits: args.trials,
        n_conformal_splits: args.splits,
        calib_rule: calib_rule(args.calib),
        nodes_per_class: NODES_PER_CLASS,
        seed: args.seed,
        fixed_params,
        ..ExperimentConfig::default()
    };
    cfg.validate()?;
    let knn = if args.method == Method::Snaps {
        warn_zero_rows("feature", &zero_norm_rows(&bundle.features));
        Some(match &args.knn_cache {
            Some(cache) => {
                let features = Manifest::parse(&args.bundle.manifest)?.features;
                let (g, hit) = build_knn_cached(&bundle.features, features, &knn_cfg, cache)?;
                eprintln!(
                    "k-NN cache {}: {}",
                    if hit { "hit" } else { "miss" },
                    cache.display()
                );
                g
            }
            None => build_knn_graph(&bundle.features, &knn_cfg)?,
        })
    } else {
        None
    };
    let report = run_experiment_with_knn(&bundle, &cfg, knn)?;
    let format = args
        .format
        .unwrap_or_else(|| ReportFormat::from_path(&args.out));
    write_report(&report, &args.out, format)?;
    summary_line(
        &format!("{:?}", args.method).to_lowercase(),
        &report.aggregate,
    );
    Ok(())
}

fn oracle(args: OracleArgs) -> Result<()> {
    let bundle = load(&args.bundle)?;
    let cfg = OracleConfig {
        alpha: args.alpha,
        m_sweep: args.m_sweep,
        w: args.w,
        n_model_splits: args.trials,
        n_conformal_splits: args.splits,
        calib_rule: calib_rule(args.calib),
        nodes_per_class: NODES_PER_CLASS,
        seed: args.seed,
    };
    let reports = run_oracle_experiment(&bundle, &cfg)?;
    let text = serde_json::to_string_pretty(&reports)?;
    std::fs::write(&args.out, text).map_err(|e| Error::io(&args.out, e))?;
    for (m, r) in cfg.m_sweep.iter().zip(&reports) {
        summary_line(&format!("m={m}"), &r.aggregate);
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let bundle = generate_synthetic(&SynthConfig {
        n: args.n,
        classes: args.classes,
        dim: args.dim,
        homophily: args.homophily,
        class_sep: args.class_sep,
        noise: args.noise,
        feature_noise: args.feature_noise,
        avg_degree: args.avg_degree,
        seed: args.seed,
    })?;
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let manifest = write_bundle(&args.out_dir, &bundle)?;
    println!(
        "wrote {} ({} nodes, {} edges, homophily {:.3})",
        manifest.display(),
        bundle.num_nodes(),
        bundle.edges.len() / 2,
        bundle.edge_homophily()
    );
    Ok(())
}

fn image(args: ImageArgs) -> Result<()> {
    let side = |probs: &Path, feats: &Path, labels: &Path| -> Result<ImageData> {
        let mut p = matrix(probs)?;
        if args.renormalize {
            p.renormalize_rows();
        }
        let classes = p.cols();
        ImageData::new(p, matrix(feats)?, load_labels(labels, classes)?)
    };
    let calib = side(&args.probs_calib, &args.feats_calib, &args.labels_calib)?;
    let test = side(&args.probs_test, &args.feats_test, &args.labels_test)?;
    warn_zero_rows("calibration feature", &zero_norm_rows(&calib.features));
    warn_zero_rows("test feature", &zero_norm_rows(&test.features));
    let cfg = ImageConfig {
        k: args.k,
        eta: args.eta,
        alpha: args.alpha,
        n_trials: 1,
        seed: args.seed,
        ..ImageConfig::default()
    };
    let out = run_image_trial(&calib, &test, &cfg)?;
    let entry = |(t, m): &(snaps_core::conformal::CalibratedThreshold, MetricSummary)| json!({ "q_hat": (!t.is_saturated()).then_some(t.q_hat), "n_calib": t.n_calib, "metrics": m });
    let text = serde_json::to_string_pretty(&json!({
        "config": cfg,
        "aps": entry(&out.aps),
        "snaps": entry(&out.snaps),
    }))?;
    match &args.out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e))?,
        None => println!("{text}"),
    }
    for (name, (_, m)) in [("aps", &out.aps), ("snaps", &out.snaps)] {
        eprintln!(
            "{name}: coverage {:.4}  size {:.4}  sh {:.4}",
            m.coverage, m.size, m.sh
        );
    }
    Ok(())
}

fn knn_cache(args: KnnCacheArgs) -> Result<()> {
    let features = matrix(&args.features)?;
    warn_zero_rows("feature", &zero_norm_rows(&features));
    let cfg = args.knn.config(args.seed);
    let (g, hit) = build_knn_cached(&features, &args.features, &cfg, &args.out)?;
    println!(
        "{} {} ({} nodes, {} arcs)",
        if hit { "up to date:" } else { "wrote" },
        args.out.display(),
        g.num_nodes(),
        g.num_arcs()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
        {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Oracle(a) => oracle(a),
        Command::Synth(a) => synth(a),
        Command::Image(a) => image(a),
        Command::KnnCache(a) => knn_cache(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
