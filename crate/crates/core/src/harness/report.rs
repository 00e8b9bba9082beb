use serde::{Deserialize, Serialize};

use super::experiment::ExperimentConfig;
use super::image::ImageConfig;
use super::oracle::OracleConfig;
use super::tuning::Hyperparams;
use crate::metrics::MetricSummary;

/// Mean and sample standard deviation over trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self {
                mean: 0.0,
                std: 0.0,
                n,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std, n }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub coverage: Stat,
    pub size: Stat,
    pub sh: Stat,
    /// Over trials where SSCV is defined.
    pub sscv: Stat,
}

impl Aggregate {
    pub fn from_trials(trials: &[TrialRecord]) -> Self {
        let pick =
            |f: fn(&MetricSummary) -> f64| trials.iter().map(|t| f(&t.metrics)).collect::<Vec<_>>();
        let sscv: Vec<f64> = trials.iter().filter_map(|t| t.metrics.sscv).collect();
        Self {
            coverage: Stat::from_values(&pick(|m| m.coverage)),
            size: Stat::from_values(&pick(|m| m.size)),
            sh: Stat::from_values(&pick(|m| m.sh)),
            sscv: Stat::from_values(&sscv),
        }
    }
}

/// One conformal trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub model_split: usize,
    pub conformal_split: usize,
    pub n_calib: usize,
    /// `None` when the threshold saturated to +inf.
    pub q_hat: Option<f64>,
    pub params: Option<Hyperparams>,
    pub metrics: MetricSummary,
}

/// Run settings echoed into the report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ConfigEcho {
    Experiment(ExperimentConfig),
    Oracle { m: usize, config: OracleConfig },
    Image { method: String, config: ImageConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub dataset: String,
    pub run: ConfigEcho,
}

/// Per-trial metrics plus their aggregate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub config: ReportConfig,
    pub trials: Vec<TrialRecord>,
    pub aggregate: Aggregate,
}

impl TrialReport {
    pub fn new(config: ReportConfig, trials: Vec<TrialRecord>) -> Self {
        let aggregate = Aggregate::from_trials(&trials);
        Self {
            config,
            trials,
            aggregate,
        }
    }

    /// Trial metrics and aggregate, without the config echo or chosen parameters.
    pub fn outcomes(&self) -> (Vec<(usize, Option<f64>, MetricSummary)>, Aggregate) {
        (
            self.trials
                .iter()
                .map(|t| (t.n_calib, t.q_hat, t.metrics))
                .collect(),
            self.aggregate,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_basics() {
        let s = Stat::from_values(&[1.0, 2.0, 3.0]);
        assert_eq!((s.mean, s.std, s.n), (2.0, 1.0, 3));
        assert_eq!(Stat::from_values(&[]).n, 0);
        assert_eq!(Stat::from_values(&[4.0]).std, 0.0);
    }
}
