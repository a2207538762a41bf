//! Distributed ridge on CSV data: load, normalize, split into shards, fit
//! with one of the weighting schemes, and score on held-out rows.

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use wonder_core::data::{center_normalize, load_csv, NormalizationStats, OutcomeColumn};
use wonder_core::protocol::{
    partition, split_validation, Cluster, GridPoint, PartitionStrategy, PlanKind, Shard, Transmission,
    WonderConfig, DEFAULT_MULTIPLIERS,
};
use wonder_core::spectral::optimal_distributed_risk;
use wonder_core::{Dataset, SignalNoise, ThetaAggregation};

use crate::options::{Common, VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum FitMode {
    /// λ grid around `kp/(nα̂²)` with plug-in equal-split weights
    #[default]
    General,
    /// Local penalties and closed-form weights for isotropic designs
    Isotropic,
    /// Equal weights `1/k`
    Naive,
    /// The first shard alone
    Local,
}

impl FitMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::General => "general",
            Self::Isotropic => "isotropic",
            Self::Naive => "naive",
            Self::Local => "local",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Aggregation {
    #[default]
    Mean,
    InverseVariance,
}

impl From<Aggregation> for ThetaAggregation {
    fn from(a: Aggregation) -> Self {
        match a {
            Aggregation::Mean => ThetaAggregation::Mean,
            Aggregation::InverseVariance => ThetaAggregation::InverseVariance,
        }
    }
}

/// How CSV rows become a normalized, sharded training set.
#[derive(Debug, Clone, Default)]
pub struct DataOptions {
    pub outcome: Option<String>,
    pub no_header: bool,
    pub no_normalize: bool,
    pub k: Option<usize>,
    pub validation_fraction: Option<f64>,
    pub shuffle: bool,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct FitOptions {
    /// Training CSV
    #[arg(long, value_name = "PATH")]
    pub train: Option<PathBuf>,
    /// Test CSV, scored with the training normalization
    #[arg(long, value_name = "PATH")]
    pub test: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<FitMode>,
    /// Outcome column: `last`, a 0-based index, or a header name
    #[arg(long)]
    pub outcome: Option<String>,
    /// The CSV files have no header row
    #[arg(long)]
    pub no_header: bool,
    /// Keep the raw scale instead of centering and scaling with training statistics
    #[arg(long)]
    pub no_normalize: bool,
    /// Number of machines
    #[arg(long)]
    pub k: Option<usize>,
    /// Share of training rows held out to pick λ (general mode)
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    /// Assign rows to shards at random (seeded) instead of in file order
    #[arg(long)]
    pub shuffle: bool,
    /// Multipliers of the initial penalty, comma separated (general mode)
    #[arg(long, value_delimiter = ',')]
    pub lambda_multipliers: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub theta_aggregation: Option<Aggregation>,
    /// Center each shard with its own means
    #[arg(long)]
    pub center_shards: bool,
    /// Coefficients CSV (defaults to `<out stem>.coef.csv` next to --out)
    #[arg(long, value_name = "PATH")]
    pub coef_out: Option<PathBuf>,
    /// Add wall-clock timings to the report (makes it non-reproducible)
    #[arg(long)]
    pub timing: bool,
}

pub fn parse_outcome(spec: Option<&str>) -> OutcomeColumn {
    match spec {
        None | Some("last") => OutcomeColumn::Last,
        Some(s) => match s.parse::<usize>() {
            Ok(j) => OutcomeColumn::Index(j),
            Err(_) => OutcomeColumn::Name(s.to_string()),
        },
    }
}

/// Training data after normalization, validation carve-out and sharding.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub shards: Vec<Shard>,
    pub validation: Option<Dataset>,
    pub test: Option<Dataset>,
    pub normalization: Option<NormalizationStats>,
    pub config: WonderConfig,
}

fn empty_like(p: usize) -> Dataset {
    Dataset::new(DMatrix::zeros(0, p), DVector::zeros(0)).expect("empty dataset")
}

impl DataOptions {
    pub fn k(&self) -> usize {
        self.k.unwrap_or(1)
    }

    pub fn load(&self, path: &Path) -> Result<Dataset> {
        load_csv(path, &parse_outcome(self.outcome.as_deref()), !self.no_header)
            .with_context(|| format!("loading {}", path.display()))
    }

    /// `carve_validation` holds out rows for λ selection before sharding.
    pub fn prepare(
        &self,
        train: Dataset,
        test: Option<Dataset>,
        carve_validation: bool,
        config: WonderConfig,
        seed: u64,
    ) -> Result<Prepared> {
        if let Some(t) = &test {
            if t.p() != train.p() {
                bail!("train has {} features, test has {}", train.p(), t.p());
            }
        }
        let (train, test, normalization) = if self.no_normalize {
            (train, test, None)
        } else {
            let (tr, te, stats) = center_normalize(&train, test.as_ref().unwrap_or(&empty_like(train.p())))?;
            (tr, test.map(|_| te), Some(stats))
        };
        let (train, validation) = if carve_validation {
            let (tr, va) = split_validation(&train, config.validation_fraction, seed)?;
            (tr, Some(va).filter(|v| v.n() > 0))
        } else {
            (train, None)
        };
        let shards = partition(&train, &config)?;
        Ok(Prepared {
            shards,
            validation,
            test,
            normalization,
            config,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theory {
    /// Plug-in limiting risk of the optimally weighted estimator on these shards.
    #[serde(rename = "M_k")]
    pub m_k: f64,
    #[serde(rename = "M_1")]
    pub m_1: f64,
    /// `M_1 / M_k`
    pub are: f64,
    /// `(σ² + M_1) / (σ² + M_k)`
    pub oe: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Empirical {
    pub test_mse: f64,
    pub test_mse_original_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageSummary {
    pub rounds: usize,
    pub total_scalars: usize,
    pub total_vectors: usize,
    pub transmissions: Vec<Transmission>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub load_seconds: f64,
    pub fit_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config: Value,
    pub mode: String,
    pub k: usize,
    pub p: usize,
    pub n_train: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub theta: SignalNoise<f64>,
    pub selected_lambda: Option<f64>,
    pub shard_lambdas: Vec<f64>,
    pub weights: Vec<f64>,
    pub weight_sum: f64,
    pub grid: Vec<GridPoint>,
    pub theory: Option<Theory>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub empirical: Option<Empirical>,
    pub messages: MessageSummary,
    /// On the original scale of the data.
    pub intercept: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub index: usize,
    /// On the scale the model was fit on.
    pub coefficient: f64,
    pub coefficient_original_scale: f64,
}

pub struct FitOutput {
    pub report: RiskReport,
    pub coefficients: Vec<CoefficientRow>,
}

/// Isotropic-theory plug-ins at the estimated θ̂; `None` when θ̂ has no signal.
pub fn theory_for_sizes(theta: SignalNoise<f64>, sizes: &[usize], p: usize) -> Option<Theory> {
    let n: usize = sizes.iter().sum();
    let gammas: Vec<f64> = sizes.iter().map(|&n_i| p as f64 / n_i as f64).collect();
    let m_k = optimal_distributed_risk(&gammas, theta).ok()?;
    let m_1 = optimal_distributed_risk(&[p as f64 / n as f64], theta).ok()?;
    Some(Theory {
        m_k,
        m_1,
        are: m_1 / m_k,
        oe: (theta.sigma2 + m_1) / (theta.sigma2 + m_k),
    })
}

pub fn summarize_messages(transmissions: &[Transmission]) -> MessageSummary {
    let mut rounds: Vec<&str> = transmissions.iter().map(|t| t.round.as_str()).collect();
    rounds.dedup();
    MessageSummary {
        rounds: rounds.len(),
        total_scalars: transmissions.iter().map(|t| t.payload.scalars).sum(),
        total_vectors: transmissions.iter().map(|t| t.payload.vectors).sum(),
        transmissions: transmissions.to_vec(),
    }
}

/// Coefficients on both scales and the original-scale intercept.
pub fn coefficients(beta: &DVector<f64>, stats: Option<&NormalizationStats>) -> (Vec<CoefficientRow>, f64) {
    let mut intercept = stats.map_or(0.0, |s| s.y_mean);
    let rows = beta
        .iter()
        .enumerate()
        .map(|(j, &b)| {
            let original = match stats {
                Some(s) => {
                    let c = b * s.y_scale / s.x_scale[j];
                    intercept -= c * s.x_mean[j];
                    c
                }
                None => b,
            };
            CoefficientRow {
                index: j,
                coefficient: b,
                coefficient_original_scale: original,
            }
        })
        .collect();
    (rows, intercept)
}

fn mse(data: &Dataset, beta: &DVector<f64>) -> f64 {
    (&data.y - &data.x * beta).norm_squared() / data.n() as f64
}

impl FitOptions {
    pub fn data(&self) -> DataOptions {
        DataOptions {
            outcome: self.outcome.clone(),
            no_header: self.no_header,
            no_normalize: self.no_normalize,
            k: self.k,
            validation_fraction: self.validation_fraction,
            shuffle: self.shuffle,
        }
    }

    pub fn config(&self, seed: u64) -> Result<WonderConfig> {
        self.data().config(seed, self.lambda_multipliers.clone(), self.theta_aggregation, self.center_shards)
    }

}

impl DataOptions {
    pub fn config(
        &self,
        seed: u64,
        multipliers: Option<Vec<f64>>,
        aggregation: Option<Aggregation>,
        center_shards: bool,
    ) -> Result<WonderConfig> {
        let config = WonderConfig {
            k: self.k(),
            partition: if self.shuffle {
                PartitionStrategy::Shuffled { seed }
            } else {
                PartitionStrategy::Contiguous
            },
            lambda_multipliers: multipliers.unwrap_or_else(|| DEFAULT_MULTIPLIERS.to_vec()),
            validation_fraction: self.validation_fraction.unwrap_or(0.1),
            theta_aggregation: aggregation.unwrap_or_default().into(),
            center_shards,
            theta_override: None,
        };
        config.validate()?;
        Ok(config)
    }
}

impl FitOptions {

    /// Fits on already-loaded data; `config_echo` is copied into the report.
    pub fn run_on(&self, common: &Common, train: Dataset, test: Option<Dataset>, config_echo: Value) -> Result<FitOutput> {
        let seed = common.seed();
        let mode = self.mode.unwrap_or_default();
        let data = self.data();
        let k = data.k();
        // A single machine has nothing to combine: its Bayes penalty p/(nα̂²)
        // holds for any design, so the grid and its hold-out are skipped.
        let carve = mode == FitMode::General && k > 1;
        let prep = data.prepare(train, test, carve, self.config(seed)?, seed)?;
        let p = prep.shards[0].data.p();
        let cluster = Cluster::new(&prep.shards, &prep.config)?;
        let mut fit = match mode {
            FitMode::General if k > 1 => cluster.general(prep.validation.as_ref())?,
            FitMode::General => {
                let mut f = cluster.naive()?;
                f.plan.kind = PlanKind::General;
                f.plan.selected_lambda = f.plan.shard_lambdas.first().copied();
                f
            }
            FitMode::Isotropic => cluster.isotropic()?,
            FitMode::Naive => cluster.naive()?,
            FitMode::Local => cluster.local()?,
        };
        fit.report.grid.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));

        let empirical = prep.test.as_ref().filter(|t| t.n() > 0).map(|t| {
            let test_mse = mse(t, &fit.beta);
            let scale = prep.normalization.as_ref().map_or(1.0, |s| s.y_scale);
            Empirical {
                test_mse,
                test_mse_original_scale: test_mse * scale * scale,
            }
        });
        let (coefficients, intercept) = coefficients(&fit.beta, prep.normalization.as_ref());
        let report = RiskReport {
            version: VERSION.into(),
            command: "wonder".into(),
            seed,
            config: config_echo,
            mode: mode.name().into(),
            k,
            p,
            n_train: cluster.n(),
            n_validation: prep.validation.as_ref().map_or(0, Dataset::n),
            n_test: prep.test.as_ref().map_or(0, Dataset::n),
            theta: fit.plan.theta,
            selected_lambda: fit.plan.selected_lambda,
            shard_lambdas: fit.plan.shard_lambdas.clone(),
            weights: fit.plan.weights.clone(),
            weight_sum: fit.plan.weight_sum(),
            grid: fit.report.grid.clone(),
            theory: theory_for_sizes(fit.plan.theta, &prep.shards.iter().map(Shard::n).collect::<Vec<_>>(), p),
            empirical,
            messages: summarize_messages(&fit.report.messages.transmissions),
            intercept,
            timing: None,
        };
        Ok(FitOutput { report, coefficients })
    }

    pub fn run(&self, common: &Common, config_echo: Value) -> Result<FitOutput> {
        let started = Instant::now();
        let Some(train_path) = &self.train else {
            bail!("--train is required");
        };
        let data = self.data();
        let train = data.load(train_path)?;
        let test = self.test.as_deref().map(|t| data.load(t)).transpose()?;
        let load_seconds = started.elapsed().as_secs_f64();
        let mut out = self.run_on(common, train, test, config_echo)?;
        if self.timing {
            let total_seconds = started.elapsed().as_secs_f64();
            out.report.timing = Some(Timing {
                load_seconds,
                fit_seconds: total_seconds - load_seconds,
                total_seconds,
            });
        }
        Ok(out)
    }

    /// `--coef-out`, else `<out>` with its extension replaced by `coef.csv`.
    pub fn coef_path(&self, out: Option<&Path>) -> Option<PathBuf> {
        self.coef_out
            .clone()
            .or_else(|| out.map(|o| o.with_extension("coef.csv")))
    }
}

pub fn self_check(report: &RiskReport) -> Vec<String> {
    let mut failures = Vec::new();
    if report.weights.len() != report.k || report.weights.iter().any(|w| !w.is_finite()) {
        failures.push("weight vector is malformed".to_string());
    }
    if report.k == 1 && (report.weight_sum - 1.0).abs() > 1e-12 {
        failures.push(format!("single machine weight is {} instead of 1", report.weight_sum));
    }
    if report.mode == "isotropic" && report.weight_sum < 1.0 - 1e-10 {
        failures.push(format!("isotropic weights sum to {} < 1", report.weight_sum));
    }
    if let Some(lambda) = report.selected_lambda {
        if report.mode == "general" && report.k > 1 && !report.grid.iter().any(|g| g.lambda == lambda) {
            failures.push("selected penalty is not on the grid".to_string());
        }
    }
    if let Some(t) = &report.theory {
        if !(t.are > 0.0 && t.are <= 1.0 + 1e-10) {
            failures.push(format!("relative efficiency {} outside (0, 1]", t.are));
        }
    }
    if let Some(e) = &report.empirical {
        if !(e.test_mse.is_finite() && e.test_mse >= 0.0) {
            failures.push(format!("invalid test MSE {}", e.test_mse));
        }
    }
    failures
}
