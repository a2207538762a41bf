//! The protocol over files, one process per role. `split` plays the data
//! owner, `worker` runs on one shard, `combine` sees only the messages.
//!
//! ```text
//! dir/manifest.json        split → combine
//! dir/shard_<i>.csv        split → worker i
//! dir/validation.csv       split → combine (general mode)
//! dir/theta_<i>.json       worker i → combine      (general, round one)
//! dir/broadcast.json       combine → workers       (general)
//! dir/summary_<i>.json     worker i → combine      (round two)
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use wonder_core::data::{apply_normalization, load_csv, write_csv, NormalizationStats, OutcomeColumn};
use wonder_core::protocol::{
    combine_general, combine_isotropic, make_broadcast, read_json, theta_from_summaries, write_json, Broadcast,
    DistributedFit, LocalWorker, MessageLog, Shard, ShardSummary, ThetaMessage, WonderConfig, LOCAL_ALPHA2_FLOOR,
    ROUND_THETA,
};

use crate::fit::{
    coefficients, summarize_messages, theory_for_sizes, Aggregation, CoefficientRow, DataOptions, Empirical, FitMode,
    FitOutput, RiskReport,
};
use crate::options::{Common, VERSION};

pub const MANIFEST_SCHEMA: &str = "wonder.split.v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Theta,
    Fit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema: String,
    pub mode: FitMode,
    pub k: usize,
    pub p: usize,
    pub shard_sizes: Vec<usize>,
    pub n_validation: usize,
    pub outcome: Option<String>,
    pub no_header: bool,
    pub normalization: Option<NormalizationStats>,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SplitOptions {
    /// Training CSV to distribute
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    /// Exchange directory (created if missing)
    #[arg(long, value_name = "PATH")]
    pub dir: Option<PathBuf>,
    /// `general` or `isotropic`
    #[arg(long, value_enum)]
    pub mode: Option<FitMode>,
    #[arg(long)]
    pub outcome: Option<String>,
    #[arg(long)]
    pub no_header: bool,
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    #[arg(long)]
    pub shuffle: bool,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct WorkerOptions {
    #[arg(long, value_enum)]
    pub phase: Option<Phase>,
    #[arg(long, value_name = "PATH")]
    pub dir: Option<PathBuf>,
    #[arg(long)]
    pub shard_id: Option<usize>,
    /// Shard CSV (defaults to `<dir>/shard_<id>.csv`)
    #[arg(long, value_name = "PATH")]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<FitMode>,
    /// Also send the Fisher information (inverse-variance aggregation)
    #[arg(long)]
    pub fisher: bool,
    #[arg(long)]
    pub center_shards: bool,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct CombineOptions {
    #[arg(long, value_enum)]
    pub phase: Option<Phase>,
    #[arg(long, value_name = "PATH")]
    pub dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<FitMode>,
    /// Validation CSV, already normalized (defaults to `<dir>/validation.csv`)
    #[arg(long, value_name = "PATH")]
    pub validation: Option<PathBuf>,
    /// Raw test CSV, scored with the split's normalization
    #[arg(long, value_name = "PATH")]
    pub test: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub lambda_multipliers: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub theta_aggregation: Option<Aggregation>,
    #[arg(long, value_name = "PATH")]
    pub coef_out: Option<PathBuf>,
}

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T> {
    value.as_ref().with_context(|| format!("--{flag} is required"))
}

fn exchange_mode(mode: Option<FitMode>) -> Result<FitMode> {
    match mode.unwrap_or_default() {
        m @ (FitMode::General | FitMode::Isotropic) => Ok(m),
        other => bail!("file exchange supports the general and isotropic modes, not {}", other.name()),
    }
}

fn shard_csv(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("shard_{id}.csv"))
}

fn theta_json(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("theta_{id}.json"))
}

fn summary_json(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("summary_{id}.json"))
}

fn read<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    read_json(path).with_context(|| format!("reading {}", path.display()))
}

fn write<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_json(path, value).with_context(|| format!("writing {}", path.display()))
}

impl SplitOptions {
    pub fn data_options(&self) -> DataOptions {
        DataOptions {
            outcome: self.outcome.clone(),
            no_header: self.no_header,
            no_normalize: self.no_normalize,
            k: self.k,
            validation_fraction: self.validation_fraction,
            shuffle: self.shuffle,
        }
    }

    pub fn run(&self, common: &Common) -> Result<Manifest> {
        let dir = required(&self.dir, "dir")?;
        let mode = exchange_mode(self.mode)?;
        let data = self.data_options();
        if mode == FitMode::General && data.k() == 1 {
            bail!("a single machine has nothing to combine; use `wonder` or --mode isotropic");
        }
        let seed = common.seed();
        let train = data.load(required(&self.data, "data")?)?;
        let prep = data.prepare(train, None, mode == FitMode::General, data.config(seed, None, None, false)?, seed)?;
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for shard in &prep.shards {
            write_csv(shard_csv(dir, shard.id), &shard.data)?;
        }
        if let Some(v) = &prep.validation {
            write_csv(dir.join("validation.csv"), v)?;
        }
        let manifest = Manifest {
            schema: MANIFEST_SCHEMA.into(),
            mode,
            k: prep.shards.len(),
            p: prep.shards[0].data.p(),
            shard_sizes: prep.shards.iter().map(Shard::n).collect(),
            n_validation: prep.validation.as_ref().map_or(0, |v| v.n()),
            outcome: self.outcome.clone(),
            no_header: self.no_header,
            normalization: prep.normalization,
        };
        write(&dir.join("manifest.json"), &manifest)?;
        Ok(manifest)
    }
}

impl WorkerOptions {
    /// Returns the path written.
    pub fn run(&self) -> Result<PathBuf> {
        let dir = required(&self.dir, "dir")?;
        let id = *required(&self.shard_id, "shard-id")?;
        let phase = *required(&self.phase, "phase")?;
        let path = self.data.clone().unwrap_or_else(|| shard_csv(dir, id));
        let data = load_csv(&path, &OutcomeColumn::Last, true).with_context(|| format!("loading {}", path.display()))?;
        let worker = LocalWorker::new(&Shard { id, data, seed: 0 }, self.center_shards)?;
        match (phase, exchange_mode(self.mode)?) {
            (Phase::Theta, FitMode::General) => {
                let out = theta_json(dir, id);
                write(&out, &worker.fit_theta(self.fisher)?)?;
                Ok(out)
            }
            (Phase::Theta, _) => bail!("the isotropic mode has no theta round; run --phase fit directly"),
            (Phase::Fit, FitMode::General) => {
                let broadcast: Broadcast = read(&dir.join("broadcast.json"))?;
                broadcast.validate()?;
                let own: ThetaMessage = read(&theta_json(dir, id))?;
                let summaries = worker.summarize(own.estimate().theta(), &broadcast.lambdas)?;
                let out = summary_json(dir, id);
                write(&out, &summaries)?;
                Ok(out)
            }
            (Phase::Fit, _) => {
                let theta = worker.fit_theta(false)?.estimate().theta();
                let lambda = worker.p() as f64 / worker.n() as f64 / theta.alpha2.max(LOCAL_ALPHA2_FLOOR);
                let summaries = worker.summarize(theta, &[lambda])?;
                let out = summary_json(dir, id);
                write(&out, &summaries)?;
                Ok(out)
            }
        }
    }
}

pub enum Combined {
    Broadcast(Broadcast),
    Fit(Box<FitOutput>),
}

impl CombineOptions {
    pub fn run(&self, common: &Common, config_echo: Value) -> Result<Combined> {
        let dir = required(&self.dir, "dir")?;
        let phase = *required(&self.phase, "phase")?;
        let mode = exchange_mode(self.mode)?;
        let manifest: Manifest = read(&dir.join("manifest.json"))?;
        if manifest.mode != mode {
            bail!("the split was prepared for {} mode", manifest.mode.name());
        }
        let thetas = || -> Result<Vec<ThetaMessage>> { (0..manifest.k).map(|i| read(&theta_json(dir, i))).collect() };
        match phase {
            Phase::Theta => {
                if mode != FitMode::General {
                    bail!("the isotropic mode has no theta round");
                }
                let config = WonderConfig {
                    k: manifest.k,
                    lambda_multipliers: self
                        .lambda_multipliers
                        .clone()
                        .unwrap_or_else(|| WonderConfig::default().lambda_multipliers),
                    theta_aggregation: self.theta_aggregation.unwrap_or_default().into(),
                    ..WonderConfig::default()
                };
                config.validate()?;
                let broadcast = make_broadcast(&thetas()?, &config)?;
                write(&dir.join("broadcast.json"), &broadcast)?;
                Ok(Combined::Broadcast(broadcast))
            }
            Phase::Fit => {
                let mut summaries: Vec<ShardSummary> = Vec::new();
                for i in 0..manifest.k {
                    summaries.extend(read::<Vec<ShardSummary>>(&summary_json(dir, i))?);
                }
                let fit = if mode == FitMode::General {
                    let broadcast: Broadcast = read(&dir.join("broadcast.json"))?;
                    let vpath = self.validation.clone().unwrap_or_else(|| dir.join("validation.csv"));
                    let validation = if vpath.exists() {
                        Some(load_csv(&vpath, &OutcomeColumn::Last, true)?)
                    } else {
                        None
                    };
                    let mut fit = combine_general(&summaries, &broadcast, validation.as_ref())?;
                    let mut log = MessageLog::default();
                    for m in thetas()? {
                        log.record(ROUND_THETA, m.shard_id, m.payload());
                    }
                    log.transmissions.extend(fit.report.messages.transmissions);
                    fit.report.messages = log;
                    fit
                } else {
                    combine_isotropic(&summaries, theta_from_summaries(&summaries)?)?
                };
                Ok(Combined::Fit(Box::new(self.report(common, &manifest, fit, config_echo)?)))
            }
        }
    }

    fn report(&self, common: &Common, manifest: &Manifest, mut fit: DistributedFit, config_echo: Value) -> Result<FitOutput> {
        let test = match &self.test {
            Some(path) => {
                let raw = load_csv(
                    path,
                    &crate::fit::parse_outcome(manifest.outcome.as_deref()),
                    !manifest.no_header,
                )
                .with_context(|| format!("loading {}", path.display()))?;
                if raw.p() != manifest.p {
                    bail!("test set has {} features, the split has {}", raw.p(), manifest.p);
                }
                Some(match &manifest.normalization {
                    Some(stats) => apply_normalization(&raw, stats),
                    None => raw,
                })
            }
            None => None,
        };
        fit.report.grid.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
        let empirical = test.as_ref().filter(|t| t.n() > 0).map(|t| {
            let test_mse = (&t.y - &t.x * &fit.beta).norm_squared() / t.n() as f64;
            let scale = manifest.normalization.as_ref().map_or(1.0, |s| s.y_scale);
            Empirical {
                test_mse,
                test_mse_original_scale: test_mse * scale * scale,
            }
        });
        let (coefficients, intercept): (Vec<CoefficientRow>, f64) =
            coefficients(&fit.beta, manifest.normalization.as_ref());
        let report = RiskReport {
            version: VERSION.into(),
            command: "combine".into(),
            seed: common.seed(),
            config: config_echo,
            mode: manifest.mode.name().into(),
            k: manifest.k,
            p: manifest.p,
            n_train: manifest.shard_sizes.iter().sum(),
            n_validation: manifest.n_validation,
            n_test: test.as_ref().map_or(0, |t| t.n()),
            theta: fit.plan.theta,
            selected_lambda: fit.plan.selected_lambda,
            shard_lambdas: fit.plan.shard_lambdas.clone(),
            weights: fit.plan.weights.clone(),
            weight_sum: fit.plan.weight_sum(),
            grid: fit.report.grid.clone(),
            theory: theory_for_sizes(fit.plan.theta, &manifest.shard_sizes, manifest.p),
            empirical,
            messages: summarize_messages(&fit.report.messages.transmissions),
            intercept,
            timing: None,
        };
        Ok(FitOutput { report, coefficients })
    }
}
