//! Realized relative efficiency of the isotropic distributed estimator
//! against the full-data ridge fit, per number of machines and seed.

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use wonder_core::data::{derive_seed, generate};
use wonder_core::protocol::{partition, Cluster, WonderConfig};
use wonder_core::ridge::finite_sample_weights;
use wonder_core::spectral::are_equal_split;
use wonder_core::{Dataset, Design, DesignMatrix, SignalNoise, SynthSpec};

/// Refuse jobs with `n·p` above this unless explicitly allowed.
pub const WORK_LIMIT: f64 = 1e8;

const TAG_REPLICATE: u64 = 21;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaMode {
    /// Use the true (σ², α²)
    #[default]
    Oracle,
    /// Estimate θ by maximum likelihood on each shard
    Estimated,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EfficiencyOptions {
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub alpha2: Option<f64>,
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Numbers of machines, comma separated
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Number of replicates
    #[arg(long)]
    pub seeds: Option<usize>,
    #[arg(long, value_enum)]
    pub theta: Option<ThetaMode>,
    /// Lift the n·p resource guard
    #[arg(long)]
    pub allow_large: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EfficiencySpec {
    pub n: usize,
    pub p: usize,
    pub alpha2: f64,
    pub sigma2: f64,
    pub ks: Vec<usize>,
    pub seeds: usize,
    pub seed: u64,
    pub theta: ThetaMode,
    pub allow_large: bool,
}

impl EfficiencyOptions {
    pub fn spec(&self, seed: u64) -> Result<EfficiencySpec> {
        let spec = EfficiencySpec {
            n: self.n.unwrap_or(1000),
            p: self.p.unwrap_or(100),
            alpha2: self.alpha2.unwrap_or(1.0),
            sigma2: self.sigma2.unwrap_or(1.0),
            ks: self.k.clone().unwrap_or_else(|| vec![1, 2, 5, 10]),
            seeds: self.seeds.unwrap_or(10),
            seed,
            theta: self.theta.unwrap_or_default(),
            allow_large: self.allow_large,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl EfficiencySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.n >= self.p && self.p >= 1) {
            bail!("need n >= p >= 1, got n={}, p={}", self.n, self.p);
        }
        check_work(self.n, self.p, self.allow_large)?;
        if self.ks.is_empty() || self.ks.iter().any(|&k| k == 0 || k > self.n) {
            bail!("every k must lie in [1, n]");
        }
        if self.seeds == 0 {
            bail!("at least one seed is required");
        }
        SignalNoise::new(self.sigma2, self.alpha2)?;
        Ok(())
    }
}

pub fn check_work(n: usize, p: usize, allow_large: bool) -> Result<()> {
    let work = n as f64 * p as f64;
    if work > WORK_LIMIT && !allow_large {
        bail!("n*p = {work:e} exceeds the resource guard of {WORK_LIMIT:e}; pass --allow-large to run anyway");
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRun {
    pub k: usize,
    pub seed: u64,
    /// `‖β̂ − β‖² / ‖β̂_dist − β‖²`.
    pub realized: f64,
    pub theory_psi: f64,
    /// Sum of the plan's weights.
    pub weight_sum: f64,
    /// Sum of the finite-sample optimal weights for the same local fits.
    pub oracle_weight_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencySummary {
    pub k: usize,
    pub runs: usize,
    pub mean_realized: f64,
    pub sd_realized: f64,
    pub theory_psi: f64,
    /// Share of runs whose optimal weights sum above one.
    pub share_oracle_sum_above_one: f64,
}

fn replicate_seed(root: u64, index: usize) -> u64 {
    derive_seed(root, TAG_REPLICATE, index as u64)
}

fn config_for(k: usize, spec: &EfficiencySpec) -> Result<WonderConfig> {
    Ok(WonderConfig {
        theta_override: match spec.theta {
            ThetaMode::Oracle => Some(SignalNoise::new(spec.sigma2, spec.alpha2)?),
            ThetaMode::Estimated => None,
        },
        ..WonderConfig::with_k(k)
    })
}

struct Fitted {
    error: f64,
    weight_sum: f64,
    oracle_weight_sum: f64,
}

fn fit_isotropic(data: &Dataset, k: usize, spec: &EfficiencySpec) -> Result<Fitted> {
    let config = config_for(k, spec)?;
    let cluster = Cluster::new(&partition(data, &config)?, &config)?;
    let fit = cluster.isotropic()?;
    let beta = data.beta.as_ref().expect("synthetic data carries beta");
    let designs: Vec<DesignMatrix<f64>> = cluster.workers().iter().map(|w| w.design().clone()).collect();
    let (w_star, _, _) = finite_sample_weights(&designs, beta, spec.sigma2, &fit.plan.shard_lambdas)?;
    Ok(Fitted {
        error: (&fit.beta - beta).norm_squared(),
        weight_sum: fit.plan.weight_sum(),
        oracle_weight_sum: w_star.sum(),
    })
}

/// All `(k, seed)` runs, sorted by `(k, seed)`. Replicates run in parallel.
pub fn efficiency_runs(spec: &EfficiencySpec) -> Result<Vec<EfficiencyRun>> {
    spec.validate()?;
    let gamma = spec.p as f64 / spec.n as f64;
    let per_seed: Vec<Vec<EfficiencyRun>> = (0..spec.seeds)
        .into_par_iter()
        .map(|i| {
            let seed = replicate_seed(spec.seed, i);
            let data = generate(&SynthSpec {
                n: spec.n,
                p: spec.p,
                design: Design::Isotropic,
                alpha2: spec.alpha2,
                sigma2: spec.sigma2,
                seed,
            })?;
            // The global estimator is the one-machine run of the same code path,
            // so k = 1 gives exactly the same estimator on both sides.
            let global = fit_isotropic(&data, 1, spec)?;
            spec.ks
                .iter()
                .map(|&k| {
                    let dist = if k == 1 { None } else { Some(fit_isotropic(&data, k, spec)?) };
                    let d = dist.as_ref().unwrap_or(&global);
                    Ok(EfficiencyRun {
                        k,
                        seed,
                        realized: global.error / d.error,
                        theory_psi: are_equal_split(k, gamma, spec.alpha2)?,
                        weight_sum: d.weight_sum,
                        oracle_weight_sum: d.oracle_weight_sum,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut runs: Vec<EfficiencyRun> = per_seed.into_iter().flatten().collect();
    runs.sort_by_key(|r| (r.k, r.seed));
    Ok(runs)
}

/// Mean and Monte Carlo standard deviation per k.
pub fn summarize(runs: &[EfficiencyRun]) -> Vec<EfficiencySummary> {
    let mut ks: Vec<usize> = runs.iter().map(|r| r.k).collect();
    ks.dedup();
    ks.into_iter()
        .map(|k| {
            let at: Vec<&EfficiencyRun> = runs.iter().filter(|r| r.k == k).collect();
            let m = at.len() as f64;
            let mean = at.iter().map(|r| r.realized).sum::<f64>() / m;
            let var = if at.len() > 1 {
                at.iter().map(|r| (r.realized - mean).powi(2)).sum::<f64>() / (m - 1.0)
            } else {
                0.0
            };
            EfficiencySummary {
                k,
                runs: at.len(),
                mean_realized: mean,
                sd_realized: var.sqrt(),
                theory_psi: at[0].theory_psi,
                share_oracle_sum_above_one: at.iter().filter(|r| r.oracle_weight_sum > 1.0).count() as f64 / m,
            }
        })
        .collect()
}

/// A run or summary line of the emitted table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfficiencyRecord {
    pub row: &'static str,
    pub k: usize,
    pub seed: Option<u64>,
    pub realized: f64,
    pub realized_sd: Option<f64>,
    pub theory_psi: f64,
    pub weight_sum: Option<f64>,
    pub oracle_weight_sum: Option<f64>,
}

pub fn records(runs: &[EfficiencyRun], summaries: &[EfficiencySummary]) -> Vec<EfficiencyRecord> {
    let mut out: Vec<EfficiencyRecord> = runs
        .iter()
        .map(|r| EfficiencyRecord {
            row: "run",
            k: r.k,
            seed: Some(r.seed),
            realized: r.realized,
            realized_sd: None,
            theory_psi: r.theory_psi,
            weight_sum: Some(r.weight_sum),
            oracle_weight_sum: Some(r.oracle_weight_sum),
        })
        .collect();
    out.extend(summaries.iter().map(|s| EfficiencyRecord {
        row: "summary",
        k: s.k,
        seed: None,
        realized: s.mean_realized,
        realized_sd: Some(s.sd_realized),
        theory_psi: s.theory_psi,
        weight_sum: None,
        oracle_weight_sum: None,
    }));
    out
}

pub fn self_check(runs: &[EfficiencyRun]) -> Vec<String> {
    let mut failures = Vec::new();
    for r in runs {
        if !(r.realized.is_finite() && r.realized > 0.0) {
            failures.push(format!("k={} seed={}: realized efficiency {}", r.k, r.seed, r.realized));
        }
        if r.k == 1 && r.realized != 1.0 {
            failures.push(format!("seed={}: one machine gives efficiency {} != 1", r.seed, r.realized));
        }
        if !(r.theory_psi > 0.0 && r.theory_psi <= 1.0 + 1e-12) {
            failures.push(format!("k={}: psi {} outside (0, 1]", r.k, r.theory_psi));
        }
        if r.weight_sum < 1.0 - 1e-8 {
            failures.push(format!("k={} seed={}: weights sum to {}", r.k, r.seed, r.weight_sum));
        }
    }
    failures
}
