//! Exact (noise-averaged) estimation risk over a grid of penalties, for
//! optimal, naive and plug-in weights.

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use wonder_core::data::{derive_seed, generate};
use wonder_core::protocol::{partition, WonderConfig, DEFAULT_MULTIPLIERS};
use wonder_core::ridge::{finite_sample_weights, oracle_mse_of_weights, trace_functionals};
use wonder_core::spectral::equal_split_weights_risk;
use wonder_core::{Design, DesignMatrix, SignalNoise, SynthSpec};

use crate::simulate::check_work;

const TAG_REPLICATE: u64 = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DesignKind {
    #[default]
    Isotropic,
    Ar1,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SweepOptions {
    #[arg(long, value_enum)]
    pub design: Option<DesignKind>,
    /// AR-1 correlation
    #[arg(long)]
    pub rho: Option<f64>,
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
    /// Multipliers of `kγ/α²`, comma separated
    #[arg(long, value_delimiter = ',')]
    pub multipliers: Option<Vec<f64>>,
    /// Number of replicates averaged per grid point
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Lift the n·p resource guard
    #[arg(long)]
    pub allow_large: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub n: usize,
    pub p: usize,
    pub design: Design,
    pub alpha2: f64,
    pub sigma2: f64,
    pub ks: Vec<usize>,
    pub multipliers: Vec<f64>,
    pub seeds: usize,
    pub seed: u64,
    pub allow_large: bool,
}

impl SweepOptions {
    pub fn spec(&self, seed: u64) -> Result<SweepSpec> {
        let design = match self.design.unwrap_or_default() {
            DesignKind::Isotropic => {
                if self.rho.is_some() {
                    bail!("--rho applies to the ar1 design only");
                }
                Design::Isotropic
            }
            DesignKind::Ar1 => Design::Ar1 {
                rho: self.rho.unwrap_or(0.9),
            },
        };
        let spec = SweepSpec {
            n: self.n.unwrap_or(1500),
            p: self.p.unwrap_or(250),
            design,
            alpha2: self.alpha2.unwrap_or(1.0),
            sigma2: self.sigma2.unwrap_or(1.0),
            ks: self.k.clone().unwrap_or_else(|| vec![1, 2, 5]),
            multipliers: self.multipliers.clone().unwrap_or_else(|| DEFAULT_MULTIPLIERS.to_vec()),
            seeds: self.seeds.unwrap_or(1),
            seed,
            allow_large: self.allow_large,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        check_work(self.n, self.p, self.allow_large)?;
        if self.ks.is_empty() || self.ks.iter().any(|&k| k == 0 || k > self.n) {
            bail!("every k must lie in [1, n]");
        }
        if self.multipliers.is_empty() || self.multipliers.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            bail!("multipliers must be positive and finite");
        }
        if self.seeds == 0 {
            bail!("at least one seed is required");
        }
        SynthSpec {
            n: self.n,
            p: self.p,
            design: self.design,
            alpha2: self.alpha2,
            sigma2: self.sigma2,
            seed: 0,
        }
        .validate()?;
        if self.alpha2 <= 0.0 {
            bail!("alpha2 must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k: usize,
    pub multiplier: f64,
    pub lambda: f64,
    /// `E‖Σ w_i β̂_i − β‖²` with the finite-sample optimal weights.
    pub mse_opt: f64,
    /// … with weights `1/k`.
    pub mse_naive: f64,
    /// … with the plug-in equal-split weights of the general-design algorithm.
    pub mse_wonder: f64,
    pub weight_sum_opt: f64,
    pub weight_sum_wonder: f64,
    pub is_argmin: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// `(k, multiplier minimizing mse_opt)`; ties go to the smaller multiplier.
    pub argmin: Vec<(usize, f64)>,
}

struct Point {
    mse_opt: f64,
    mse_naive: f64,
    mse_wonder: f64,
    weight_sum_opt: f64,
    weight_sum_wonder: f64,
}

fn replicate(spec: &SweepSpec, index: usize) -> Result<Vec<Point>> {
    let data = generate(&SynthSpec {
        n: spec.n,
        p: spec.p,
        design: spec.design,
        alpha2: spec.alpha2,
        sigma2: spec.sigma2,
        seed: derive_seed(spec.seed, TAG_REPLICATE, index as u64),
    })?;
    let beta = data.beta.clone().expect("synthetic data carries beta");
    let b2 = beta.norm_squared();
    let gamma = spec.p as f64 / spec.n as f64;
    let theta = SignalNoise::new(spec.sigma2, spec.alpha2)?;
    let mut out = Vec::with_capacity(spec.ks.len() * spec.multipliers.len());
    for &k in &spec.ks {
        let shards: Vec<DesignMatrix<f64>> = partition(&data, &WonderConfig::with_k(k))?
            .into_par_iter()
            .map(|s| DesignMatrix::new(s.data.x))
            .collect::<wonder_core::Result<_>>()?;
        let points: Vec<Point> = spec
            .multipliers
            .par_iter()
            .map(|&mult| {
                let lambda = mult * k as f64 * gamma / spec.alpha2;
                let lambdas = vec![lambda; k];
                let (w, mse_opt, moments) = finite_sample_weights(&shards, &beta, spec.sigma2, &lambdas)?;
                let naive = DVector::from_element(k, 1.0 / k as f64);
                let mse_naive = oracle_mse_of_weights(&moments, &naive, b2)?;
                let (mut m, mut mp) = (0.0, 0.0);
                for s in &shards {
                    let (a, b) = trace_functionals(s, lambda)?;
                    m += a / k as f64;
                    mp += b / k as f64;
                }
                let (wk, _) = equal_split_weights_risk(k, gamma, lambda, theta, m, mp)?;
                let plug_in = DVector::from_element(k, wk);
                Ok(Point {
                    mse_opt,
                    mse_naive,
                    mse_wonder: oracle_mse_of_weights(&moments, &plug_in, b2)?,
                    weight_sum_opt: w.sum(),
                    weight_sum_wonder: wk * k as f64,
                })
            })
            .collect::<Result<_>>()?;
        out.extend(points);
    }
    Ok(out)
}

/// Grid points averaged over replicates (summed in replicate order).
pub fn lambda_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let reps: Vec<Vec<Point>> = (0..spec.seeds)
        .into_par_iter()
        .map(|i| replicate(spec, i))
        .collect::<Result<_>>()?;
    let r = spec.seeds as f64;
    let gamma = spec.p as f64 / spec.n as f64;
    let mut rows = Vec::new();
    let mut idx = 0;
    for &k in &spec.ks {
        for &multiplier in &spec.multipliers {
            let mean = |f: &dyn Fn(&Point) -> f64| reps.iter().map(|rep| f(&rep[idx])).sum::<f64>() / r;
            rows.push(SweepRow {
                k,
                multiplier,
                lambda: multiplier * k as f64 * gamma / spec.alpha2,
                mse_opt: mean(&|p| p.mse_opt),
                mse_naive: mean(&|p| p.mse_naive),
                mse_wonder: mean(&|p| p.mse_wonder),
                weight_sum_opt: mean(&|p| p.weight_sum_opt),
                weight_sum_wonder: mean(&|p| p.weight_sum_wonder),
                is_argmin: false,
            });
            idx += 1;
        }
    }
    let mut argmin = Vec::new();
    for (block, &k) in rows.chunks_mut(spec.multipliers.len()).zip(&spec.ks) {
        let best = (0..block.len())
            .min_by(|&a, &b| {
                block[a]
                    .mse_opt
                    .total_cmp(&block[b].mse_opt)
                    .then(block[a].multiplier.total_cmp(&block[b].multiplier))
            })
            .expect("non-empty grid");
        block[best].is_argmin = true;
        argmin.push((k, block[best].multiplier));
    }
    Ok(SweepResult { rows, argmin })
}

pub fn self_check(result: &SweepResult) -> Vec<String> {
    let mut failures = Vec::new();
    for r in &result.rows {
        let tol = 1e-9 * r.mse_naive.abs().max(1.0);
        if r.mse_opt > r.mse_naive + tol || r.mse_opt > r.mse_wonder + tol {
            failures.push(format!(
                "k={} multiplier={}: optimal weights ({}) beaten by naive ({}) or plug-in ({})",
                r.k, r.multiplier, r.mse_opt, r.mse_naive, r.mse_wonder
            ));
        }
        if ![r.mse_opt, r.mse_naive, r.mse_wonder].iter().all(|v| v.is_finite() && *v >= 0.0) {
            failures.push(format!("k={} multiplier={}: invalid risk", r.k, r.multiplier));
        }
    }
    failures
}
