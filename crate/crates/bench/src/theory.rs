//! Closed-form curves for isotropic designs split into `k` equal shards.

use anyhow::{bail, Result};
use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use wonder_core::spectral::{
    are_equal_split, infinite_worker_limit_h, isotropic_distributed_risk, optimal_risk_phi,
    optimal_weight_equal_split, out_of_sample_efficiency, out_of_sample_limit,
};
use wonder_core::SignalNoise;

use crate::options::{geometric_range, integer_range, values_or_range};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaRule {
    /// Each shard uses its own optimum `kγ/α²`
    #[default]
    Optimal,
    /// Every shard uses `--lambda`
    Fixed,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct TheoryOptions {
    /// Aspect ratios γ = p/n, comma separated
    #[arg(long, value_delimiter = ',')]
    pub gamma: Option<Vec<f64>>,
    /// Geometric γ grid `lo:hi:count`
    #[arg(long)]
    pub gamma_range: Option<String>,
    /// Signal-to-noise ratios α², comma separated
    #[arg(long, value_delimiter = ',')]
    pub alpha2: Option<Vec<f64>>,
    /// Geometric α² grid `lo:hi:count`
    #[arg(long)]
    pub alpha2_range: Option<String>,
    /// Numbers of machines, comma separated
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<usize>>,
    /// Machines `lo:hi[:step]`
    #[arg(long)]
    pub k_range: Option<String>,
    /// Noise level σ² (only OE depends on it)
    #[arg(long)]
    pub sigma2: Option<f64>,
    #[arg(long, value_enum)]
    pub lambda_rule: Option<LambdaRule>,
    /// Penalty for `--lambda-rule fixed`
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryRow {
    pub gamma: f64,
    pub alpha2: f64,
    pub k: usize,
    pub phi: f64,
    pub psi: f64,
    pub h: f64,
    /// Per-shard optimal weight.
    pub weight: f64,
    pub oe: f64,
    pub oe_limit: f64,
    pub lambda: f64,
    /// Limiting estimation risk with optimal weights at `lambda`.
    pub risk: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheoryGrid {
    pub gammas: Vec<f64>,
    pub alpha2s: Vec<f64>,
    pub ks: Vec<usize>,
    pub sigma2: f64,
    pub rule: LambdaRule,
    pub lambda: Option<f64>,
}

impl TheoryOptions {
    pub fn grid(&self) -> Result<TheoryGrid> {
        let mut gammas = values_or_range(
            "gamma",
            self.gamma.as_deref(),
            self.gamma_range.as_deref().map(geometric_range),
            None,
        )?;
        let alpha2s = values_or_range(
            "alpha2",
            self.alpha2.as_deref(),
            self.alpha2_range.as_deref().map(geometric_range),
            Some(1.0),
        )?;
        let ks = values_or_range("k", self.k.as_deref(), self.k_range.as_deref().map(integer_range), Some(1))?;
        gammas.sort_by(f64::total_cmp);
        if gammas.iter().chain(&alpha2s).any(|v| !(v.is_finite() && *v > 0.0)) {
            bail!("gamma and alpha2 values must be positive and finite");
        }
        if ks.contains(&0) {
            bail!("k must be at least 1");
        }
        let rule = self.lambda_rule.unwrap_or_default();
        if rule == LambdaRule::Fixed && !self.lambda.is_some_and(|l| l.is_finite() && l > 0.0) {
            bail!("--lambda-rule fixed needs a positive --lambda");
        }
        Ok(TheoryGrid {
            gammas,
            alpha2s,
            ks,
            sigma2: self.sigma2.unwrap_or(1.0),
            rule,
            lambda: self.lambda,
        })
    }
}

pub fn theory_row(gamma: f64, alpha2: f64, k: usize, sigma2: f64, lambda: f64) -> Result<TheoryRow> {
    let theta = SignalNoise::new(sigma2, alpha2)?;
    let shard_gamma = k as f64 * gamma;
    Ok(TheoryRow {
        gamma,
        alpha2,
        k,
        phi: optimal_risk_phi(gamma, alpha2)?,
        psi: are_equal_split(k, gamma, alpha2)?,
        h: infinite_worker_limit_h(alpha2, gamma)?,
        weight: optimal_weight_equal_split(k, gamma, alpha2)?,
        oe: out_of_sample_efficiency(k, gamma, alpha2, sigma2)?.0,
        oe_limit: out_of_sample_limit(alpha2, gamma)?,
        lambda,
        risk: isotropic_distributed_risk(&vec![shard_gamma; k], &vec![lambda; k], theta)?,
    })
}

/// Rows ordered by `(k, α², γ)`.
pub fn theory_table(grid: &TheoryGrid) -> Result<Vec<TheoryRow>> {
    let mut rows = Vec::with_capacity(grid.ks.len() * grid.alpha2s.len() * grid.gammas.len());
    let mut ks = grid.ks.clone();
    ks.sort_unstable();
    let mut alpha2s = grid.alpha2s.clone();
    alpha2s.sort_by(f64::total_cmp);
    for &k in &ks {
        for &alpha2 in &alpha2s {
            for &gamma in &grid.gammas {
                let lambda = match grid.rule {
                    LambdaRule::Optimal => k as f64 * gamma / alpha2,
                    LambdaRule::Fixed => grid.lambda.expect("checked when the grid was built"),
                };
                rows.push(theory_row(gamma, alpha2, k, grid.sigma2, lambda)?);
            }
        }
    }
    Ok(rows)
}

/// Spot checks of the known shape of the curves; returns the violations.
pub fn self_check(rows: &[TheoryRow]) -> Vec<String> {
    let mut failures = Vec::new();
    for r in rows {
        let at = format!("gamma={}, alpha2={}, k={}", r.gamma, r.alpha2, r.k);
        let fields = [r.phi, r.psi, r.h, r.weight, r.oe, r.oe_limit, r.risk];
        if fields.iter().any(|v| !v.is_finite()) {
            failures.push(format!("non-finite value at {at}"));
        }
        if r.k == 1 && (r.psi - 1.0).abs() > 1e-8 {
            failures.push(format!("psi = {} != 1 for a single machine at {at}", r.psi));
        }
        let k = r.k as f64;
        if r.weight < 1.0 / k - 1e-12 || r.weight > 1.0 + 1e-12 {
            failures.push(format!("weight {} outside [1/k, 1] at {at}", r.weight));
        }
        if r.psi < r.h - 1e-10 || r.psi > 1.0 + 1e-10 {
            failures.push(format!("psi {} outside [h, 1] = [{}, 1] at {at}", r.psi, r.h));
        }
        if r.oe < r.psi - 1e-10 {
            failures.push(format!("OE {} below psi {} at {at}", r.oe, r.psi));
        }
    }
    for pair in rows.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.k == b.k && a.alpha2 == b.alpha2 && b.gamma > a.gamma && b.h <= a.h {
            failures.push(format!(
                "h not increasing in gamma at alpha2={}: h({})={} >= h({})={}",
                a.alpha2, a.gamma, a.h, b.gamma, b.h
            ));
        }
    }
    // ψ is nonincreasing in k at fixed (γ, α²).
    for a in rows {
        for b in rows {
            if a.gamma == b.gamma && a.alpha2 == b.alpha2 && b.k > a.k && b.psi > a.psi + 1e-10 {
                failures.push(format!(
                    "psi increases from k={} to k={} at gamma={}, alpha2={}",
                    a.k, b.k, a.gamma, a.alpha2
                ));
            }
        }
    }
    failures
}
