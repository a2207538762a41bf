//! The combiner side: θ aggregation, weights, and λ selection.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mle::{aggregate_theta, FisherInfo, ThetaAggregation, ThetaEstimate};
use crate::spectral::{
    equal_split_weights_risk, isotropic_optimal_weights, optimal_distributed_risk, SignalNoise,
};

use super::config::WonderConfig;
use super::message::{Broadcast, MessageLog, ShardSummary, ThetaMessage, BROADCAST_SCHEMA};

pub const ROUND_THETA: &str = "theta";
pub const ROUND_FIT: &str = "fit";

/// Floor for a local α̂² when it sets a local penalty `γ_i/α̂_i²`.
pub const LOCAL_ALPHA2_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanKind {
    General,
    Isotropic,
    Naive,
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightPlan {
    pub kind: PlanKind,
    /// In shard-id order.
    pub weights: Vec<f64>,
    /// Penalty each shard's estimator was fit with.
    pub shard_lambdas: Vec<f64>,
    /// The grid-selected penalty, for plans that search a grid.
    pub selected_lambda: Option<f64>,
    pub theta: SignalNoise<f64>,
}

impl WeightPlan {
    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda: f64,
    pub weight_sum: f64,
    /// Plug-in limiting estimation risk at this penalty, where a formula applies.
    pub theory_risk: Option<f64>,
    pub validation_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombineReport {
    pub grid: Vec<GridPoint>,
    pub selected: usize,
    pub messages: MessageLog,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributedFit {
    pub beta: DVector<f64>,
    pub plan: WeightPlan,
    pub report: CombineReport,
}

fn sorted_messages(messages: &[ThetaMessage]) -> Result<Vec<&ThetaMessage>> {
    if messages.is_empty() {
        return Err(Error::Protocol("no theta messages received".into()));
    }
    let mut sorted: Vec<&ThetaMessage> = messages.iter().collect();
    sorted.sort_by_key(|m| m.shard_id);
    for m in &sorted {
        m.validate()?;
    }
    if sorted.windows(2).any(|w| w[0].shard_id == w[1].shard_id) {
        return Err(Error::Protocol("duplicate shard ids in theta messages".into()));
    }
    Ok(sorted)
}

pub fn combine_theta(messages: &[ThetaMessage], mode: ThetaAggregation) -> Result<ThetaEstimate<f64>> {
    let sorted = sorted_messages(messages)?;
    let estimates: Vec<_> = sorted.iter().map(|m| m.estimate()).collect();
    let infos: Option<Vec<FisherInfo<f64>>> = sorted.iter().map(|m| m.fisher).collect();
    aggregate_theta(&estimates, mode, infos.as_deref())
}

/// Mean of the θ̂_i carried by one summary per shard (shard-id order).
pub fn theta_from_summaries(summaries: &[ShardSummary]) -> Result<SignalNoise<f64>> {
    let mut sorted: Vec<&ShardSummary> = summaries.iter().collect();
    sorted.sort_by_key(|s| s.shard_id);
    sorted.dedup_by_key(|s| s.shard_id);
    let estimates: Vec<ThetaEstimate<f64>> = sorted
        .iter()
        .map(|s| ThetaEstimate {
            sigma2_hat: s.sigma2_hat,
            alpha2_hat: s.alpha2_hat,
            loglik: 0.0,
            converged: true,
        })
        .collect();
    Ok(aggregate_theta(&estimates, ThetaAggregation::Mean, None)?.theta())
}

fn require_signal(alpha2: f64) -> Result<()> {
    if alpha2 > 0.0 && alpha2.is_finite() {
        Ok(())
    } else {
        Err(Error::Protocol(format!(
            "estimated signal-to-noise ratio is {alpha2}; optimal weights are undefined and the null estimator beta = 0 should be used instead"
        )))
    }
}

/// Initial guess `λ₀ = kp/(nα̂²)`.
pub fn initial_lambda(k: usize, p: usize, n: usize, alpha2: f64) -> Result<f64> {
    require_signal(alpha2)?;
    Ok((k * p) as f64 / (n as f64 * alpha2))
}

/// Aggregates round-one messages into the global θ̂ and the λ grid.
pub fn make_broadcast(messages: &[ThetaMessage], config: &WonderConfig) -> Result<Broadcast> {
    let p = sorted_messages(messages)?[0].p;
    if messages.iter().any(|m| m.p != p) {
        return Err(Error::Protocol("theta messages disagree on the number of features".into()));
    }
    let theta = match config.theta_override {
        Some(t) => t,
        None => combine_theta(messages, config.theta_aggregation)?.theta(),
    };
    let k = messages.len();
    let n = messages.iter().map(|m| m.n_i).sum();
    let lambda0 = initial_lambda(k, p, n, theta.alpha2)?;
    Ok(Broadcast {
        schema: BROADCAST_SCHEMA.into(),
        k,
        n,
        sigma2_hat: theta.sigma2,
        alpha2_hat: theta.alpha2,
        lambdas: config.lambda_multipliers.iter().map(|m| m * lambda0).collect(),
    })
}

fn validation_mse(data: &Dataset, beta: &DVector<f64>) -> Result<f64> {
    if data.p() != beta.len() {
        return Err(Error::Dimension(format!(
            "validation set has {} columns, estimator has {}",
            data.p(),
            beta.len()
        )));
    }
    let resid = &data.y - &data.x * beta;
    Ok(resid.norm_squared() / data.n() as f64)
}

/// `Σ ω_i β̂_i`, summed in the given (shard-id) order.
fn weighted_sum(summaries: &[&ShardSummary], weights: &[f64]) -> DVector<f64> {
    let p = summaries[0].beta_hat.len();
    let mut out = DVector::zeros(p);
    for (s, &w) in summaries.iter().zip(weights) {
        for (o, &b) in out.iter_mut().zip(&s.beta_hat) {
            *o += w * b;
        }
    }
    out
}

fn check_summaries(summaries: &[ShardSummary]) -> Result<usize> {
    let p = summaries
        .first()
        .ok_or_else(|| Error::Protocol("no shard summaries received".into()))?
        .beta_hat
        .len();
    for s in summaries {
        s.validate()?;
        if s.beta_hat.len() != p {
            return Err(Error::Protocol(format!(
                "shard {} sent {} coefficients, expected {p}",
                s.shard_id,
                s.beta_hat.len()
            )));
        }
    }
    Ok(p)
}

/// Groups summaries into `[grid point][shard]`, shards in id order.
fn group_by_grid<'a>(summaries: &'a [ShardSummary], broadcast: &Broadcast) -> Result<Vec<Vec<&'a ShardSummary>>> {
    let mut ids: Vec<usize> = summaries.iter().map(|s| s.shard_id).collect();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() != broadcast.k {
        return Err(Error::Protocol(format!(
            "expected summaries from {} shards, got {}",
            broadcast.k,
            ids.len()
        )));
    }
    let mut grid = Vec::with_capacity(broadcast.lambdas.len());
    for &lambda in &broadcast.lambdas {
        let mut at: Vec<&ShardSummary> = summaries.iter().filter(|s| s.lambda == lambda).collect();
        at.sort_by_key(|s| s.shard_id);
        if at.len() != broadcast.k || at.windows(2).any(|w| w[0].shard_id == w[1].shard_id) {
            return Err(Error::Protocol(format!(
                "expected one summary per shard at lambda {lambda}, got {}",
                at.len()
            )));
        }
        grid.push(at);
    }
    Ok(grid)
}

/// Picks the smallest validation MSE; ties go to the smaller λ.
fn select(grid: &[GridPoint]) -> usize {
    let mut order: Vec<usize> = (0..grid.len()).collect();
    order.sort_by(|&a, &b| grid[a].lambda.total_cmp(&grid[b].lambda));
    let mut best = order[0];
    for &i in &order[1..] {
        if let (Some(v), Some(b)) = (grid[i].validation_mse, grid[best].validation_mse) {
            if v < b {
                best = i;
            }
        }
    }
    best
}

/// General-design combination: equal-split weights from shard-averaged
/// trace functionals at each grid penalty, then selection on validation data.
pub fn combine_general(
    summaries: &[ShardSummary],
    broadcast: &Broadcast,
    validation: Option<&Dataset>,
) -> Result<DistributedFit> {
    broadcast.validate()?;
    let p = check_summaries(summaries)?;
    let grid = group_by_grid(summaries, broadcast)?;
    let sizes: Vec<usize> = grid[0].iter().map(|s| s.n_i).collect();
    let (lo, hi) = (sizes.iter().min().copied().unwrap_or(0), sizes.iter().max().copied().unwrap_or(0));
    if hi - lo > 1 {
        return Err(Error::Protocol(format!(
            "shard sizes range from {lo} to {hi}; the general-design weights assume an equal split, use the isotropic algorithm for unequal shards"
        )));
    }
    let validation = validation.filter(|v| v.n() > 0);
    if validation.is_none() && broadcast.lambdas.len() > 1 {
        return Err(Error::Protocol("selecting among several penalties requires validation data".into()));
    }

    let theta = SignalNoise::new(broadcast.sigma2_hat, broadcast.alpha2_hat)?;
    require_signal(theta.alpha2)?;
    let k = broadcast.k;
    let n: usize = sizes.iter().sum();
    let gamma = p as f64 / n as f64;
    let kf = k as f64;

    let evaluated: Vec<(GridPoint, f64, DVector<f64>)> = grid
        .par_iter()
        .map(|at| {
            let lambda = at[0].lambda;
            let m = at.iter().map(|s| s.m_hat).sum::<f64>() / kf;
            let mprime = at.iter().map(|s| s.mprime_hat).sum::<f64>() / kf;
            let (w, risk) = equal_split_weights_risk(k, gamma, lambda, theta, m, mprime)?;
            let beta = weighted_sum(at, &vec![w; k]);
            let vmse = validation.map(|v| validation_mse(v, &beta)).transpose()?;
            Ok((
                GridPoint {
                    lambda,
                    weight_sum: w * kf,
                    theory_risk: Some(risk),
                    validation_mse: vmse,
                },
                w,
                beta,
            ))
        })
        .collect::<Result<_>>()?;

    let points: Vec<GridPoint> = evaluated.iter().map(|e| e.0.clone()).collect();
    let selected = select(&points);
    let (point, w, beta) = evaluated.into_iter().nth(selected).expect("selected index in range");

    let mut messages = MessageLog::default();
    for s in summaries {
        messages.record(ROUND_FIT, s.shard_id, s.payload());
    }
    Ok(DistributedFit {
        beta,
        plan: WeightPlan {
            kind: PlanKind::General,
            weights: vec![w; k],
            shard_lambdas: vec![point.lambda; k],
            selected_lambda: Some(point.lambda),
            theta,
        },
        report: CombineReport {
            grid: points,
            selected,
            messages,
        },
    })
}

/// Isotropic combination: `ω_i = (α̂²/φ(γ_i)) / (1 + Σ_j [α̂²/φ(γ_j) − 1])`.
pub fn combine_isotropic(summaries: &[ShardSummary], theta: SignalNoise<f64>) -> Result<DistributedFit> {
    require_signal(theta.alpha2)?;
    let p = check_summaries(summaries)?;
    let mut sorted: Vec<&ShardSummary> = summaries.iter().collect();
    sorted.sort_by_key(|s| s.shard_id);
    if sorted.windows(2).any(|w| w[0].shard_id == w[1].shard_id) {
        return Err(Error::Protocol("isotropic combination expects one summary per shard".into()));
    }
    let gammas: Vec<f64> = sorted.iter().map(|s| p as f64 / s.n_i as f64).collect();
    let weights = isotropic_optimal_weights(&gammas, theta.alpha2)?;
    let risk = optimal_distributed_risk(&gammas, theta)?;
    let beta = weighted_sum(&sorted, &weights);
    let mut messages = MessageLog::default();
    for s in &sorted {
        messages.record(ROUND_FIT, s.shard_id, s.payload());
    }
    Ok(DistributedFit {
        beta,
        plan: WeightPlan {
            kind: PlanKind::Isotropic,
            weights: weights.clone(),
            shard_lambdas: sorted.iter().map(|s| s.lambda).collect(),
            selected_lambda: None,
            theta,
        },
        report: CombineReport {
            grid: vec![GridPoint {
                // Shards may differ in penalty; report their average.
                lambda: sorted.iter().map(|s| s.lambda).sum::<f64>() / sorted.len() as f64,
                weight_sum: weights.iter().sum(),
                theory_risk: Some(risk),
                validation_mse: None,
            }],
            selected: 0,
            messages,
        },
    })
}
