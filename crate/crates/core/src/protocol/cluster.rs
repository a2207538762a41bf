//! In-process runs of the protocol: workers execute in parallel, the combiner
//! reduces their messages sequentially in shard-id order.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::mle::{ThetaAggregation, ThetaEstimate};
use crate::spectral::SignalNoise;

use super::combine::{
    combine_general, combine_isotropic, combine_theta, theta_from_summaries, initial_lambda, make_broadcast, CombineReport, DistributedFit,
    GridPoint, PlanKind, WeightPlan, LOCAL_ALPHA2_FLOOR, ROUND_FIT, ROUND_THETA,
};
use super::config::{Shard, WonderConfig};
use super::message::{MessageLog, ShardSummary, ThetaMessage};
use super::worker::LocalWorker;

/// Workers over a fixed set of shards, after the θ round.
#[derive(Debug, Clone)]
pub struct Cluster {
    config: WonderConfig,
    workers: Vec<LocalWorker>,
    theta_messages: Vec<ThetaMessage>,
    theta: SignalNoise<f64>,
    p: usize,
    n: usize,
}

impl Cluster {
    pub fn new(shards: &[Shard], config: &WonderConfig) -> Result<Self> {
        config.validate()?;
        if shards.is_empty() {
            return Err(Error::InvalidInput("no shards".into()));
        }
        if shards.len() != config.k {
            return Err(Error::InvalidInput(format!(
                "config expects {} shards, got {}",
                config.k,
                shards.len()
            )));
        }
        let p = shards[0].data.p();
        if shards.iter().any(|s| s.data.p() != p) {
            return Err(Error::Dimension("shards disagree on the number of features".into()));
        }
        let with_fisher = config.theta_aggregation == ThetaAggregation::InverseVariance;
        let mut built: Vec<(LocalWorker, ThetaMessage)> = shards
            .par_iter()
            .map(|shard| {
                let worker = LocalWorker::new(shard, config.center_shards)?;
                let msg = match config.theta_override {
                    Some(t) => ThetaMessage::new(
                        shard.id,
                        worker.n(),
                        worker.p(),
                        ThetaEstimate {
                            sigma2_hat: t.sigma2,
                            alpha2_hat: t.alpha2,
                            loglik: 0.0,
                            converged: true,
                        },
                        None,
                    ),
                    None => worker.fit_theta(with_fisher)?,
                };
                Ok((worker, msg))
            })
            .collect::<Result<_>>()?;
        built.sort_by_key(|(w, _)| w.shard_id());
        if built.windows(2).any(|w| w[0].0.shard_id() == w[1].0.shard_id()) {
            return Err(Error::InvalidInput("duplicate shard ids".into()));
        }
        let (workers, theta_messages): (Vec<_>, Vec<_>) = built.into_iter().unzip();
        let theta = match config.theta_override {
            Some(t) => t,
            None => combine_theta(&theta_messages, config.theta_aggregation)?.theta(),
        };
        let n = workers.iter().map(|w| w.n()).sum();
        Ok(Self {
            config: config.clone(),
            workers,
            theta_messages,
            theta,
            p,
            n,
        })
    }

    /// Global θ̂ (or the configured override).
    pub fn theta(&self) -> SignalNoise<f64> {
        self.theta
    }

    pub fn theta_messages(&self) -> &[ThetaMessage] {
        &self.theta_messages
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn k(&self) -> usize {
        self.workers.len()
    }

    /// Workers in shard-id order.
    pub fn workers(&self) -> &[LocalWorker] {
        &self.workers
    }

    fn local_theta(&self, i: usize) -> SignalNoise<f64> {
        let m = &self.theta_messages[i];
        SignalNoise {
            sigma2: m.sigma2_hat,
            alpha2: m.alpha2_hat,
        }
    }

    fn log_theta_round(&self, log: &mut MessageLog) {
        if self.config.theta_override.is_none() {
            for m in &self.theta_messages {
                log.record(ROUND_THETA, m.shard_id, m.payload());
            }
        }
    }

    fn gather(&self, lambdas_for: impl Fn(usize) -> Vec<f64> + Sync) -> Result<Vec<ShardSummary>> {
        let per_worker: Vec<Vec<ShardSummary>> = self
            .workers
            .par_iter()
            .enumerate()
            .map(|(i, w)| w.summarize(self.local_theta(i), &lambdas_for(i)))
            .collect::<Result<_>>()?;
        Ok(per_worker.into_iter().flatten().collect())
    }

    /// General design: grid search around `λ₀ = kp/(nα̂²)`.
    pub fn general(&self, validation: Option<&Dataset>) -> Result<DistributedFit> {
        let broadcast = make_broadcast(&self.theta_messages, &self.config)?;
        let summaries = self.gather(|_| broadcast.lambdas.clone())?;
        let mut fit = combine_general(&summaries, &broadcast, validation)?;
        self.prepend_theta_round(&mut fit.report);
        Ok(fit)
    }

    /// Isotropic design: local `λ_i = γ_i/α̂_i²`, closed-form weights.
    ///
    /// With mean aggregation the combiner averages the θ̂_i carried by the
    /// summaries, so the whole run is a single round. Inverse-variance
    /// aggregation needs the Fisher scalars of the θ round.
    pub fn isotropic(&self) -> Result<DistributedFit> {
        let summaries = self.gather(|i| {
            let w = &self.workers[i];
            let alpha2 = self.local_theta(i).alpha2.max(LOCAL_ALPHA2_FLOOR);
            vec![self.p as f64 / w.n() as f64 / alpha2]
        })?;
        let single_round =
            self.config.theta_override.is_some() || self.config.theta_aggregation == ThetaAggregation::Mean;
        let theta = match self.config.theta_override {
            Some(t) => t,
            None if single_round => theta_from_summaries(&summaries)?,
            None => self.theta,
        };
        let mut fit = combine_isotropic(&summaries, theta)?;
        if !single_round {
            self.prepend_theta_round(&mut fit.report);
        }
        Ok(fit)
    }

    /// Equal weights `1/k` with the full-data penalty `p/(nα̂²)`.
    pub fn naive(&self) -> Result<DistributedFit> {
        let lambda = self.global_lambda(1)?;
        let summaries = self.gather(|_| vec![lambda])?;
        let k = self.k();
        Ok(self.fixed_plan(PlanKind::Naive, &summaries, vec![1.0 / k as f64; k], lambda))
    }

    /// The first shard alone, tuned for its own size: `kp/(nα̂²)`.
    pub fn local(&self) -> Result<DistributedFit> {
        let lambda = self.global_lambda(self.k())?;
        let summary = self.workers[0].summarize(self.local_theta(0), &[lambda])?;
        let mut weights = vec![0.0; self.k()];
        weights[0] = 1.0;
        Ok(self.fixed_plan(PlanKind::Local, &summary, weights, lambda))
    }

    fn global_lambda(&self, k: usize) -> Result<f64> {
        initial_lambda(k, self.p, self.n, self.theta.alpha2)
    }

    fn prepend_theta_round(&self, report: &mut CombineReport) {
        let mut log = MessageLog::default();
        self.log_theta_round(&mut log);
        log.transmissions.append(&mut report.messages.transmissions);
        report.messages = log;
    }

    fn fixed_plan(&self, kind: PlanKind, summaries: &[ShardSummary], weights: Vec<f64>, lambda: f64) -> DistributedFit {
        let mut beta = DVector::zeros(self.p);
        let mut log = MessageLog::default();
        self.log_theta_round(&mut log);
        for s in summaries {
            let idx = self
                .workers
                .iter()
                .position(|w| w.shard_id() == s.shard_id)
                .expect("summary from a known worker");
            for (o, &b) in beta.iter_mut().zip(&s.beta_hat) {
                *o += weights[idx] * b;
            }
            log.record(ROUND_FIT, s.shard_id, s.payload());
        }
        let weight_sum = weights.iter().sum();
        DistributedFit {
            beta,
            plan: WeightPlan {
                kind,
                weights,
                shard_lambdas: vec![lambda; self.k()],
                selected_lambda: None,
                theta: self.theta,
            },
            report: CombineReport {
                grid: vec![GridPoint {
                    lambda,
                    weight_sum,
                    theory_risk: None,
                    validation_mse: None,
                }],
                selected: 0,
                messages: log,
            },
        }
    }
}
