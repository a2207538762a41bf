use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::Result;
use crate::mle::{fisher_information, fit_mle, ThetaEstimate};
use crate::ridge::{trace_functionals, DesignMatrix, RidgePath};
use crate::spectral::SignalNoise;

use super::config::Shard;
use super::message::{ShardSummary, ThetaMessage, SUMMARY_SCHEMA};

/// One machine: its shard, factorized once. Raw data never leaves it.
#[derive(Debug, Clone)]
pub struct LocalWorker {
    shard_id: usize,
    design: DesignMatrix<f64>,
    y: DVector<f64>,
}

impl LocalWorker {
    pub fn new(shard: &Shard, center: bool) -> Result<Self> {
        let mut x = shard.data.x.clone();
        let mut y = shard.data.y.clone();
        if center {
            for mut col in x.column_iter_mut() {
                let mean = col.mean();
                col.add_scalar_mut(-mean);
            }
            let mean = y.mean();
            y.add_scalar_mut(-mean);
        }
        Ok(Self {
            shard_id: shard.id,
            design: DesignMatrix::new(x)?,
            y,
        })
    }

    pub fn shard_id(&self) -> usize {
        self.shard_id
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    pub fn design(&self) -> &DesignMatrix<f64> {
        &self.design
    }

    pub fn fit_theta(&self, with_fisher: bool) -> Result<ThetaMessage> {
        let est = fit_mle(&self.design, &self.y)?;
        let fisher = if with_fisher {
            Some(fisher_information(&self.design, est.theta())?)
        } else {
            None
        };
        Ok(ThetaMessage::new(self.shard_id, self.n(), self.p(), est, fisher))
    }

    /// Ridge fit and trace functionals at each penalty, in grid order.
    pub fn summarize(&self, local_theta: SignalNoise<f64>, lambdas: &[f64]) -> Result<Vec<ShardSummary>> {
        let path = RidgePath::new(&self.design, &self.y)?;
        lambdas
            .par_iter()
            .map(|&lambda| {
                let fit = path.fit(lambda)?;
                let (m_hat, mprime_hat) = trace_functionals(&self.design, lambda)?;
                Ok(ShardSummary {
                    schema: SUMMARY_SCHEMA.into(),
                    shard_id: self.shard_id,
                    n_i: self.n(),
                    lambda,
                    beta_hat: fit.coefficients.iter().copied().collect(),
                    sigma2_hat: local_theta.sigma2,
                    alpha2_hat: local_theta.alpha2,
                    m_hat,
                    mprime_hat,
                })
            })
            .collect()
    }
}

/// Everything one worker would send for a single penalty.
pub fn local_worker(shard: &Shard, lambda: f64) -> Result<ShardSummary> {
    let worker = LocalWorker::new(shard, false)?;
    let theta: ThetaEstimate<f64> = worker.fit_theta(false)?.estimate();
    let mut out = worker.summarize(theta.theta(), &[lambda])?;
    Ok(out.remove(0))
}
