//! What workers and the combiner exchange, as self-describing JSON documents.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mle::{FisherInfo, ThetaEstimate};

pub const THETA_SCHEMA: &str = "wonder.theta.v1";
pub const BROADCAST_SCHEMA: &str = "wonder.broadcast.v1";
pub const SUMMARY_SCHEMA: &str = "wonder.shard_summary.v1";

fn check_schema(found: &str, expected: &str) -> Result<()> {
    if found == expected {
        Ok(())
    } else {
        Err(Error::Protocol(format!("expected a {expected} document, found {found:?}")))
    }
}

/// Round one: a worker's local likelihood fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaMessage {
    pub schema: String,
    pub shard_id: usize,
    pub n_i: usize,
    pub p: usize,
    pub sigma2_hat: f64,
    pub alpha2_hat: f64,
    pub loglik: f64,
    pub converged: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fisher: Option<FisherInfo<f64>>,
}

impl ThetaMessage {
    pub fn new(
        shard_id: usize,
        n_i: usize,
        p: usize,
        est: ThetaEstimate<f64>,
        fisher: Option<FisherInfo<f64>>,
    ) -> Self {
        Self {
            schema: THETA_SCHEMA.into(),
            shard_id,
            n_i,
            p,
            sigma2_hat: est.sigma2_hat,
            alpha2_hat: est.alpha2_hat,
            loglik: est.loglik,
            converged: est.converged,
            fisher,
        }
    }

    pub fn estimate(&self) -> ThetaEstimate<f64> {
        ThetaEstimate {
            sigma2_hat: self.sigma2_hat,
            alpha2_hat: self.alpha2_hat,
            loglik: self.loglik,
            converged: self.converged,
        }
    }

    pub fn payload(&self) -> Payload {
        Payload {
            vectors: 0,
            vector_len: 0,
            // shard_id, n_i, p, σ̂², α̂², loglik, converged, plus three Fisher entries.
            scalars: 7 + if self.fisher.is_some() { 3 } else { 0 },
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_schema(&self.schema, THETA_SCHEMA)?;
        if !(self.sigma2_hat.is_finite() && self.alpha2_hat.is_finite()) || self.n_i == 0 || self.p == 0 {
            return Err(Error::Protocol(format!("shard {}: malformed theta message", self.shard_id)));
        }
        Ok(())
    }
}

/// Combiner to workers between rounds: the global θ̂ and the λ grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Broadcast {
    pub schema: String,
    pub k: usize,
    pub n: usize,
    pub sigma2_hat: f64,
    pub alpha2_hat: f64,
    pub lambdas: Vec<f64>,
}

impl Broadcast {
    pub fn validate(&self) -> Result<()> {
        check_schema(&self.schema, BROADCAST_SCHEMA)?;
        if self.lambdas.is_empty() || self.lambdas.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::Protocol("broadcast carries an invalid lambda grid".into()));
        }
        Ok(())
    }
}

/// Round two: one worker's fit at one grid penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardSummary {
    pub schema: String,
    pub shard_id: usize,
    pub n_i: usize,
    pub lambda: f64,
    pub beta_hat: Vec<f64>,
    pub sigma2_hat: f64,
    pub alpha2_hat: f64,
    pub m_hat: f64,
    pub mprime_hat: f64,
}

impl ShardSummary {
    pub fn payload(&self) -> Payload {
        Payload {
            vectors: 1,
            vector_len: self.beta_hat.len(),
            // shard_id, n_i, λ, σ̂², α̂², m̂, m̂′.
            scalars: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_schema(&self.schema, SUMMARY_SCHEMA)?;
        let finite = self.beta_hat.iter().all(|b| b.is_finite())
            && [self.lambda, self.sigma2_hat, self.alpha2_hat, self.m_hat, self.mprime_hat]
                .iter()
                .all(|v| v.is_finite());
        if !finite || self.n_i == 0 {
            return Err(Error::Protocol(format!("shard {}: malformed summary", self.shard_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Payload {
    pub vectors: usize,
    pub vector_len: usize,
    pub scalars: usize,
}

impl std::ops::AddAssign for Payload {
    fn add_assign(&mut self, rhs: Self) {
        self.vectors += rhs.vectors;
        self.vector_len = self.vector_len.max(rhs.vector_len);
        self.scalars += rhs.scalars;
    }
}

/// Traffic from one worker in one round.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transmission {
    pub round: String,
    pub shard_id: usize,
    pub payload: Payload,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageLog {
    pub transmissions: Vec<Transmission>,
}

impl MessageLog {
    pub fn record(&mut self, round: &str, shard_id: usize, payload: Payload) {
        match self
            .transmissions
            .iter_mut()
            .find(|t| t.round == round && t.shard_id == shard_id)
        {
            Some(t) => t.payload += payload,
            None => self.transmissions.push(Transmission {
                round: round.into(),
                shard_id,
                payload,
            }),
        }
    }

    pub fn round<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Transmission> + 'a {
        self.transmissions.iter().filter(move |t| t.round == name)
    }
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
