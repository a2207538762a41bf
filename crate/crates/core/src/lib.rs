//! Optimally weighted one-shot distributed ridge regression.
//!
//! Each of `k` machines fits ridge regression on its own shard and sends back
//! a p-vector and a few scalars; a combiner forms `Σ ω_i β̂_i` with weights
//! derived from random-matrix limits. Weights sum to more than one, which
//! undoes part of the shrinkage bias that naive averaging keeps.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the aliases at
//! the bottom of this file fix the scalar for common use.

// `!(x > 0)` is how argument checks reject NaN along with nonpositive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod error;
pub mod scalar;
pub mod mle;
pub mod protocol;
pub mod ridge;
pub mod spectral;

pub use data::{Dataset, Design, SynthSpec};
pub use error::{Error, Result};
pub use scalar::{LinalgScalar, Real};
pub use mle::{FisherInfo, ThetaAggregation, ThetaEstimate};
pub use ridge::{DesignMatrix, FiniteSampleMoments, RidgeFit, RidgePath};
pub use spectral::{AsymptoticMoments, AspectRatio, SignalNoise, SpectralDistribution};

pub type SignalNoise64 = SignalNoise<f64>;
pub type SignalNoise32 = SignalNoise<f32>;
pub type SpectralDistribution64 = SpectralDistribution<f64>;
pub type SpectralDistribution32 = SpectralDistribution<f32>;
pub type DesignMatrix64 = DesignMatrix<f64>;
pub type DesignMatrix32 = DesignMatrix<f32>;
