//! Scalar abstraction shared by the numerical modules.
//!
//! Closed-form spectral quantities only need [`Real`]. Anything that goes
//! through a matrix factorization additionally needs [`LinalgScalar`], which
//! brings in `nalgebra::RealField`. Both `f32` and `f64` qualify.
//!
//! Note that `Float` and `RealField` both provide `sqrt`, `ln`, `abs`, ... so
//! code bounded on [`LinalgScalar`] calls those through `Float::` explicitly.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

pub trait Real:
    Float + FromPrimitive + NumAssignOps + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal. Every literal used in this crate is
    /// representable in `f32`, so this cannot fail for the provided impls.
    #[inline]
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("literal representable in scalar type")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).expect("usize representable in scalar type")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    /// Absolute residual target for the iterative solvers: 1e-12 in double
    /// precision, a small multiple of epsilon otherwise.
    #[inline]
    fn solver_tol() -> Self {
        Float::max(Self::lit(1e-12), Self::epsilon() * Self::lit(64.0))
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub trait LinalgScalar: Real + RealField {}

impl<T: Real + RealField> LinalgScalar for T {}
