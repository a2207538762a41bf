//! Gaussian maximum likelihood for θ = (σ², α²).
//!
//! Integrating out the random effect gives `Y ~ N(0, σ²[(α²/p)XXᵀ + I])`.
//! In the eigenbasis of `p⁻¹XXᵀ` the likelihood becomes a sum over the
//! eigenvalues, so each evaluation costs O(min(n, p)) once the design has
//! been factorized.

use nalgebra::DVector;
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ridge::DesignMatrix;
use crate::scalar::LinalgScalar;
use crate::spectral::SignalNoise;

pub const SIGMA2_MIN: f64 = 1e-8;
pub const SIGMA2_MAX: f64 = 1e8;
pub const ALPHA2_MIN_POSITIVE: f64 = 1e-8;
pub const ALPHA2_MAX: f64 = 1e8;

const GRID_POINTS: usize = 16;
const REFINE_CYCLES: usize = 40;
const GOLDEN_STEPS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate<T> {
    pub sigma2_hat: T,
    pub alpha2_hat: T,
    pub loglik: T,
    pub converged: bool,
}

impl<T: LinalgScalar> ThetaEstimate<T> {
    pub fn theta(&self) -> SignalNoise<T> {
        SignalNoise {
            sigma2: self.sigma2_hat,
            alpha2: self.alpha2_hat,
        }
    }
}

/// Fisher information `[[I₂, I₃], [I₃, I₄]]` for (σ², α²), normalized per
/// observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherInfo<T> {
    pub matrix: [[T; 2]; 2],
}

impl<T: LinalgScalar> FisherInfo<T> {
    pub fn i2(&self) -> T {
        self.matrix[0][0]
    }

    pub fn i3(&self) -> T {
        self.matrix[0][1]
    }

    pub fn i4(&self) -> T {
        self.matrix[1][1]
    }

    pub fn diag(i2: T, i4: T) -> Self {
        Self {
            matrix: [[i2, T::zero()], [T::zero(), i4]],
        }
    }
}

/// The sufficient statistics of the likelihood: nonzero eigenvalues `ℓ_j` of
/// `p⁻¹XXᵀ`, squared projections `z_j² = (u_jᵀY)²`, and the residual energy
/// of `Y` outside the column space of `X`.
#[derive(Debug, Clone)]
pub struct LikelihoodSpectrum<T> {
    ell: Vec<T>,
    z2: Vec<T>,
    residual: T,
    n: usize,
}

impl<T: LinalgScalar> LikelihoodSpectrum<T> {
    pub fn new(x: &DesignMatrix<T>, y: &DVector<T>) -> Result<Self> {
        let n = x.nrows();
        if y.len() != n {
            return Err(Error::Dimension(format!("response has {} rows but design has {n}", y.len())));
        }
        let p = T::from_usize_lossy(x.ncols());
        let z = x.left_factor().tr_mul(y);
        let z2: Vec<T> = z.iter().map(|&v| v * v).collect();
        let captured = z2.iter().fold(T::zero(), |acc, &v| acc + v);
        let residual = Float::max(y.norm_squared() - captured, T::zero());
        let ell = x.singular_values().iter().map(|&s| s * s / p).collect();
        Ok(Self { ell, z2, residual, n })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `Σ log(α²ℓ_j + 1)` and `Σ z_j²/(α²ℓ_j + 1) + residual`.
    fn sums(&self, alpha2: T) -> (T, T) {
        let one = T::one();
        let mut logdet = T::zero();
        let mut quad = self.residual;
        for (&ell, &z2) in self.ell.iter().zip(&self.z2) {
            let d = alpha2 * ell + one;
            logdet += Float::ln(d);
            quad += z2 / d;
        }
        (logdet, quad)
    }

    pub fn loglik(&self, sigma2: T, alpha2: T) -> Result<T> {
        if !(sigma2 > T::zero()) || !Float::is_finite(sigma2) {
            return Err(Error::domain("sigma2", sigma2.as_f64(), "(0, inf)"));
        }
        if !(alpha2 >= T::zero()) || !Float::is_finite(alpha2) {
            return Err(Error::domain("alpha2", alpha2.as_f64(), "[0, inf)"));
        }
        Ok(self.loglik_unchecked(sigma2, alpha2))
    }

    fn loglik_unchecked(&self, sigma2: T, alpha2: T) -> T {
        let half = T::lit(0.5);
        let n = T::from_usize_lossy(self.n);
        let (logdet, quad) = self.sums(alpha2);
        -half * Float::ln(sigma2) - half * logdet / n - half * quad / (sigma2 * n)
    }
}

/// `ℓ(θ) = −½ log σ² − (2n)⁻¹ log det(K) − (2σ²n)⁻¹ Yᵀ K⁻¹ Y` with
/// `K = (α²/p)XXᵀ + I`.
pub fn gaussian_loglik<T: LinalgScalar>(x: &DesignMatrix<T>, y: &DVector<T>, theta: SignalNoise<T>) -> Result<T> {
    LikelihoodSpectrum::new(x, y)?.loglik(theta.sigma2, theta.alpha2)
}

pub fn fit_mle<T: LinalgScalar>(x: &DesignMatrix<T>, y: &DVector<T>) -> Result<ThetaEstimate<T>> {
    if x.nrows() < 2 {
        return Err(Error::InvalidInput("at least two observations are required".into()));
    }
    let spec = LikelihoodSpectrum::new(x, y)?;
    Ok(maximize(&spec))
}

/// Grid search over a log-spaced box, then golden-section refinement of
/// `log α²` with σ² profiled out (`σ̂²(α²) = Yᵀ K⁻¹ Y / n`, clamped to the box),
/// then comparison with the `α² = 0` boundary.
///
/// The profile step is the exact limit of alternating one-dimensional
/// searches in σ² and α²; doing it in closed form avoids the slow zig-zag
/// along the strongly correlated ridge of ℓ.
pub fn maximize<T: LinalgScalar>(spec: &LikelihoodSpectrum<T>) -> ThetaEstimate<T> {
    let lo_s = T::lit(SIGMA2_MIN.ln());
    let hi_s = T::lit(SIGMA2_MAX.ln());
    let lo_a = T::lit(ALPHA2_MIN_POSITIVE.ln());
    let hi_a = T::lit(ALPHA2_MAX.ln());
    let n = T::from_usize_lossy(spec.n);
    let f = |ls: T, la: T| spec.loglik_unchecked(Float::exp(ls), Float::exp(la));
    let profile_sigma2 = |alpha2: T| {
        let (_, quad) = spec.sums(alpha2);
        Float::min(Float::max(quad / n, T::lit(SIGMA2_MIN)), T::lit(SIGMA2_MAX))
    };
    let profile = |la: T| {
        let alpha2 = Float::exp(la);
        spec.loglik_unchecked(profile_sigma2(alpha2), alpha2)
    };

    let steps = T::from_usize_lossy(GRID_POINTS - 1);
    let step_s = (hi_s - lo_s) / steps;
    let step_a = (hi_a - lo_a) / steps;
    let mut best = (lo_a, T::neg_infinity());
    for i in 0..GRID_POINTS {
        let ls = lo_s + step_s * T::from_usize_lossy(i);
        for j in 0..GRID_POINTS {
            let la = lo_a + step_a * T::from_usize_lossy(j);
            let v = f(ls, la);
            if v > best.1 {
                best = (la, v);
            }
        }
    }

    // Recentre the bracket until the maximizer is strictly inside it.
    let mut la = best.0;
    let mut converged = false;
    let edge = step_a * T::lit(1e-6);
    for _ in 0..REFINE_CYCLES {
        let (a, b) = (Float::max(la - step_a, lo_a), Float::min(la + step_a, hi_a));
        la = golden_max(&profile, a, b, lo_a, hi_a);
        let at_lower = la - a <= edge && a > lo_a;
        let at_upper = b - la <= edge && b < hi_a;
        if !at_lower && !at_upper {
            converged = true;
            break;
        }
    }
    let alpha2 = Float::exp(la);
    let sigma2 = profile_sigma2(alpha2);
    let mut estimate = ThetaEstimate {
        sigma2_hat: sigma2,
        alpha2_hat: alpha2,
        loglik: spec.loglik_unchecked(sigma2, alpha2),
        converged,
    };

    // α² = 0: Y is white noise and σ̂² = ‖Y‖²/n in closed form.
    let boundary_sigma2 = profile_sigma2(T::zero());
    let boundary = spec.loglik_unchecked(boundary_sigma2, T::zero());
    if boundary >= estimate.loglik {
        estimate = ThetaEstimate {
            sigma2_hat: boundary_sigma2,
            alpha2_hat: T::zero(),
            loglik: boundary,
            converged: true,
        };
    }
    estimate
}

/// Golden-section search for a maximum on `[a, b] ∩ [lo, hi]`.
fn golden_max<T: LinalgScalar>(f: &impl Fn(T) -> T, a: T, b: T, lo: T, hi: T) -> T {
    let ratio = T::lit(0.618_033_988_749_894_8);
    let mut a = Float::max(a, lo);
    let mut b = Float::min(b, hi);
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..GOLDEN_STEPS {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = f(d);
        }
    }
    (a + b) / T::lit(2.0)
}

/// `I_k = (2nσ^{8−2k})⁻¹ tr[S^{k−2} (α²S + I)^{2−k}]` for `S = p⁻¹XXᵀ`,
/// `k = 2, 3, 4`, with the trace running over all n eigenvalues.
pub fn fisher_information<T: LinalgScalar>(x: &DesignMatrix<T>, theta: SignalNoise<T>) -> Result<FisherInfo<T>> {
    let SignalNoise { sigma2, alpha2 } = theta;
    if !(sigma2 > T::zero()) || !Float::is_finite(sigma2) {
        return Err(Error::domain("sigma2", sigma2.as_f64(), "(0, inf)"));
    }
    if !(alpha2 >= T::zero()) || !Float::is_finite(alpha2) {
        return Err(Error::domain("alpha2", alpha2.as_f64(), "[0, inf)"));
    }
    let n = T::from_usize_lossy(x.nrows());
    let p = T::from_usize_lossy(x.ncols());
    let two = T::lit(2.0);
    let mut t3 = T::zero();
    let mut t4 = T::zero();
    for &s in x.singular_values().iter() {
        let ell = s * s / p;
        let r = ell / (alpha2 * ell + T::one());
        t3 += r;
        t4 += r * r;
    }
    let i2 = T::one() / (two * sigma2 * sigma2);
    let i3 = t3 / (two * n * sigma2);
    let i4 = t4 / (two * n);
    Ok(FisherInfo {
        matrix: [[i2, i3], [i3, i4]],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThetaAggregation {
    #[default]
    Mean,
    /// Per coordinate, weights proportional to the matching diagonal Fisher
    /// entry (`I₂` for σ², `I₄` for α²).
    InverseVariance,
}

pub fn aggregate_theta<T: LinalgScalar>(
    estimates: &[ThetaEstimate<T>],
    mode: ThetaAggregation,
    infos: Option<&[FisherInfo<T>]>,
) -> Result<ThetaEstimate<T>> {
    if estimates.is_empty() {
        return Err(Error::InvalidInput("no estimates to aggregate".into()));
    }
    let k = estimates.len();
    let (ws, wa): (Vec<T>, Vec<T>) = match mode {
        ThetaAggregation::Mean => {
            let w = T::one() / T::from_usize_lossy(k);
            (vec![w; k], vec![w; k])
        }
        ThetaAggregation::InverseVariance => {
            let infos = infos.ok_or_else(|| {
                Error::InvalidInput("inverse-variance aggregation needs Fisher information".into())
            })?;
            if infos.len() != k {
                return Err(Error::Dimension(format!("{k} estimates but {} Fisher matrices", infos.len())));
            }
            (
                normalized(infos.iter().map(|i| i.i2()))?,
                normalized(infos.iter().map(|i| i.i4()))?,
            )
        }
    };
    let mean = T::one() / T::from_usize_lossy(k);
    let mut out = ThetaEstimate {
        sigma2_hat: T::zero(),
        alpha2_hat: T::zero(),
        loglik: T::zero(),
        converged: true,
    };
    for (i, e) in estimates.iter().enumerate() {
        out.sigma2_hat += ws[i] * e.sigma2_hat;
        out.alpha2_hat += wa[i] * e.alpha2_hat;
        out.loglik += mean * e.loglik;
        out.converged &= e.converged;
    }
    Ok(out)
}

fn normalized<T: LinalgScalar>(values: impl Iterator<Item = T>) -> Result<Vec<T>> {
    let v: Vec<T> = values.collect();
    let total = v.iter().fold(T::zero(), |acc, &x| acc + x);
    if !(total > T::zero()) || v.iter().any(|&x| x < T::zero() || !Float::is_finite(x)) {
        return Err(Error::InvalidInput("Fisher weights must be nonnegative with positive sum".into()));
    }
    Ok(v.into_iter().map(|x| x / total).collect())
}
