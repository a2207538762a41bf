//! Random-matrix limits for one-shot distributed ridge regression.
//!
//! Everything here is a pure function of a few scalars (and, for general
//! covariance, a discrete population spectrum). The isotropic case uses the
//! closed-form Marchenko-Pastur Stieltjes transform evaluated on the negative
//! real axis; the general case goes through the companion fixed point `x`
//! that makes `(x Σ + λ I)^{-1}` a deterministic equivalent of the sample
//! resolvent `(Σ̂ + λ I)^{-1}`.
//!
//! Inputs `gamma` (aspect ratio p/n) and `lambda` (ridge penalty) are accepted
//! in `[1e-10, 1e10]`; anything else is a [`Error::Domain`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::{LinalgScalar, Real};

pub const ARG_MIN: f64 = 1e-10;
pub const ARG_MAX: f64 = 1e10;
const ARG_DOMAIN: &str = "[1e-10, 1e10]";

/// Iteration cap shared by the damped iteration and the bisection fallback.
pub const MAX_FIXED_POINT_ITERS: usize = 10_000;

fn check_arg<T: Real>(name: &'static str, v: T) -> Result<T> {
    if v >= T::lit(ARG_MIN) && v <= T::lit(ARG_MAX) {
        Ok(v)
    } else {
        Err(Error::domain(name, v.as_f64(), ARG_DOMAIN))
    }
}

fn check_workers(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::domain("k", 0.0, "k >= 1"));
    }
    Ok(())
}

/// Discrete population spectral distribution `H`: eigenvalue locations and
/// their probability masses.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDistribution<T> {
    atoms: Vec<T>,
    masses: Vec<T>,
}

impl<T: Real> SpectralDistribution<T> {
    pub fn new(atoms: Vec<T>, masses: Vec<T>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidSpectrum("no atoms".into()));
        }
        if atoms.len() != masses.len() {
            return Err(Error::InvalidSpectrum(format!(
                "{} atoms but {} masses",
                atoms.len(),
                masses.len()
            )));
        }
        if let Some(t) = atoms.iter().find(|t| !(t.is_finite() && **t >= T::zero())) {
            return Err(Error::InvalidSpectrum(format!("atom {t} is not a finite nonnegative value")));
        }
        if let Some(m) = masses.iter().find(|m| !(m.is_finite() && **m > T::zero())) {
            return Err(Error::InvalidSpectrum(format!("mass {m} is not positive")));
        }
        let total = masses.iter().fold(T::zero(), |acc, &m| acc + m);
        let tol = T::lit(1e-12).max(T::epsilon() * T::from_usize_lossy(16 * masses.len()));
        if (total - T::one()).abs() > tol {
            return Err(Error::InvalidSpectrum(format!("masses sum to {total}, not 1")));
        }
        Ok(Self { atoms, masses })
    }

    /// Point mass `δ_t`.
    pub fn point_mass(t: T) -> Result<Self> {
        Self::new(vec![t], vec![T::one()])
    }

    /// `δ_1`, the spectrum of an identity covariance.
    pub fn identity() -> Self {
        Self {
            atoms: vec![T::one()],
            masses: vec![T::one()],
        }
    }

    /// Uniform mass on the given eigenvalues, e.g. the spectrum of a known
    /// population covariance.
    pub fn from_eigenvalues(eigenvalues: &[T]) -> Result<Self> {
        let w = T::one() / T::from_usize_lossy(eigenvalues.len().max(1));
        Self::new(eigenvalues.to_vec(), vec![w; eigenvalues.len()])
    }

    pub fn atoms(&self) -> &[T] {
        &self.atoms
    }

    pub fn masses(&self) -> &[T] {
        &self.masses
    }

    /// `E_H f(T)` as an exact finite sum.
    pub fn expect(&self, f: impl Fn(T) -> T) -> T {
        self.atoms
            .iter()
            .zip(&self.masses)
            .fold(T::zero(), |acc, (&t, &w)| acc + w * f(t))
    }
}

/// Limiting aspect ratio `p/n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AspectRatio<T>(T);

impl<T: Real> AspectRatio<T> {
    pub fn new(gamma: T) -> Result<Self> {
        check_arg("gamma", gamma).map(Self)
    }

    pub fn from_dims(p: usize, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::domain("n", 0.0, "n >= 1"));
        }
        Self::new(T::from_usize_lossy(p) / T::from_usize_lossy(n))
    }

    pub fn value(self) -> T {
        self.0
    }

    /// Aspect ratio of one of `k` equal shards, `k γ`.
    pub fn per_shard(self, k: usize) -> Result<Self> {
        check_workers(k)?;
        Self::new(self.0 * T::from_usize_lossy(k))
    }
}

/// Random-effects parameters θ = (σ², α²).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SignalNoise<T> {
    pub sigma2: T,
    pub alpha2: T,
}

impl<T: Real> SignalNoise<T> {
    pub fn new(sigma2: T, alpha2: T) -> Result<Self> {
        if !(sigma2 >= T::zero() && sigma2.is_finite()) {
            return Err(Error::domain("sigma2", sigma2.as_f64(), "[0, inf)"));
        }
        if !(alpha2 >= T::zero() && alpha2.is_finite()) {
            return Err(Error::domain("alpha2", alpha2.as_f64(), "[0, inf)"));
        }
        Ok(Self { sigma2, alpha2 })
    }

    /// σ²α², the expected squared norm of β.
    pub fn signal(&self) -> T {
        self.sigma2 * self.alpha2
    }
}

/// Limits of `v`, `A` and `R` together with the companion fixed points.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticMoments<T> {
    v: Vec<T>,
    /// Row-major k×k.
    a: Vec<T>,
    r: Vec<T>,
    x: Vec<T>,
    signal: T,
}

impl<T: Real> AsymptoticMoments<T> {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn v(&self) -> &[T] {
        &self.v
    }

    pub fn a(&self, i: usize, j: usize) -> T {
        self.a[i * self.len() + j]
    }

    /// Diagonal of `𝓡`.
    pub fn r(&self) -> &[T] {
        &self.r
    }

    pub fn x(&self) -> &[T] {
        &self.x
    }

    /// σ²α².
    pub fn signal(&self) -> T {
        self.signal
    }
}

impl<T: LinalgScalar> AsymptoticMoments<T> {
    fn system(&self) -> DMatrix<T> {
        let k = self.len();
        DMatrix::from_fn(k, k, |i, j| {
            let diag = if i == j { self.r[i] } else { T::zero() };
            self.a(i, j) + diag
        })
    }

    /// Limiting optimal weights `(𝓐 + 𝓡)^{-1} V`.
    pub fn weights(&self) -> Result<Vec<T>> {
        let system = self.system();
        let rhs = DVector::from_column_slice(&self.v);
        let chol = system
            .cholesky()
            .ok_or_else(|| Error::Singular("A + R is not positive definite".into()))?;
        Ok(chol.solve(&rhs).iter().copied().collect())
    }

    /// Limiting risk `σ²α² − Vᵀ(𝓐 + 𝓡)^{-1}V`.
    pub fn risk(&self) -> Result<T> {
        let w = self.weights()?;
        let fitted = self
            .v
            .iter()
            .zip(&w)
            .fold(T::zero(), |acc, (&v, &w)| acc + v * w);
        Ok(self.signal - fitted)
    }
}

/// Marchenko-Pastur Stieltjes transform `m_γ(−λ)` for identity covariance.
pub fn mp_stieltjes_isotropic<T: Real>(gamma: T, lambda: T) -> Result<T> {
    let gamma = check_arg("gamma", gamma)?;
    let lambda = check_arg("lambda", lambda)?;
    Ok(mp_stieltjes_unchecked(gamma, lambda))
}

fn mp_stieltjes_unchecked<T: Real>(gamma: T, lambda: T) -> T {
    let two = T::lit(2.0);
    let b = gamma - lambda - T::one();
    let disc = b * b + T::lit(4.0) * lambda * gamma;
    debug_assert!(disc >= T::zero());
    let root = disc.sqrt();
    // Rationalize when b < 0 so that large λ does not cancel.
    if b < T::zero() {
        two / (root - b)
    } else {
        (b + root) / (two * lambda * gamma)
    }
}

/// `m'_γ(−λ)`, the derivative of the transform in `z` at `z = −λ`.
///
/// Differentiating `m = 1/(1 − γ − z − γ z m)` gives
/// `m' = m²(1 + γ m) / (1 + γ λ m²)` at `z = −λ`.
pub fn mp_stieltjes_derivative_isotropic<T: Real>(gamma: T, lambda: T) -> Result<T> {
    let m = mp_stieltjes_isotropic(gamma, lambda)?;
    Ok(m * m * (T::one() + gamma * m) / (T::one() + gamma * lambda * m * m))
}

/// Solves `1 − x = γ [1 − E_H λ/(xT + λ)]` for the companion scalar `x`.
///
/// Damped fixed-point iteration from `x = 1`; if the residual stops
/// decreasing or an iterate leaves `(0, 1]`, switch to bisection, which is
/// always valid because `x − g(x)` is increasing with a sign change on `[0, 1]`.
pub fn solve_companion_x<T: Real>(h: &SpectralDistribution<T>, gamma: T, lambda: T) -> Result<T> {
    let gamma = check_arg("gamma", gamma)?;
    let lambda = check_arg("lambda", lambda)?;
    let one = T::one();
    let residual = |x: T| (one - x) - gamma * (one - h.expect(|t| lambda / (x * t + lambda)));
    let tol = T::solver_tol() * gamma.max(one);

    let damping = T::lit(0.5);
    let mut x = one;
    let mut best = T::infinity();
    let mut stalls = 0;
    let mut iters = 0;
    while iters < MAX_FIXED_POINT_ITERS {
        iters += 1;
        let r = residual(x);
        if r.abs() <= tol {
            return Ok(x);
        }
        if r.abs() >= best {
            stalls += 1;
            if stalls >= 3 {
                break;
            }
        } else {
            best = r.abs();
            stalls = 0;
        }
        let next = x + damping * r;
        if !(next > T::zero() && next <= one) {
            break;
        }
        x = next;
    }

    // Bisection on f(x) = −residual(x), increasing; f(lo) < 0 <= f(hi).
    let mut lo = (one - gamma).max(T::zero());
    let mut hi = one;
    let mut r = residual(hi);
    if r.abs() <= tol {
        return Ok(hi);
    }
    let mut mid = hi;
    while iters < MAX_FIXED_POINT_ITERS {
        iters += 1;
        mid = (lo + hi) / T::lit(2.0);
        r = residual(mid);
        if r.abs() <= tol {
            return Ok(mid);
        }
        if r > T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= T::epsilon() * hi {
            break;
        }
    }
    Err(Error::NoConvergence {
        iterations: iters,
        residual: residual(mid).as_f64(),
    })
}

/// Limits of `v`, `A`, `R` for arbitrary per-shard `γ_i`, `λ_i` under a
/// general population spectrum, through the companion fixed points.
pub fn asymptotic_moments<T: Real>(
    h: &SpectralDistribution<T>,
    gammas: &[T],
    lambdas: &[T],
    theta: SignalNoise<T>,
) -> Result<AsymptoticMoments<T>> {
    check_shard_lists(gammas, lambdas)?;
    let k = gammas.len();
    let one = T::one();
    let two = T::lit(2.0);
    let s = theta.signal();

    let x = gammas
        .iter()
        .zip(lambdas)
        .map(|(&g, &l)| solve_companion_x(h, g, l))
        .collect::<Result<Vec<_>>>()?;

    let mut v = Vec::with_capacity(k);
    let mut r = Vec::with_capacity(k);
    let mut a = vec![T::zero(); k * k];
    for i in 0..k {
        let (xi, li, gi) = (x[i], lambdas[i], gammas[i]);
        let q = h.expect(|t| t / ((xi * t + li) * (xi * t + li)));
        v.push(s * h.expect(|t| xi * t / (xi * t + li)));
        r.push(theta.sigma2 * gi * xi * q / (one + li * gi * q));
        let bias = h.expect(|t| (two * li * xi * t + li * li) / ((xi * t + li) * (xi * t + li)));
        a[i * k + i] = s * (one - bias + li * li * gi * xi * q * q / (one + gi * li * q));
        for j in (i + 1)..k {
            let (xj, lj) = (x[j], lambdas[j]);
            let aij = s * h.expect(|t| xi * xj * t * t / ((xi * t + li) * (xj * t + lj)));
            a[i * k + j] = aij;
            a[j * k + i] = aij;
        }
    }
    Ok(AsymptoticMoments {
        v,
        a,
        r,
        x,
        signal: s,
    })
}

/// Identity-covariance limits written through `m_γ` and `m'_γ` alone.
pub fn isotropic_moments<T: Real>(
    gammas: &[T],
    lambdas: &[T],
    theta: SignalNoise<T>,
) -> Result<AsymptoticMoments<T>> {
    check_shard_lists(gammas, lambdas)?;
    let k = gammas.len();
    let one = T::one();
    let s = theta.signal();
    let mut v = Vec::with_capacity(k);
    let mut r = Vec::with_capacity(k);
    let mut x = Vec::with_capacity(k);
    let mut diag = Vec::with_capacity(k);
    for (&g, &l) in gammas.iter().zip(lambdas) {
        let m = mp_stieltjes_isotropic(g, l)?;
        let mp = mp_stieltjes_derivative_isotropic(g, l)?;
        v.push(s * (one - l * m));
        diag.push(s * (one - T::lit(2.0) * l * m + l * l * mp));
        r.push(theta.sigma2 * g * (m - l * mp));
        x.push(one / m - l);
    }
    let mut a = vec![T::zero(); k * k];
    for i in 0..k {
        for j in 0..k {
            a[i * k + j] = if i == j {
                diag[i]
            } else if s > T::zero() {
                v[i] * v[j] / s
            } else {
                T::zero()
            };
        }
    }
    Ok(AsymptoticMoments {
        v,
        a,
        r,
        x,
        signal: s,
    })
}

fn check_shard_lists<T>(gammas: &[T], lambdas: &[T]) -> Result<()> {
    if gammas.is_empty() {
        return Err(Error::InvalidInput("at least one shard is required".into()));
    }
    if gammas.len() != lambdas.len() {
        return Err(Error::Dimension(format!(
            "{} aspect ratios but {} penalties",
            gammas.len(),
            lambdas.len()
        )));
    }
    Ok(())
}

/// Single-machine identity-covariance risk `𝓜₁(γ, λ)`.
pub fn isotropic_single_risk<T: Real>(gamma: T, lambda: T, theta: SignalNoise<T>) -> Result<T> {
    isotropic_distributed_risk(&[gamma], &[lambda], theta)
}

/// Identity-covariance optimally weighted risk for arbitrary `γ_i`, `λ_i`,
/// in its decoupled form `σ²α² / (1 + Σ V_i² / (σ²α²(𝓡_ii + 𝓐_ii) − V_i²))`.
pub fn isotropic_distributed_risk<T: Real>(
    gammas: &[T],
    lambdas: &[T],
    theta: SignalNoise<T>,
) -> Result<T> {
    check_shard_lists(gammas, lambdas)?;
    let s = theta.signal();
    if s == T::zero() {
        return Ok(T::zero());
    }
    let one = T::one();
    let mut total = one;
    for (&g, &l) in gammas.iter().zip(lambdas) {
        let m = mp_stieltjes_isotropic(g, l)?;
        let mp = mp_stieltjes_derivative_isotropic(g, l)?;
        let v = s * (one - l * m);
        let a = s * (one - T::lit(2.0) * l * m + l * l * mp);
        let r = theta.sigma2 * g * (m - l * mp);
        total += v * v / (s * (r + a) - v * v);
    }
    Ok(s / total)
}

/// Equal-split limiting weight and risk from `m = m_{F_{kγ}}(−λ)` and
/// `m' = −dm/dλ`, which may be exact limits or trace estimates.
///
/// Returns `(weight, risk)`; the weight applies to every shard.
pub fn equal_split_weights_risk<T: Real>(
    k: usize,
    gamma: T,
    lambda: T,
    theta: SignalNoise<T>,
    m: T,
    mprime: T,
) -> Result<(T, T)> {
    check_workers(k)?;
    let gamma = check_arg("gamma", gamma)?;
    let lambda = check_arg("lambda", lambda)?;
    if !(m > T::zero() && m.is_finite()) {
        return Err(Error::domain("m", m.as_f64(), "(0, inf)"));
    }
    if !(mprime > T::zero() && mprime.is_finite()) {
        return Err(Error::domain("mprime", mprime.as_f64(), "(0, inf)"));
    }
    let one = T::one();
    let kf = T::from_usize_lossy(k);
    let kg = kf * gamma;
    let s = theta.signal();

    // x − λx' for the common companion fixed point.
    let denom = one - kg + kg * lambda * lambda * mprime;
    let scale = one + kg + kg * lambda * lambda * mprime;
    if denom.abs() <= T::lit(64.0) * T::epsilon() * scale {
        return Err(Error::VanishingDenominator {
            term: "1 - k*gamma + k*gamma*lambda^2*m'",
            value: denom.as_f64(),
        });
    }
    let c = m - lambda * mprime;
    let cross = kg * lambda * lambda * c * c / denom;
    let f = s * cross + theta.sigma2 * kg * c;
    let g = s * (one - T::lit(2.0) * lambda * m + lambda * lambda * mprime - cross);
    let total = f + kf * g;
    let total_scale = f.abs() + kf * g.abs();
    if !(total > T::lit(64.0) * T::epsilon() * total_scale) || total == T::zero() {
        return Err(Error::VanishingDenominator {
            term: "F + k*G",
            value: total.as_f64(),
        });
    }
    let bias = one - lambda * m;
    let weight = s * bias / total;
    let risk = s - s * s * bias * bias * kf / total;
    Ok((weight, risk))
}

/// Optimal risk function `φ(γ) = γ m_γ(−γ/α²)`, the optimally tuned
/// single-machine risk in units of σ².
pub fn optimal_risk_phi<T: Real>(gamma: T, alpha2: T) -> Result<T> {
    let gamma = check_arg("gamma", gamma)?;
    let alpha2 = check_arg("alpha2", alpha2)?;
    let two = T::lit(2.0);
    let c = gamma / alpha2;
    let b = gamma - c - T::one();
    let root = (b * b + T::lit(4.0) * gamma * c).sqrt();
    Ok(if b < T::zero() {
        two * gamma / (root - b)
    } else {
        (b + root) / (two * c)
    })
}

/// Optimally tuned risk with aspect ratios `γ_i` and optimal weights:
/// `σ²α² / (1 + Σ [α²/φ(γ_i) − 1])`.
pub fn optimal_distributed_risk<T: Real>(gammas: &[T], theta: SignalNoise<T>) -> Result<T> {
    if gammas.is_empty() {
        return Err(Error::InvalidInput("at least one shard is required".into()));
    }
    let s = theta.signal();
    if s == T::zero() {
        return Ok(T::zero());
    }
    let mut total = T::one();
    for &g in gammas {
        total += theta.alpha2 / optimal_risk_phi(g, theta.alpha2)? - T::one();
    }
    Ok(s / total)
}

/// Equal-split asymptotic relative efficiency `ψ(k, γ, α²) = 𝓜₁/𝓜_k`.
pub fn are_equal_split<T: Real>(k: usize, gamma: T, alpha2: T) -> Result<T> {
    check_workers(k)?;
    let kf = T::from_usize_lossy(k);
    let phi = optimal_risk_phi(gamma, alpha2)?;
    let phi_k = optimal_risk_phi(kf * gamma, alpha2)?;
    Ok(phi / alpha2 * (T::one() + kf * (alpha2 / phi_k - T::one())))
}

/// `h(α², γ) = lim_{k→∞} ψ(k, γ, α²)`.
pub fn infinite_worker_limit_h<T: Real>(alpha2: T, gamma: T) -> Result<T> {
    let phi = optimal_risk_phi(gamma, alpha2)?;
    Ok(phi / alpha2 * (T::one() + alpha2 / (gamma * (T::one() + alpha2))))
}

/// Common optimal weight `𝓦(k, γ, α²)` for `k` equal shards.
pub fn optimal_weight_equal_split<T: Real>(k: usize, gamma: T, alpha2: T) -> Result<T> {
    check_workers(k)?;
    let kf = T::from_usize_lossy(k);
    let phi_k = optimal_risk_phi(kf * gamma, alpha2)?;
    Ok(alpha2 / (alpha2 * kf - (kf - T::one()) * phi_k))
}

/// Optimal weights for arbitrary shard aspect ratios `γ_i` with each shard
/// tuned at `λ_i = γ_i/α²`:
/// `ω_i = (α²/φ(γ_i)) / (1 + Σ_j [α²/φ(γ_j) − 1])`.
pub fn isotropic_optimal_weights<T: Real>(gammas: &[T], alpha2: T) -> Result<Vec<T>> {
    if gammas.is_empty() {
        return Err(Error::InvalidInput("at least one shard is required".into()));
    }
    let ratios = gammas
        .iter()
        .map(|&g| optimal_risk_phi(g, alpha2).map(|phi| alpha2 / phi))
        .collect::<Result<Vec<_>>>()?;
    let total = ratios
        .iter()
        .fold(T::one(), |acc, &r| acc + r - T::one());
    Ok(ratios.into_iter().map(|r| r / total).collect())
}

/// Out-of-sample efficiency for `k` equal shards, returning `(OE, 𝓞_k)`
/// where `𝓞_k = σ² + 𝓜_k`.
pub fn out_of_sample_efficiency<T: Real>(
    k: usize,
    gamma: T,
    alpha2: T,
    sigma2: T,
) -> Result<(T, T)> {
    check_workers(k)?;
    let sigma2 = check_arg("sigma2", sigma2)?;
    let kf = T::from_usize_lossy(k);
    let phi = optimal_risk_phi(gamma, alpha2)?;
    let shard_gammas = vec![kf * gamma; k];
    let theta = SignalNoise::new(sigma2, alpha2)?;
    let risk_k = optimal_distributed_risk(&shard_gammas, theta)?;
    let o_1 = sigma2 * (T::one() + phi);
    let o_k = sigma2 + risk_k;
    Ok((o_1 / o_k, o_k))
}

/// `𝓗(α², γ)`, the infinite-worker limit of the out-of-sample efficiency.
pub fn out_of_sample_limit<T: Real>(alpha2: T, gamma: T) -> Result<T> {
    let one = T::one();
    let phi = optimal_risk_phi(gamma, alpha2)?;
    let tail = gamma * alpha2 * (one + alpha2) / (alpha2 + gamma * (one + alpha2));
    Ok((one + phi) / (one + tail))
}
