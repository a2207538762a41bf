//! Independent reference computations. Nothing here calls into the closed
//! forms under test.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(n: usize, p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector(n: usize, sd: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
}

/// Root of an increasing function on `[lo, hi]` by plain bisection.
pub fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    assert!(f(lo) <= 0.0 && f(hi) >= 0.0, "root not bracketed");
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Marchenko-Pastur Stieltjes transform at `z = −λ` from the self-consistency
/// equation `m = 1/(1 − γ − z − γ z m)`, i.e. the positive root of
/// `γλm² + (1 − γ + λ)m − 1`, which lies in `(0, 1/λ]`.
pub fn mp_stieltjes_bisect(gamma: f64, lambda: f64) -> f64 {
    bisect(
        |m| gamma * lambda * m * m + (1.0 - gamma + lambda) * m - 1.0,
        0.0,
        1.0 / lambda,
    )
}

/// Companion fixed point for a discrete spectrum by bisection on `[0, 1]`.
pub fn companion_bisect(atoms: &[f64], masses: &[f64], gamma: f64, lambda: f64) -> f64 {
    let e = |x: f64| -> f64 {
        atoms
            .iter()
            .zip(masses)
            .map(|(t, w)| w * lambda / (x * t + lambda))
            .sum()
    };
    bisect(|x| x - 1.0 + gamma * (1.0 - e(x)), 0.0, 1.0)
}

/// `p⁻¹ tr (S + λI)⁻¹` through an explicit Cholesky inverse.
pub fn normalized_resolvent_trace(s: &DMatrix<f64>, lambda: f64) -> f64 {
    let p = s.nrows();
    let shifted = s + DMatrix::identity(p, p) * lambda;
    let inv = shifted.cholesky().expect("positive definite").inverse();
    inv.trace() / p as f64
}

/// Ridge by solving the normal equations `(XᵀX + nλI)β = XᵀY` with LU.
pub fn ridge_normal_equations(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let (n, p) = x.shape();
    let lhs = x.transpose() * x + DMatrix::identity(p, p) * (n as f64 * lambda);
    lhs.lu().solve(&(x.transpose() * y)).expect("nonsingular")
}

/// Gaussian log-likelihood with a dense log-determinant and linear solve.
pub fn dense_loglik(x: &DMatrix<f64>, y: &DVector<f64>, sigma2: f64, alpha2: f64) -> f64 {
    let (n, p) = x.shape();
    let k = x * x.transpose() * (alpha2 / p as f64) + DMatrix::identity(n, n);
    let chol = k.cholesky().expect("positive definite");
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let quad = y.dot(&chol.solve(y));
    -0.5 * sigma2.ln() - logdet / (2.0 * n as f64) - quad / (2.0 * sigma2 * n as f64)
}

/// Density of the Marchenko-Pastur law with ratio `y` on its continuous part;
/// when `y > 1` an atom of mass `1 − 1/y` sits at zero.
pub fn mp_density(y: f64, x: f64) -> f64 {
    let a = (1.0 - y.sqrt()).powi(2);
    let b = (1.0 + y.sqrt()).powi(2);
    if x <= a || x >= b {
        0.0
    } else {
        ((b - x) * (x - a)).sqrt() / (2.0 * std::f64::consts::PI * y * x)
    }
}

/// `∫ f dF_y` for the Marchenko-Pastur law, by a substitution that removes
/// the square-root endpoint singularities, plus the zero atom.
pub fn mp_integral(y: f64, f: impl Fn(f64) -> f64, nodes: usize) -> f64 {
    let a = (1.0 - y.sqrt()).powi(2);
    let b = (1.0 + y.sqrt()).powi(2);
    let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
    // x = c + r cos θ, θ ∈ (0, π); midpoint rule in θ.
    let h = std::f64::consts::PI / nodes as f64;
    let mut total = 0.0;
    for i in 0..nodes {
        let theta = (i as f64 + 0.5) * h;
        let x = c + r * theta.cos();
        total += f(x) * mp_density(y, x) * r * theta.sin() * h;
    }
    if y > 1.0 {
        total += (1.0 - 1.0 / y) * f(0.0);
    }
    total
}
