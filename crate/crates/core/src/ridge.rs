//! Ridge regression in the SVD basis and the finite-sample optimal weights.
//!
//! Every design matrix is factorized once when it is constructed. After that,
//! a fit at a new penalty costs O(np), and trace functionals cost O(min(n, p)).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_traits::Float;

use crate::error::{Error, Result};
use crate::scalar::LinalgScalar;

/// Above this size the smaller Gram matrix is no longer formed; a direct SVD
/// is used instead.
pub const GRAM_LIMIT: usize = 2000;

/// An immutable `n × p` design with a cached rank-truncated thin SVD
/// `X = U diag(s) Vᵀ`.
#[derive(Debug, Clone)]
pub struct DesignMatrix<T: LinalgScalar> {
    x: DMatrix<T>,
    u: DMatrix<T>,
    s: DVector<T>,
    v: DMatrix<T>,
}

impl<T: LinalgScalar> DesignMatrix<T> {
    pub fn new(x: DMatrix<T>) -> Result<Self> {
        let (n, p) = x.shape();
        if n == 0 || p == 0 {
            return Err(Error::Dimension(format!("design must be non-empty, got {n}x{p}")));
        }
        if x.iter().any(|v| !Float::is_finite(*v)) {
            return Err(Error::InvalidInput("design contains non-finite entries".into()));
        }
        let (u, s, v) = if n.min(p) <= GRAM_LIMIT {
            gram_svd(&x)?
        } else {
            direct_svd(&x)?
        };
        Ok(Self { x, u, s, v })
    }

    pub fn from_row_slice(n: usize, p: usize, data: &[T]) -> Result<Self> {
        if data.len() != n * p {
            return Err(Error::Dimension(format!(
                "{} values cannot fill a {n}x{p} design",
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(n, p, data))
    }

    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    /// Number of retained singular values.
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.x
    }

    pub fn left_factor(&self) -> &DMatrix<T> {
        &self.u
    }

    /// Nonzero singular values in decreasing order.
    pub fn singular_values(&self) -> &DVector<T> {
        &self.s
    }

    pub fn right_factor(&self) -> &DMatrix<T> {
        &self.v
    }

    /// Nonzero eigenvalues of `Σ̂ = XᵀX/n`, i.e. `s_j²/n`.
    pub fn covariance_eigenvalues(&self) -> Vec<T> {
        let n = T::from_usize_lossy(self.nrows());
        self.s.iter().map(|&s| s * s / n).collect()
    }

    pub fn predict(&self, beta: &DVector<T>) -> Result<DVector<T>> {
        if beta.len() != self.ncols() {
            return Err(Error::Dimension(format!(
                "coefficient length {} but design has {} columns",
                beta.len(),
                self.ncols()
            )));
        }
        Ok(&self.x * beta)
    }

    /// `Q β = V diag(ℓ/(ℓ+λ)) Vᵀ β`, the expected ridge estimate for
    /// noiseless responses `Y = Xβ`.
    fn shrink(&self, beta: &DVector<T>, lambda: T) -> DVector<T> {
        let n = T::from_usize_lossy(self.nrows());
        let mut coords = self.v.tr_mul(beta);
        for (c, &s) in coords.iter_mut().zip(self.s.iter()) {
            let ell = s * s / n;
            *c *= ell / (ell + lambda);
        }
        &self.v * coords
    }
}

fn drop_threshold<T: LinalgScalar>(n: usize, p: usize, top: T) -> T {
    T::from_usize_lossy(n.max(p)) * <T as Float>::epsilon() * top
}

/// Thin SVD through the eigendecomposition of the smaller Gram matrix.
fn gram_svd<T: LinalgScalar>(x: &DMatrix<T>) -> Result<(DMatrix<T>, DVector<T>, DMatrix<T>)> {
    let (n, p) = x.shape();
    let wide = p > n;
    // `transpose() *` goes through the blocked gemm kernel; `tr_mul` does not.
    let xt = x.transpose();
    let gram = if wide { x * &xt } else { &xt * x };
    let eig = SymmetricEigen::try_new(gram, <T as Float>::epsilon(), 0)
        .ok_or_else(|| Error::Factorization("symmetric eigendecomposition did not converge".into()))?;

    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let top = Float::max(eig.eigenvalues[order[0]], T::zero());
    // Eigenvalues are squared singular values, so the cut is on s² here.
    let cut = drop_threshold(n, p, top);
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&j| eig.eigenvalues[j] > cut && eig.eigenvalues[j] > T::zero())
        .collect();

    let r = kept.len();
    let s = DVector::from_iterator(r, kept.iter().map(|&j| Float::sqrt(eig.eigenvalues[j])));
    let small = DMatrix::from_fn(eig.eigenvectors.nrows(), r, |i, c| eig.eigenvectors[(i, kept[c])]);
    let mut other = if wide { &xt * &small } else { x * &small };
    for (mut col, &sv) in other.column_iter_mut().zip(s.iter()) {
        col /= sv;
    }
    Ok(if wide { (small, s, other) } else { (other, s, small) })
}

fn direct_svd<T: LinalgScalar>(x: &DMatrix<T>) -> Result<(DMatrix<T>, DVector<T>, DMatrix<T>)> {
    let (n, p) = x.shape();
    let svd = x
        .clone()
        .try_svd(true, true, <T as Float>::epsilon(), 0)
        .ok_or_else(|| Error::Factorization("singular value decomposition did not converge".into()))?;
    let (u, vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(Error::Factorization("missing singular vectors".into())),
    };
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let top = svd.singular_values[order[0]];
    let cut = drop_threshold(n, p, top);
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&j| svd.singular_values[j] > cut)
        .collect();
    let r = kept.len();
    let s = DVector::from_iterator(r, kept.iter().map(|&j| svd.singular_values[j]));
    let uu = DMatrix::from_fn(n, r, |i, c| u[(i, kept[c])]);
    let vv = DMatrix::from_fn(p, r, |i, c| vt[(kept[c], i)]);
    Ok((uu, s, vv))
}

fn check_lambda<T: LinalgScalar>(lambda: T) -> Result<T> {
    if lambda > T::zero() && Float::is_finite(lambda) {
        Ok(lambda)
    } else {
        Err(Error::domain("lambda", lambda.as_f64(), "(0, inf)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit<T: LinalgScalar> {
    pub coefficients: DVector<T>,
    pub lambda: T,
    pub n: usize,
}

/// `(XᵀX + nλI)⁻¹ XᵀY`.
pub fn ridge_fit<T: LinalgScalar>(x: &DesignMatrix<T>, y: &DVector<T>, lambda: T) -> Result<RidgeFit<T>> {
    RidgePath::new(x, y)?.fit(lambda)
}

/// Ridge fits of one `(X, Y)` pair along a penalty path; `UᵀY` is computed once.
#[derive(Debug, Clone)]
pub struct RidgePath<'a, T: LinalgScalar> {
    design: &'a DesignMatrix<T>,
    uty: DVector<T>,
}

impl<'a, T: LinalgScalar> RidgePath<'a, T> {
    pub fn new(design: &'a DesignMatrix<T>, y: &DVector<T>) -> Result<Self> {
        if y.len() != design.nrows() {
            return Err(Error::Dimension(format!(
                "response has {} rows but design has {}",
                y.len(),
                design.nrows()
            )));
        }
        Ok(Self {
            design,
            uty: design.u.tr_mul(y),
        })
    }

    pub fn fit(&self, lambda: T) -> Result<RidgeFit<T>> {
        let lambda = check_lambda(lambda)?;
        let n = self.design.nrows();
        let nl = T::from_usize_lossy(n) * lambda;
        let scaled = DVector::from_iterator(
            self.uty.len(),
            self.uty
                .iter()
                .zip(self.design.s.iter())
                .map(|(&c, &s)| c * s / (s * s + nl)),
        );
        Ok(RidgeFit {
            coefficients: &self.design.v * scaled,
            lambda,
            n,
        })
    }
}

/// `(p⁻¹ tr(Σ̂+λI)⁻¹, p⁻¹ tr(Σ̂+λI)⁻²)`, with the `p − rank` zero eigenvalues
/// of `Σ̂` contributing `1/λ` and `1/λ²`.
pub fn trace_functionals<T: LinalgScalar>(x: &DesignMatrix<T>, lambda: T) -> Result<(T, T)> {
    let lambda = check_lambda(lambda)?;
    let p = x.ncols();
    let zeros = T::from_usize_lossy(p - x.rank());
    let mut m = zeros / lambda;
    let mut mprime = zeros / (lambda * lambda);
    for ell in x.covariance_eigenvalues() {
        let d = T::one() / (ell + lambda);
        m += d;
        mprime += d * d;
    }
    let pf = T::from_usize_lossy(p);
    Ok((m / pf, mprime / pf))
}

/// Exact finite-sample moments of the local ridge estimators for fixed β:
/// `v_i = βᵀQ_iβ`, `A_ij = βᵀQ_iQ_jβ`, `R_i = σ²/n_i · tr[(Σ̂_i+λ_iI)⁻²Σ̂_i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteSampleMoments<T: LinalgScalar> {
    pub v: DVector<T>,
    pub a: DMatrix<T>,
    pub r: DVector<T>,
}

impl<T: LinalgScalar> FiniteSampleMoments<T> {
    pub fn compute(shards: &[DesignMatrix<T>], beta: &DVector<T>, sigma2: T, lambdas: &[T]) -> Result<Self> {
        if shards.is_empty() {
            return Err(Error::InvalidInput("at least one shard is required".into()));
        }
        if shards.len() != lambdas.len() {
            return Err(Error::Dimension(format!(
                "{} shards but {} penalties",
                shards.len(),
                lambdas.len()
            )));
        }
        let p = beta.len();
        if let Some(bad) = shards.iter().find(|s| s.ncols() != p) {
            return Err(Error::Dimension(format!(
                "shard has {} columns but beta has length {p}",
                bad.ncols()
            )));
        }
        if !(sigma2 >= T::zero()) {
            return Err(Error::domain("sigma2", sigma2.as_f64(), "[0, inf)"));
        }
        let k = shards.len();
        let mut qb = Vec::with_capacity(k);
        let mut r = DVector::zeros(k);
        for (i, (shard, &lambda)) in shards.iter().zip(lambdas).enumerate() {
            let lambda = check_lambda(lambda)?;
            qb.push(shard.shrink(beta, lambda));
            let trace = shard
                .covariance_eigenvalues()
                .into_iter()
                .fold(T::zero(), |acc, ell| acc + ell / ((ell + lambda) * (ell + lambda)));
            r[i] = sigma2 * trace / T::from_usize_lossy(shard.nrows());
        }
        let v = DVector::from_iterator(k, qb.iter().map(|q| q.dot(beta)));
        let a = DMatrix::from_fn(k, k, |i, j| qb[i].dot(&qb[j]));
        Ok(Self { v, a, r })
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    fn system(&self) -> DMatrix<T> {
        let mut m = self.a.clone();
        for i in 0..self.len() {
            m[(i, i)] += self.r[i];
        }
        m
    }
}

/// Weights minimizing `E‖Σ w_i β̂_i − β‖²` over the noise, for known β and σ².
///
/// Returns `(w*, MSE*, moments)`.
pub fn finite_sample_weights<T: LinalgScalar>(
    shards: &[DesignMatrix<T>],
    beta: &DVector<T>,
    sigma2: T,
    lambdas: &[T],
) -> Result<(DVector<T>, T, FiniteSampleMoments<T>)> {
    let moments = FiniteSampleMoments::compute(shards, beta, sigma2, lambdas)?;
    let system = moments.system();
    let singular = || Error::Singular("A + R is not positive definite; optimal weights are not unique".into());
    let scale = system.diagonal().iter().fold(T::zero(), |acc, &d| Float::max(acc, d));
    let chol = system.cholesky().ok_or_else(singular)?;
    // Exactly singular systems can slip through the factorization on roundoff;
    // a pivot at the rounding level means the weights are not determined.
    let floor = T::lit(100.0) * T::from_usize_lossy(moments.len()) * <T as Float>::epsilon() * scale;
    if chol.l_dirty().diagonal().iter().any(|&l| !(l * l > floor)) {
        return Err(singular());
    }
    let w = chol.solve(&moments.v);
    let mse = beta.norm_squared() - moments.v.dot(&w);
    Ok((w, mse, moments))
}

/// `wᵀ(A+R)w − 2vᵀw + ‖β‖²`.
pub fn oracle_mse_of_weights<T: LinalgScalar>(
    moments: &FiniteSampleMoments<T>,
    w: &DVector<T>,
    beta_norm2: T,
) -> Result<T> {
    if w.len() != moments.len() {
        return Err(Error::Dimension(format!(
            "{} weights for {} shards",
            w.len(),
            moments.len()
        )));
    }
    let quad = w.dot(&(moments.system() * w));
    Ok(quad - T::lit(2.0) * moments.v.dot(w) + beta_norm2)
}
