//! Deterministic dense linear algebra for small matrices.
//!
//! Everything here is a pure function of its inputs. Eigendecompositions use
//! cyclic Jacobi sweeps and SVDs use one-sided Jacobi, so results depend only
//! on the input bits and the fixed sweep order.

mod eig;
mod matrix;
mod svd;

use thiserror::Error;

pub use eig::{sym_eig, SymEig, JACOBI_MAX_SWEEPS, JACOBI_THRESHOLD, SYMMETRY_TOLERANCE};
pub use matrix::DenseMatrix;
pub use svd::{complete_orthonormal, singular_values, svd, Svd};

/// Relative cut-off below which [`pinv_wide`] treats its input as singular.
pub const PINV_RANK_TOLERANCE: f64 = 1e-10;
/// Smallest eigenvalue accepted by [`spd_log`] and [`spd_frac_power`].
pub const SPD_MIN_EIGENVALUE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not square: {shape:?}")]
    NotSquare { shape: (usize, usize) },
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("rank deficient: sigma_min = {sigma_min:e} (sigma_max = {sigma_max:e})")]
    RankDeficient { sigma_min: f64, sigma_max: f64 },
    #[error("spectrum not positive: lambda_min = {lambda_min:e}")]
    NonPositiveSpectrum { lambda_min: f64 },
    #[error("top singular pair of an all-zero matrix")]
    ZeroMatrix,
    #[error("Jacobi iteration did not converge in {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
}

/// A unit pair `(u, v)` with `M v = σ u` and `Mᵀ u = σ v`.
#[derive(Debug, Clone, PartialEq)]
pub struct SingularPair {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub sigma: f64,
}

impl SingularPair {
    /// `uᵀ X v` for a matrix of the source shape.
    pub fn bilinear(&self, x: &DenseMatrix) -> f64 {
        self.u.iter().zip(x.matvec(&self.v)).map(|(a, b)| a * b).sum()
    }

    /// The same pair with both vectors negated.
    pub fn flipped(&self) -> Self {
        Self {
            u: self.u.iter().map(|x| -x).collect(),
            v: self.v.iter().map(|x| -x).collect(),
            sigma: self.sigma,
        }
    }
}

/// Moore–Penrose inverse `Aᵀ(AAᵀ)⁻¹` of a wide full-row-rank matrix.
pub fn pinv_wide(a: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    if a.rows() > a.cols() {
        return Err(LinalgError::ShapeMismatch {
            expected: (a.cols(), a.cols()),
            found: a.shape(),
        });
    }
    let s = svd(a);
    svd::require_rank(&s, a.rows(), PINV_RANK_TOLERANCE)?;
    // A = L Σ Rᵀ  =>  Aᵀ(AAᵀ)⁻¹ = R Σ⁻¹ Lᵀ.
    let mut scaled = s.right.clone();
    for j in 0..scaled.cols() {
        let inv = 1.0 / s.sigmas[j];
        for i in 0..scaled.rows() {
            scaled[(i, j)] *= inv;
        }
    }
    Ok(scaled.matmul_t(&s.left))
}

fn positive_spectrum(m: &DenseMatrix) -> Result<SymEig, LinalgError> {
    let e = sym_eig(m)?;
    let lambda_min = e.min_eigenvalue();
    if lambda_min <= SPD_MIN_EIGENVALUE {
        return Err(LinalgError::NonPositiveSpectrum { lambda_min });
    }
    Ok(e)
}

/// Principal logarithm of a symmetric positive-definite matrix.
pub fn spd_log(m: &DenseMatrix) -> Result<DenseMatrix, LinalgError> {
    Ok(positive_spectrum(m)?.apply(f64::ln))
}

/// `M^p` for symmetric positive-definite `M` and `p ∈ [0, 1]`. `p = 0` returns
/// the identity exactly.
pub fn spd_frac_power(m: &DenseMatrix, p: f64) -> Result<DenseMatrix, LinalgError> {
    let e = positive_spectrum(m)?;
    if p == 0.0 {
        return Ok(DenseMatrix::identity(m.rows()));
    }
    Ok(e.apply(|l| l.powf(p)))
}

pub fn top_singular_pair(m: &DenseMatrix) -> Result<SingularPair, LinalgError> {
    let s = svd(m);
    let sigma = s.sigmas.first().copied().unwrap_or(0.0);
    if sigma == 0.0 {
        return Err(LinalgError::ZeroMatrix);
    }
    Ok(SingularPair {
        u: s.left.column(0),
        v: s.right.column(0),
        sigma,
    })
}

/// Pair for the smallest singular value `σ_k`, `k = min(rows, cols)`. The
/// matrix must have full rank `k` relative to `1e-12 · σ₁`.
pub fn bottom_singular_pair(m: &DenseMatrix) -> Result<SingularPair, LinalgError> {
    let s = svd(m);
    let k = s.sigmas.len();
    if k == 0 || s.sigmas[0] == 0.0 {
        return Err(LinalgError::ZeroMatrix);
    }
    svd::require_rank(&s, k, 1e-12)?;
    Ok(SingularPair {
        u: s.left.column(k - 1),
        v: s.right.column(k - 1),
        sigma: s.sigmas[k - 1],
    })
}

/// `σ_k(M)` with 1-based `k`; zero beyond the shorter dimension.
pub fn sigma_k(m: &DenseMatrix, k: usize) -> f64 {
    assert!(k >= 1, "sigma_k is 1-based");
    singular_values(m).get(k - 1).copied().unwrap_or(0.0)
}
