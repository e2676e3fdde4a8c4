//! Linear measurement operators `𝒜: ℝ^{m×n} → ℝ^N` and RIP diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{singular_values, DenseMatrix};
use crate::rng::{gaussian_matrix, stream, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Gaussian,
    Identity,
}

/// A measurement operator. Gaussian operators store their matrices densely;
/// the identity operator is vectorization and stores nothing.
#[derive(Debug, Clone)]
pub struct MeasOp {
    m: usize,
    n: usize,
    count: usize,
    kind: OpKind,
    seed: u64,
    mats: Vec<DenseMatrix>,
}

/// Portable description of an operator. Gaussian matrices are regenerated
/// from the seed on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpHeader {
    pub m: usize,
    pub n: usize,
    #[serde(rename = "N")]
    pub count: usize,
    pub kind: OpKind,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RipEstimate {
    pub rho_hat: f64,
    pub trials: usize,
    pub probe_rank: usize,
    pub seed: u64,
}

impl MeasOp {
    /// `count` matrices with i.i.d. `Normal(0, 1/count)` entries, so that
    /// `E‖𝒜(X)‖² = ‖X‖_F²`.
    pub fn gaussian(m: usize, n: usize, count: usize, seed: u64) -> Result<Self> {
        if m == 0 || n == 0 || count == 0 {
            return Err(Error::Dimension(format!(
                "gaussian operator needs m, n, N >= 1 (got {m}, {n}, {count})"
            )));
        }
        let mut rng = stream(seed, streams::OPERATOR);
        let std = (1.0 / count as f64).sqrt();
        let mats = (0..count)
            .map(|_| gaussian_matrix(&mut rng, m, n, std))
            .collect();
        Ok(Self {
            m,
            n,
            count,
            kind: OpKind::Gaussian,
            seed,
            mats,
        })
    }

    pub fn identity(m: usize, n: usize) -> Self {
        Self {
            m,
            n,
            count: m * n,
            kind: OpKind::Identity,
            seed: 0,
            mats: Vec::new(),
        }
    }

    /// Operator built from explicit measurement matrices.
    pub fn from_matrices(m: usize, n: usize, mats: Vec<DenseMatrix>) -> Result<Self> {
        for a in &mats {
            check_shape("measurement matrix", (m, n), a.shape())?;
        }
        Ok(Self {
            m,
            n,
            count: mats.len(),
            kind: OpKind::Gaussian,
            seed: 0,
            mats,
        })
    }

    pub fn header(&self) -> OpHeader {
        OpHeader {
            m: self.m,
            n: self.n,
            count: self.count,
            kind: self.kind,
            seed: self.seed,
        }
    }

    pub fn from_header(h: &OpHeader) -> Result<Self> {
        match h.kind {
            OpKind::Identity => {
                if h.count != h.m * h.n {
                    return Err(Error::InvalidConfig(format!(
                        "identity operator on {}x{} has N = {}, not {}",
                        h.m,
                        h.n,
                        h.m * h.n,
                        h.count
                    )));
                }
                Ok(Self::identity(h.m, h.n))
            }
            OpKind::Gaussian => Self::gaussian(h.m, h.n, h.count, h.seed),
        }
    }

    pub fn kind(&self) -> OpKind {
        self.kind
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn matrices(&self) -> &[DenseMatrix] {
        &self.mats
    }

    /// `𝒜(X)`, component `i` being `⟨A_i, X⟩`.
    pub fn apply(&self, x: &DenseMatrix) -> Result<Vec<f64>> {
        check_shape("apply", (self.m, self.n), x.shape())?;
        Ok(match self.kind {
            OpKind::Identity => x.as_slice().to_vec(),
            OpKind::Gaussian => self.mats.iter().map(|a| a.inner(x)).collect(),
        })
    }

    /// `𝒜*(y) = Σ yᵢ Aᵢ`.
    pub fn adjoint(&self, y: &[f64]) -> Result<DenseMatrix> {
        if y.len() != self.count {
            return Err(Error::ShapeMismatch {
                what: "adjoint",
                expected: (self.count, 1),
                found: (y.len(), 1),
            });
        }
        Ok(match self.kind {
            OpKind::Identity => DenseMatrix::new(self.m, self.n, y.to_vec())?,
            OpKind::Gaussian => {
                let mut out = vec![0.0; self.m * self.n];
                for (a, yi) in self.mats.iter().zip(y) {
                    for (o, v) in out.iter_mut().zip(a.as_slice()) {
                        *o += yi * v;
                    }
                }
                DenseMatrix::new(self.m, self.n, out)?
            }
        })
    }

    /// `(𝒜*𝒜)(X)`. Exact copy of `X` for the identity operator.
    pub fn normal_map(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        match self.kind {
            OpKind::Identity => {
                check_shape("normal map", (self.m, self.n), x.shape())?;
                Ok(x.clone())
            }
            OpKind::Gaussian => self.adjoint(&self.apply(x)?),
        }
    }

    /// `E^A = (𝒜*𝒜 − I)(Y − UVᵀ)`.
    pub fn measurement_error(
        &self,
        y: &DenseMatrix,
        u: &DenseMatrix,
        v: &DenseMatrix,
    ) -> Result<DenseMatrix> {
        check_shape("U", (self.m, u.cols()), u.shape())?;
        check_shape("V", (self.n, u.cols()), v.shape())?;
        let z = y - &u.matmul_t(v);
        self.residual_error(&z)
    }

    /// `(𝒜*𝒜)(Z) − Z`; exactly zero for the identity operator.
    pub fn residual_error(&self, z: &DenseMatrix) -> Result<DenseMatrix> {
        match self.kind {
            OpKind::Identity => {
                check_shape("residual", (self.m, self.n), z.shape())?;
                Ok(DenseMatrix::zeros(self.m, self.n))
            }
            OpKind::Gaussian => Ok(&self.normal_map(z)? - z),
        }
    }

    /// Largest `|‖𝒜(X)‖² − 1|` over `trials` Frobenius-normalized probes
    /// `X = G₁G₂ᵀ` of rank `probe_rank`. A lower bound on the true RIP
    /// constant, never a certificate.
    pub fn estimate_rip(&self, probe_rank: usize, trials: usize, seed: u64) -> Result<RipEstimate> {
        if probe_rank == 0 || probe_rank > self.m.min(self.n) {
            return Err(Error::Dimension(format!(
                "probe rank {probe_rank} must lie in 1..={}",
                self.m.min(self.n)
            )));
        }
        let mut rng = stream(seed, streams::RIP);
        let mut rho_hat = 0.0f64;
        for _ in 0..trials {
            let g1 = gaussian_matrix(&mut rng, self.m, probe_rank, 1.0);
            let g2 = gaussian_matrix(&mut rng, self.n, probe_rank, 1.0);
            let x = g1.matmul_t(&g2);
            let x = x.scale(1.0 / x.frobenius_norm());
            let energy: f64 = self.apply(&x)?.iter().map(|v| v * v).sum();
            rho_hat = rho_hat.max((energy - 1.0).abs());
        }
        Ok(RipEstimate {
            rho_hat,
            trials,
            probe_rank,
            seed,
        })
    }

    /// `‖(𝒜*𝒜)(X) − X‖` for `X` of rank at most `r`.
    pub fn rip_deviation(&self, x: &DenseMatrix, r: usize) -> Result<f64> {
        let s = singular_values(x);
        if let (Some(&top), Some(&next)) = (s.first(), s.get(r)) {
            if next > 1e-8 * top {
                return Err(Error::RankTooHigh { r, sigma: next });
            }
        }
        Ok(self.residual_error(x)?.op_norm())
    }
}

/// `2√r·ρ(‖R‖ + (min(m,n)/(2r) + 1)·σ²_{r+1}(W))`, the bound on `‖ÊA‖`.
pub fn ea_bound(norm_r: f64, sigma_r1_w_sq: f64, r: usize, rho: f64, m: usize, n: usize) -> f64 {
    let r_f = r as f64;
    let spread = m.min(n) as f64 / (2.0 * r_f) + 1.0;
    2.0 * r_f.sqrt() * rho * (norm_r + spread * sigma_r1_w_sq)
}

fn check_shape(what: &'static str, expected: (usize, usize), found: (usize, usize)) -> Result<()> {
    if expected != found {
        return Err(Error::ShapeMismatch {
            what,
            expected,
            found,
        });
    }
    Ok(())
}
