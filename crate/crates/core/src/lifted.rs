//! The lifted (self-adjoint dilation) formulation.
//!
//! `W = [U; V]` is `(m+n)×h`, `Ŷ = [[0, Y], [Yᵀ, 0]]` and `J = diag(I_m, −I_n)`.
//! Everything runs in the canonical frame where `Y` is diagonal with a
//! nonnegative, decreasing diagonal.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, svd, DenseMatrix, LinalgError};
use crate::report::{InvariantReport, ReportItem};
use crate::rng::{gaussian_matrix, stream, streams};

/// `σ_r(A)` below `RANK_FLOOR·√‖Y‖` is treated as a lost rank.
pub const RANK_FLOOR: f64 = 1e-12;

/// Scalar hyperparameters of a problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub alpha: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub rho_target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub m: usize,
    pub n: usize,
    pub r: usize,
    pub h: usize,
    pub y: DenseMatrix,
    pub norm_y: f64,
    pub y_rr: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub delta: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub rho_target: f64,
    pub t1: f64,
    pub t2: f64,
    /// `δ²/(20·T₂·‖Y‖)`, the warm-up choice.
    pub beta_20: f64,
    /// `δ²/(4·T₂·‖Y‖)`, the choice used when bounding `E` along the trajectory.
    pub beta_4: f64,
}

impl ProblemSpec {
    /// `y` must already be canonical: diagonal, nonnegative, decreasing, of
    /// rank exactly `r`.
    pub fn new(y: DenseMatrix, r: usize, h: usize, hyper: Hyper) -> Result<Self> {
        let (m, n) = y.shape();
        if r == 0 || r > m.min(n) {
            return Err(Error::Dimension(format!(
                "rank {r} must lie in 1..={}",
                m.min(n)
            )));
        }
        if h < r {
            return Err(Error::Dimension(format!("width h = {h} is below rank {r}")));
        }
        let diag: Vec<f64> = (0..m.min(n)).map(|i| y[(i, i)]).collect();
        let norm_y = diag[0];
        let off_diag = (0..m)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter(|(i, j)| i != j)
            .map(|(i, j)| y[(i, j)].abs())
            .fold(0.0, f64::max);
        let sorted = diag.windows(2).all(|w| w[0] >= w[1]);
        if off_diag > 0.0 || !sorted || diag.iter().any(|d| *d < 0.0) {
            return Err(Error::InvalidConfig(
                "target must be diagonal, nonnegative and decreasing; canonicalize it first".into(),
            ));
        }
        let y_rr = diag[r - 1];
        let tail = diag.get(r).copied().unwrap_or(0.0);
        if y_rr <= 0.0 || tail > 1e-12 * norm_y {
            return Err(Error::InvalidConfig(format!(
                "target must have rank {r} (sigma_r = {y_rr:e}, sigma_{{r+1}} = {tail:e})"
            )));
        }
        let Hyper {
            alpha,
            delta,
            epsilon,
            eta,
            rho_target,
        } = hyper;
        for (name, v) in [("alpha", alpha), ("delta", delta), ("epsilon", epsilon), ("eta", eta)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if !(rho_target >= 0.0 && rho_target.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "rho_target must be nonnegative, got {rho_target}"
            )));
        }
        let t1 = 5.0 / (4.0 * y_rr) * (alpha.powi(4) * y_rr / (epsilon * epsilon)).ln();
        let t2 = 5.0 / y_rr * (y_rr / (epsilon * epsilon)).ln();
        let mut spec = Self {
            m,
            n,
            r,
            h,
            y,
            norm_y,
            y_rr,
            kappa: norm_y / y_rr,
            gamma: m.min(n) as f64 / r as f64,
            alpha,
            delta,
            epsilon,
            eta,
            rho_target,
            t1,
            t2,
            beta_20: 0.0,
            beta_4: 0.0,
        };
        spec.set_betas();
        Ok(spec)
    }

    fn set_betas(&mut self) {
        let d2 = self.delta * self.delta;
        self.beta_20 = d2 / (20.0 * self.t2 * self.norm_y);
        self.beta_4 = d2 / (4.0 * self.t2 * self.norm_y);
    }

    /// The same problem monitored with a different `δ`.
    pub fn with_delta(&self, delta: f64) -> Self {
        let mut out = self.clone();
        out.delta = delta;
        out.set_betas();
        out
    }

    pub fn hyper(&self) -> Hyper {
        Hyper {
            alpha: self.alpha,
            delta: self.delta,
            epsilon: self.epsilon,
            eta: self.eta,
            rho_target: self.rho_target,
        }
    }

    /// `m×n` diagonal target with `r` geometrically spaced values from
    /// `κ·y_rr` down to `y_rr`.
    pub fn geometric_target(m: usize, n: usize, r: usize, kappa: f64, y_rr: f64) -> Result<DenseMatrix> {
        if r == 0 || r > m.min(n) {
            return Err(Error::Dimension(format!("rank {r} must lie in 1..={}", m.min(n))));
        }
        if !(kappa >= 1.0) || !(y_rr > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "need kappa >= 1 and y_rr > 0 (got {kappa}, {y_rr})"
            )));
        }
        if r == 1 && kappa != 1.0 {
            return Err(Error::InvalidConfig("rank 1 forces kappa = 1".into()));
        }
        let values: Vec<f64> = (0..r)
            .map(|i| {
                if r == 1 || i == r - 1 {
                    y_rr
                } else if i == 0 {
                    kappa * y_rr
                } else {
                    y_rr * kappa.powf((r - 1 - i) as f64 / (r - 1) as f64)
                }
            })
            .collect();
        Ok(DenseMatrix::rect_diag(m, n, &values))
    }
}

/// `Y_raw = left · y · rightᵀ` with `y` canonical and both rotations square
/// orthogonal.
#[derive(Debug, Clone)]
pub struct Canonical {
    pub y: DenseMatrix,
    pub left: DenseMatrix,
    pub right: DenseMatrix,
}

pub fn canonicalize(y_raw: &DenseMatrix) -> Canonical {
    let (m, n) = y_raw.shape();
    let s = svd(y_raw);
    Canonical {
        y: DenseMatrix::rect_diag(m, n, &s.sigmas),
        left: linalg::complete_orthonormal(&s.left),
        right: linalg::complete_orthonormal(&s.right),
    }
}

/// `P_A` (r rows), `P_N` (m+n−2r rows) and `P_P = [P_N; P_A J]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projections {
    pub pa: DenseMatrix,
    pub pn: DenseMatrix,
    pub pp: DenseMatrix,
}

pub fn build_projections(m: usize, n: usize, r: usize) -> Result<Projections> {
    if r > m.min(n) {
        return Err(Error::Dimension(format!("rank {r} exceeds min(m, n) = {}", m.min(n))));
    }
    let dim = m + n;
    let c = std::f64::consts::FRAC_1_SQRT_2;
    let mut pa = DenseMatrix::zeros(r, dim);
    let mut paj = DenseMatrix::zeros(r, dim);
    for i in 0..r {
        pa[(i, i)] = c;
        pa[(i, m + i)] = c;
        paj[(i, i)] = c;
        paj[(i, m + i)] = -c;
    }
    let nuisance: Vec<usize> = (r..m).chain(m + r..dim).collect();
    let mut pn = DenseMatrix::zeros(nuisance.len(), dim);
    for (row, &col) in nuisance.iter().enumerate() {
        pn[(row, col)] = 1.0;
    }
    let pp = DenseMatrix::vstack(&pn, &paj);
    Ok(Projections { pa, pn, pp })
}

/// Fixed lifted objects of a problem.
#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ProblemSpec,
    pub proj: Projections,
    pub y_hat: DenseMatrix,
}

impl Model {
    pub fn new(spec: ProblemSpec) -> Result<Self> {
        let proj = build_projections(spec.m, spec.n, spec.r)?;
        let y_hat = dilation(&spec.y);
        Ok(Self { spec, proj, y_hat })
    }

    pub fn dim(&self) -> usize {
        self.spec.m + self.spec.n
    }

    pub fn j_matrix(&self) -> DenseMatrix {
        let m = self.spec.m;
        let signs: Vec<f64> = (0..self.dim()).map(|i| if i < m { 1.0 } else { -1.0 }).collect();
        DenseMatrix::diag(&signs)
    }

    /// `J·X`: negates the rows of the `V` block.
    pub fn j_left(&self, x: &DenseMatrix) -> DenseMatrix {
        let m = self.spec.m;
        DenseMatrix::from_fn(x.rows(), x.cols(), |i, j| if i < m { x[(i, j)] } else { -x[(i, j)] })
    }

    /// `J·X·J` for a square lifted matrix.
    pub fn j_sandwich(&self, x: &DenseMatrix) -> DenseMatrix {
        let m = self.spec.m;
        DenseMatrix::from_fn(x.rows(), x.cols(), |i, j| {
            if (i < m) == (j < m) {
                x[(i, j)]
            } else {
                -x[(i, j)]
            }
        })
    }

    /// `R = Ŷ − ½(WWᵀ − JWWᵀJ)`.
    pub fn residual(&self, w: &DenseMatrix) -> DenseMatrix {
        let ww = w.matmul_t(w);
        let diff = &ww - &self.j_sandwich(&ww);
        self.y_hat.add_scaled(&diff, -0.5).symmetrized()
    }

    /// `X = Ŷ + ½JWWᵀJ`.
    pub fn x_matrix(&self, w: &DenseMatrix) -> DenseMatrix {
        let ww = w.matmul_t(w);
        self.y_hat.add_scaled(&self.j_sandwich(&ww), 0.5).symmetrized()
    }

    pub fn split(&self, w: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
        let m = self.spec.m;
        (w.row_block(0, m), w.row_block(m, w.rows()))
    }

    pub fn check_w(&self, w: &DenseMatrix) -> Result<()> {
        let expected = (self.dim(), self.spec.h);
        if w.shape() != expected {
            return Err(Error::ShapeMismatch {
                what: "W",
                expected,
                found: w.shape(),
            });
        }
        Ok(())
    }
}

/// Self-adjoint dilation `[[0, M], [Mᵀ, 0]]`.
pub fn dilation(mat: &DenseMatrix) -> DenseMatrix {
    let (m, n) = mat.shape();
    DenseMatrix::from_fn(m + n, m + n, |i, j| match (i < m, j < m) {
        (true, false) => mat[(i, j - m)],
        (false, true) => mat[(j, i - m)],
        _ => 0.0,
    })
}

pub fn lift(u: &DenseMatrix, v: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::vstack(u, v)
}

/// A snapshot `W` at time `t` with its derived decomposition.
#[derive(Debug, Clone)]
pub struct LiftedState {
    pub t: f64,
    pub w: DenseMatrix,
    /// `A = P_A W`
    pub a: DenseMatrix,
    /// `A† = Aᵀ(AAᵀ)⁻¹`
    pub adag: DenseMatrix,
    /// `Q = A†A`
    pub q: DenseMatrix,
    /// `W̃ = W − WQ`
    pub wtilde: DenseMatrix,
    /// `F = P_P W A†`
    pub f: DenseMatrix,
    pub r: DenseMatrix,
    pub x: DenseMatrix,
    /// `WᵀJW = UᵀU − VᵀV`
    pub imbalance: DenseMatrix,
    /// Singular values of `A`, descending.
    pub sigma_a: Vec<f64>,
}

impl LiftedState {
    pub fn derive(w: DenseMatrix, model: &Model, t: f64) -> Result<Self> {
        model.check_w(&w)?;
        let spec = &model.spec;
        let a = model.proj.pa.matmul(&w);
        let sigma_a = linalg::singular_values(&a);
        let sigma_r = sigma_a[spec.r - 1];
        if sigma_r < RANK_FLOOR * spec.norm_y.sqrt() {
            return Err(Error::RankDeficient { sigma_r });
        }
        let adag = linalg::pinv_wide(&a).map_err(|e| match e {
            LinalgError::RankDeficient { sigma_min, .. } => Error::RankDeficient { sigma_r: sigma_min },
            other => other.into(),
        })?;
        let q = adag.matmul(&a).symmetrized();
        let wtilde = &w - &w.matmul(&q);
        let f = model.proj.pp.matmul(&w).matmul(&adag);
        let r = model.residual(&w);
        let x = model.x_matrix(&w);
        let imbalance = w.t_matmul(&model.j_left(&w)).symmetrized();
        Ok(Self {
            t,
            w,
            a,
            adag,
            q,
            wtilde,
            f,
            r,
            x,
            imbalance,
            sigma_a,
        })
    }

    pub fn sigma_r_a(&self) -> f64 {
        *self.sigma_a.last().expect("A has at least one row")
    }

    /// `(AAᵀ)⁻¹ = A†ᵀA†`.
    pub fn gram_inverse(&self) -> DenseMatrix {
        self.adag.t_matmul(&self.adag)
    }
}

/// I.i.d. `Normal(0, (ε/(C√h))²)` entries.
pub fn init_random(spec: &ProblemSpec, scale_c: f64, seed: u64) -> DenseMatrix {
    let std = spec.epsilon / (scale_c * (spec.h as f64).sqrt());
    gaussian_matrix(&mut stream(seed, streams::INIT), spec.m + spec.n, spec.h, std)
}

/// `U₀ = V₀ = (ε/√2)·I`; needs `m = n = h`.
pub fn init_scaled_identity(spec: &ProblemSpec) -> Result<DenseMatrix> {
    if spec.m != spec.n || spec.n != spec.h {
        return Err(Error::ShapeMismatch {
            what: "scaled identity init",
            expected: (spec.m, spec.m),
            found: (spec.n, spec.h),
        });
    }
    let block = DenseMatrix::identity(spec.m).scale(spec.epsilon * std::f64::consts::FRAC_1_SQRT_2);
    Ok(lift(&block, &block))
}

/// The initialization assumption: `‖W₀‖ ≤ ε`, `σ_r(A₀) ≥ ε/α²`,
/// `ε ≤ min(√κ/(αγ), δ/(3α))·√‖Y‖` and `δ ≤ 1/(64ακ)`.
pub fn check_init(w0: &DenseMatrix, model: &Model) -> InvariantReport {
    let s = &model.spec;
    let mut report = InvariantReport::new(0.0);
    report.push(ReportItem::upper("init_norm_W", w0.op_norm(), s.epsilon));
    let a0 = model.proj.pa.matmul(w0);
    let sigma_r = linalg::sigma_k(&a0, s.r);
    report.push(ReportItem::lower(
        "init_sigma_r_A",
        sigma_r,
        s.epsilon / (s.alpha * s.alpha),
    ));
    let cap = (s.kappa.sqrt() / (s.alpha * s.gamma)).min(s.delta / (3.0 * s.alpha)) * s.norm_y.sqrt();
    report.push(ReportItem::upper("epsilon_cap", s.epsilon, cap));
    report.push(ReportItem::upper(
        "delta_cap",
        s.delta,
        1.0 / (64.0 * s.alpha * s.kappa),
    ));
    report
}
