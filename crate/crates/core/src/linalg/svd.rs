//! Thin SVD by one-sided (Hestenes) Jacobi rotations.

use super::eig::orient;
use super::{DenseMatrix, LinalgError};

const ORTHO_TOLERANCE: f64 = 1e-15;
const MAX_SWEEPS: usize = 100;

/// Thin SVD `M = left · diag(sigmas) · rightᵀ` with `k = min(rows, cols)` columns.
#[derive(Debug, Clone)]
pub struct Svd {
    pub left: DenseMatrix,
    pub sigmas: Vec<f64>,
    pub right: DenseMatrix,
}

impl Svd {
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut scaled = self.left.clone();
        for j in 0..scaled.cols() {
            for i in 0..scaled.rows() {
                scaled[(i, j)] *= self.sigmas[j];
            }
        }
        scaled.matmul_t(&self.right)
    }

    /// Numerical rank with cut-off `rel_tol · σ₁`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let top = self.sigmas.first().copied().unwrap_or(0.0);
        self.sigmas.iter().filter(|s| **s > rel_tol * top).count()
    }
}

/// Singular value decomposition of an arbitrary finite matrix.
///
/// Singular values are descending; each left vector is oriented so that its
/// largest-magnitude entry is positive, with the right vector flipped to match.
pub fn svd(m: &DenseMatrix) -> Svd {
    if m.rows() < m.cols() {
        let t = svd_tall(&m.transpose());
        let mut out = Svd {
            left: t.right,
            sigmas: t.sigmas,
            right: t.left,
        };
        reorient(&mut out);
        return out;
    }
    let mut out = svd_tall(m);
    reorient(&mut out);
    out
}

pub fn singular_values(m: &DenseMatrix) -> Vec<f64> {
    let work = if m.rows() < m.cols() {
        m.transpose()
    } else {
        m.clone()
    };
    let (g, _) = hestenes(&work);
    let mut s: Vec<f64> = (0..g.cols()).map(|j| column_norm(&g, j)).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

fn column_norm(g: &DenseMatrix, j: usize) -> f64 {
    (0..g.rows()).map(|i| g[(i, j)] * g[(i, j)]).sum::<f64>().sqrt()
}

/// Orthogonalizes the columns of `m` (rows ≥ cols). Returns the rotated
/// matrix and the accumulated right rotation.
fn hestenes(m: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    let (rows, cols) = m.shape();
    let mut g = m.clone();
    let mut v = DenseMatrix::identity(cols);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols.saturating_sub(1) {
            for q in p + 1..cols {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..rows {
                    let gp = g[(i, p)];
                    let gq = g[(i, q)];
                    alpha += gp * gp;
                    beta += gq * gq;
                    gamma += gp * gq;
                }
                if gamma == 0.0 || gamma.abs() <= ORTHO_TOLERANCE * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let gp = g[(i, p)];
                    let gq = g[(i, q)];
                    g[(i, p)] = c * gp - s * gq;
                    g[(i, q)] = s * gp + c * gq;
                }
                for i in 0..cols {
                    let vp = v[(i, p)];
                    let vq = v[(i, q)];
                    v[(i, p)] = c * vp - s * vq;
                    v[(i, q)] = s * vp + c * vq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    (g, v)
}

fn svd_tall(m: &DenseMatrix) -> Svd {
    let (rows, cols) = m.shape();
    let (g, v) = hestenes(m);
    let norms: Vec<f64> = (0..cols).map(|j| column_norm(&g, j)).collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));

    let top = norms.iter().copied().fold(0.0, f64::max);
    let mut left = DenseMatrix::zeros(rows, cols);
    let mut right = DenseMatrix::zeros(cols, cols);
    let mut sigmas = Vec::with_capacity(cols);
    let mut missing = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        let sigma = norms[src];
        sigmas.push(sigma);
        right.set_column(dst, &v.column(src));
        // Columns that are numerically zero get a completed basis vector below.
        if sigma > 0.0 && sigma > top * 1e-300 {
            let col: Vec<f64> = (0..rows).map(|i| g[(i, src)] / sigma).collect();
            left.set_column(dst, &col);
        } else {
            missing.push(dst);
        }
    }
    complete_basis(&mut left, &missing);
    Svd {
        left,
        sigmas,
        right,
    }
}

/// Fills the listed columns with unit vectors orthogonal to the others.
fn complete_basis(left: &mut DenseMatrix, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let rows = left.rows();
    let mut filled: Vec<usize> = (0..left.cols()).filter(|j| !missing.contains(j)).collect();
    let mut candidate = 0;
    for &dst in missing {
        loop {
            assert!(candidate < rows, "basis completion ran out of candidates");
            let mut x = vec![0.0; rows];
            x[candidate] = 1.0;
            candidate += 1;
            for _ in 0..2 {
                for &j in &filled {
                    let c = left.column(j);
                    let d: f64 = c.iter().zip(&x).map(|(a, b)| a * b).sum();
                    for (xi, ci) in x.iter_mut().zip(&c) {
                        *xi -= d * ci;
                    }
                }
            }
            let norm = x.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-8 {
                x.iter_mut().for_each(|a| *a /= norm);
                left.set_column(dst, &x);
                filled.push(dst);
                break;
            }
        }
    }
}

fn reorient(s: &mut Svd) {
    for j in 0..s.sigmas.len() {
        let mut u = s.left.column(j);
        let before = u.clone();
        orient(&mut u);
        if u != before {
            s.left.set_column(j, &u);
            let v: Vec<f64> = s.right.column(j).iter().map(|x| -x).collect();
            s.right.set_column(j, &v);
        }
    }
}

/// Extends orthonormal columns to a square orthogonal matrix.
pub fn complete_orthonormal(q: &DenseMatrix) -> DenseMatrix {
    let (rows, cols) = q.shape();
    let mut out = DenseMatrix::zeros(rows, rows);
    for j in 0..cols.min(rows) {
        out.set_column(j, &q.column(j));
    }
    let missing: Vec<usize> = (cols.min(rows)..rows).collect();
    complete_basis(&mut out, &missing);
    out
}

/// Checks that `m` has at least `expected` singular values above `rel_tol · σ₁`.
pub(crate) fn require_rank(
    svd: &Svd,
    expected: usize,
    rel_tol: f64,
) -> Result<(), LinalgError> {
    let top = svd.sigmas.first().copied().unwrap_or(0.0);
    let sigma_min = svd.sigmas.get(expected.saturating_sub(1)).copied().unwrap_or(0.0);
    if expected > svd.sigmas.len() || top == 0.0 || sigma_min < rel_tol * top {
        return Err(LinalgError::RankDeficient {
            sigma_min,
            sigma_max: top,
        });
    }
    Ok(())
}
