//! Gradient-descent steps, the piecewise closed-form perturbed flow through
//! them, and analytic time derivatives along that flow.
//!
//! Over `[kη, (k+1)η)` the flow is `W(s) = (I + ηR̃_k)^s W_k` with
//! `t = kη + sη`, so `dW/dt = (1/η)·ln(I + ηR̃_k)·W(s)` and the perturbation
//! is `E = (1/η)·ln(I + ηR̃_k) − R(W(s))`.

use crate::error::{Error, Result};
use crate::lifted::{dilation, lift, LiftedState, Model};
use crate::linalg::{
    bottom_singular_pair, sym_eig, top_singular_pair, DenseMatrix, LinalgError, SymEig,
    SPD_MIN_EIGENVALUE,
};
use crate::measurement::MeasOp;

/// Largest admissible `η‖R̃‖`.
pub const STEP_GUARD: f64 = 2.0 / 3.0;
/// Relative asymmetry tolerated in a perturbation passed to the derivative
/// evaluators.
pub const E_SYMMETRY_TOLERANCE: f64 = 1e-10;

/// One factored step `U' = U + η·G·V`, `V' = V + η·Gᵀ·U` with
/// `G = (𝒜*𝒜)(Y − UVᵀ)`.
pub fn gd_step_factored(
    u: &DenseMatrix,
    v: &DenseMatrix,
    op: &MeasOp,
    y: &DenseMatrix,
    eta: f64,
) -> Result<(DenseMatrix, DenseMatrix)> {
    if u.cols() != v.cols() || u.rows() != y.rows() || v.rows() != y.cols() {
        return Err(Error::ShapeMismatch {
            what: "factored step",
            expected: (y.rows(), y.cols()),
            found: (u.rows(), v.rows()),
        });
    }
    let g = op.normal_map(&(y - &u.matmul_t(v)))?;
    let u_next = u.add_scaled(&g.matmul(v), eta);
    let v_next = v.add_scaled(&g.t_matmul(u), eta);
    Ok((u_next, v_next))
}

/// A lifted step `W_{k+1} = (I + ηR̃_k)·W_k` together with its ingredients.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub k: usize,
    pub eta: f64,
    pub w_before: DenseMatrix,
    pub w_after: DenseMatrix,
    pub r_k: DenseMatrix,
    /// Dilation of the measurement error `E^A_k`.
    pub ea_hat_k: DenseMatrix,
    pub rtilde_k: DenseMatrix,
    /// `η·‖R̃_k‖`
    pub eta_norm: f64,
}

pub fn gd_step_lifted(w: &DenseMatrix, k: usize, op: &MeasOp, model: &Model) -> Result<StepRecord> {
    model.check_w(w)?;
    let eta = model.spec.eta;
    let (u, v) = model.split(w);
    let z = &model.spec.y - &u.matmul_t(&v);
    let ea = op.residual_error(&z)?;
    let r_k = model.residual(w);
    let ea_hat_k = dilation(&ea);
    let rtilde_k = &r_k + &ea_hat_k;
    // ‖R̃‖ equals the top singular value of its off-diagonal block.
    let block = rtilde_k.submatrix(0, model.spec.m, model.spec.m, model.dim());
    let eta_norm = eta * block.op_norm();
    if !(eta_norm <= STEP_GUARD) {
        return Err(Error::StepTooLarge { eta_norm });
    }
    let w_after = w.add_scaled(&rtilde_k.matmul(w), eta);
    Ok(StepRecord {
        k,
        eta,
        w_before: w.clone(),
        w_after,
        r_k,
        ea_hat_k,
        rtilde_k,
        eta_norm,
    })
}

/// The closed-form flow over one step, with the eigendecomposition of
/// `I + ηR̃_k` cached.
#[derive(Debug, Clone)]
pub struct FlowPiece<'a> {
    pub rec: &'a StepRecord,
    growth: SymEig,
}

impl<'a> FlowPiece<'a> {
    pub fn new(rec: &'a StepRecord) -> Result<Self> {
        let n = rec.rtilde_k.rows();
        let m = DenseMatrix::identity(n).add_scaled(&rec.rtilde_k, rec.eta);
        let growth = sym_eig(&m)?;
        let lambda_min = growth.min_eigenvalue();
        if lambda_min <= SPD_MIN_EIGENVALUE {
            return Err(LinalgError::NonPositiveSpectrum { lambda_min }.into());
        }
        Ok(Self { rec, growth })
    }

    /// `(I + ηR̃)^s`. Values of `s` outside `[0, 1]` continue the same piece
    /// analytically.
    pub fn propagator(&self, s: f64) -> DenseMatrix {
        if s == 0.0 {
            return DenseMatrix::identity(self.growth.dim());
        }
        self.growth.apply(|l| l.powf(s))
    }

    pub fn w_at(&self, s: f64) -> DenseMatrix {
        if s == 0.0 {
            return self.rec.w_before.clone();
        }
        self.propagator(s).matmul(&self.rec.w_before)
    }

    /// `(1/η)·ln(I + ηR̃)`, equal to `R_t + E_t` on the whole piece.
    pub fn generator(&self) -> DenseMatrix {
        let eta = self.rec.eta;
        self.growth.apply(|l| l.ln() / eta)
    }

    pub fn perturbation(&self, s: f64, model: &Model) -> DenseMatrix {
        let w = self.w_at(s);
        (&self.generator() - &model.residual(&w)).symmetrized()
    }

    pub fn dw_dt(&self, s: f64) -> DenseMatrix {
        self.generator().matmul(&self.w_at(s))
    }

    /// Time of the piece at fraction `s`.
    pub fn time(&self, s: f64) -> f64 {
        (self.rec.k as f64 + s) * self.rec.eta
    }
}

pub fn flow_interpolate(rec: &StepRecord, s: f64) -> Result<DenseMatrix> {
    if s == 0.0 {
        return Ok(rec.w_before.clone());
    }
    Ok(FlowPiece::new(rec)?.w_at(s))
}

pub fn perturbation_e(rec: &StepRecord, s: f64, model: &Model) -> Result<DenseMatrix> {
    Ok(FlowPiece::new(rec)?.perturbation(s, model))
}

pub fn flow_derivative_w(rec: &StepRecord, s: f64) -> Result<DenseMatrix> {
    Ok(FlowPiece::new(rec)?.dw_dt(s))
}

fn check_symmetric(e: &DenseMatrix) -> Result<()> {
    let asymmetry = e.asymmetry();
    if asymmetry > E_SYMMETRY_TOLERANCE * e.max_abs().max(1.0) {
        return Err(LinalgError::NotSymmetric { asymmetry }.into());
    }
    Ok(())
}

/// `Ẇ = (R + E)·W`.
pub fn w_dot(state: &LiftedState, e: &DenseMatrix) -> DenseMatrix {
    (&state.r + e).matmul(&state.w)
}

/// `dF/dt = (P_P − F P_A)(X+E)(P_Aᵀ + P_Pᵀ F)
///        + P_P W̃ W̃ᵀ [(X+E) P_Aᵀ (AAᵀ)⁻¹ − P_Pᵀ F]`.
pub fn df_dt(state: &LiftedState, e: &DenseMatrix, model: &Model) -> Result<DenseMatrix> {
    check_symmetric(e)?;
    let p = &model.proj;
    let z = &state.x + e;
    let left = &p.pp - &state.f.matmul(&p.pa);
    let right = &p.pa.transpose() + &p.pp.t_matmul(&state.f);
    let first = left.matmul(&z).matmul(&right);
    let bracket = &z.matmul_t(&p.pa).matmul(&state.gram_inverse()) - &p.pp.t_matmul(&state.f);
    let second = p
        .pp
        .matmul(&state.wtilde)
        .matmul(&state.wtilde.t_matmul(&bracket));
    Ok(&first + &second)
}

/// `dW̃/dt = P_Pᵀ(P_P − F P_A)(X+E)W̃ − W̃W̃ᵀ[(X+E) P_Aᵀ A†ᵀ − ½W + W̃]`.
pub fn dwtilde_dt(state: &LiftedState, e: &DenseMatrix, model: &Model) -> Result<DenseMatrix> {
    check_symmetric(e)?;
    let p = &model.proj;
    let z = &state.x + e;
    let left = p.pp.t_matmul(&(&p.pp - &state.f.matmul(&p.pa)));
    let first = left.matmul(&z).matmul(&state.wtilde);
    let bracket = z
        .matmul_t(&p.pa)
        .matmul_t(&state.adag)
        .add_scaled(&state.w, -0.5)
        .add_scaled(&state.wtilde, 1.0);
    let second = state.wtilde.matmul(&state.wtilde.t_matmul(&bracket));
    Ok(&first - &second)
}

/// `dR/dt = −½(ẆWᵀ + WẆᵀ − JẆWᵀJ − JWẆᵀJ)`.
pub fn dr_dt(state: &LiftedState, e: &DenseMatrix, model: &Model) -> DenseMatrix {
    let wd = w_dot(state, e);
    let prod = wd.matmul_t(&state.w);
    let sym = &prod + &prod.transpose();
    (&sym - &model.j_sandwich(&sym)).scale(-0.5)
}

/// `dX/dt = ½J(ẆWᵀ + WẆᵀ)J`.
pub fn dx_dt(state: &LiftedState, e: &DenseMatrix, model: &Model) -> DenseMatrix {
    let wd = w_dot(state, e);
    let prod = wd.matmul_t(&state.w);
    model.j_sandwich(&(&prod + &prod.transpose())).scale(0.5)
}

/// `d(WᵀJW)/dt = Wᵀ(EᵀJ + JE)W`.
pub fn dimbalance_dt(state: &LiftedState, e: &DenseMatrix, model: &Model) -> DenseMatrix {
    let je = model.j_left(e);
    let sym = &je + &je.transpose();
    state.w.t_matmul(&sym.matmul(&state.w))
}

/// Quantities whose norm is tracked through a singular pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tracked {
    W,
    Imbalance,
    PAJW,
    PNW,
    /// `λ₁(P_P X P_Pᵀ)` through its top eigenvector.
    PPXPP,
    F,
    Wtilde,
    /// Bottom pair of `A`.
    ABottom,
    /// `λ₁(R)` through its top eigenvector.
    R,
    PNWQ,
}

impl Tracked {
    /// The tracked matrix itself.
    pub fn matrix(self, state: &LiftedState, model: &Model) -> DenseMatrix {
        let p = &model.proj;
        match self {
            Tracked::W => state.w.clone(),
            Tracked::Imbalance => state.imbalance.clone(),
            Tracked::PAJW => p.pa.matmul(&model.j_left(&state.w)),
            Tracked::PNW => p.pn.matmul(&state.w),
            Tracked::PPXPP => p.pp.matmul(&state.x).matmul_t(&p.pp).symmetrized(),
            Tracked::F => state.f.clone(),
            Tracked::Wtilde => state.wtilde.clone(),
            Tracked::ABottom => state.a.clone(),
            Tracked::R => state.r.clone(),
            Tracked::PNWQ => p.pn.matmul(&state.w.matmul(&state.q)),
        }
    }

    /// Analytic time derivative of [`Tracked::matrix`] along `Ẇ = (R+E)W`.
    pub fn derivative(self, state: &LiftedState, e: &DenseMatrix, model: &Model) -> Result<DenseMatrix> {
        let p = &model.proj;
        Ok(match self {
            Tracked::W => w_dot(state, e),
            Tracked::Imbalance => dimbalance_dt(state, e, model),
            Tracked::PAJW => p.pa.matmul(&model.j_left(&w_dot(state, e))),
            Tracked::PNW => p.pn.matmul(&w_dot(state, e)),
            Tracked::PPXPP => p.pp.matmul(&dx_dt(state, e, model)).matmul_t(&p.pp),
            Tracked::F => df_dt(state, e, model)?,
            Tracked::Wtilde => dwtilde_dt(state, e, model)?,
            Tracked::ABottom => p.pa.matmul(&w_dot(state, e)),
            Tracked::R => dr_dt(state, e, model),
            Tracked::PNWQ => p.pn.matmul(&(&w_dot(state, e) - &dwtilde_dt(state, e, model)?)),
        })
    }
}

/// `uᵀ(dX/dt)v` for the top pair (bottom pair for `A`, top eigenvector for
/// the symmetric `R` and `P_P X P_Pᵀ`) of the tracked matrix. Also returns
/// the matching singular value or eigenvalue.
pub fn singular_pair_derivative(
    state: &LiftedState,
    e: &DenseMatrix,
    which: Tracked,
    model: &Model,
) -> Result<(f64, f64)> {
    let mat = which.matrix(state, model);
    let deriv = which.derivative(state, e, model)?;
    match which {
        Tracked::R | Tracked::PPXPP => {
            let eig = sym_eig(&mat)?;
            let v = eig.eigenvector(0);
            let dv = deriv.matvec(&v);
            Ok((v.iter().zip(dv).map(|(a, b)| a * b).sum(), eig.max_eigenvalue()))
        }
        Tracked::ABottom => {
            let pair = bottom_singular_pair(&mat)?;
            Ok((pair.bilinear(&deriv), pair.sigma))
        }
        _ => {
            let pair = top_singular_pair(&mat)?;
            Ok((pair.bilinear(&deriv), pair.sigma))
        }
    }
}

/// Lifts a factored pair and steps it through both routes; used by tests and
/// the flow-vs-gd report.
pub fn lifted_equivalence_gap(
    u: &DenseMatrix,
    v: &DenseMatrix,
    op: &MeasOp,
    model: &Model,
) -> Result<f64> {
    let (u1, v1) = gd_step_factored(u, v, op, &model.spec.y, model.spec.eta)?;
    let rec = gd_step_lifted(&lift(u, v), 0, op, model)?;
    Ok((&rec.w_after - &lift(&u1, &v1)).max_abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lifted::{init_random, Hyper, ProblemSpec};
    use crate::rng::{gaussian_matrix, stream};

    fn model(m: usize, n: usize, r: usize, h: usize, eta: f64) -> Model {
        let y = ProblemSpec::geometric_target(m, n, r, 2.0, 1.0).unwrap();
        let hyper = Hyper {
            alpha: 1.0,
            delta: 0.01,
            epsilon: 1e-3,
            eta,
            rho_target: 0.0,
        };
        Model::new(ProblemSpec::new(y, r, h, hyper).unwrap()).unwrap()
    }

    fn random_w(model: &Model, seed: u64, scale: f64) -> DenseMatrix {
        gaussian_matrix(&mut stream(seed, 9), model.dim(), model.spec.h, scale)
    }

    #[test]
    fn factored_fixed_points() {
        let mdl = model(3, 3, 2, 2, 0.1);
        let mut u = DenseMatrix::zeros(3, 2);
        u[(0, 0)] = 2f64.sqrt();
        u[(1, 1)] = 1.0;
        let op = MeasOp::identity(3, 3);
        let (u1, v1) = gd_step_factored(&u, &u, &op, &mdl.spec.y, 0.1).unwrap();
        assert!((&u1 - &u).max_abs() < 1e-15 && (&v1 - &u).max_abs() < 1e-15);
        let w = random_w(&mdl, 1, 0.3);
        let (a, b) = mdl.split(&w);
        let (a1, b1) = gd_step_factored(&a, &b, &op, &mdl.spec.y, 0.0).unwrap();
        assert_eq!((a1, b1), (a, b));
    }

    #[test]
    fn lifted_matches_factored() {
        let mdl = model(4, 3, 2, 5, 0.05);
        let gauss = MeasOp::gaussian(4, 3, 30, 5).unwrap();
        let ident = MeasOp::identity(4, 3);
        for seed in 0..100 {
            let w = random_w(&mdl, seed, 0.4);
            let (u, v) = mdl.split(&w);
            for op in [&gauss, &ident] {
                assert!(lifted_equivalence_gap(&u, &v, op, &mdl).unwrap() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_is_a_fixed_point() {
        let mdl = model(3, 3, 2, 3, 0.1);
        let rec = gd_step_lifted(&DenseMatrix::zeros(6, 3), 0, &MeasOp::identity(3, 3), &mdl).unwrap();
        assert_eq!(rec.w_after.max_abs(), 0.0);
        assert_eq!(rec.ea_hat_k.max_abs(), 0.0);
    }

    #[test]
    fn guard_rejects_large_steps() {
        let mdl = model(3, 3, 2, 3, 1.0);
        let err = gd_step_lifted(&DenseMatrix::zeros(6, 3), 0, &MeasOp::identity(3, 3), &mdl);
        assert!(matches!(err, Err(Error::StepTooLarge { eta_norm }) if (eta_norm - 2.0).abs() < 1e-12));
    }

    #[test]
    fn interpolation_endpoints_and_semigroup() {
        let mdl = model(4, 4, 2, 4, 0.1);
        let op = MeasOp::gaussian(4, 4, 40, 1).unwrap();
        for seed in 0..10 {
            let w = random_w(&mdl, seed, 0.3);
            let rec = gd_step_lifted(&w, 0, &op, &mdl).unwrap();
            assert_eq!(flow_interpolate(&rec, 0.0).unwrap(), rec.w_before);
            let end = flow_interpolate(&rec, 1.0).unwrap();
            assert!((&end - &rec.w_after).max_abs() <= 1e-12 * rec.w_after.max_abs().max(1.0));
            let piece = FlowPiece::new(&rec).unwrap();
            let half = piece.propagator(0.5);
            let twice = half.matmul(&half.matmul(&rec.w_before));
            assert!((&twice - &rec.w_after).max_abs() < 1e-12);
        }
    }

    #[test]
    fn perturbation_of_zero_state() {
        let mdl = model(3, 3, 2, 3, 0.05);
        let rec = gd_step_lifted(&DenseMatrix::zeros(6, 3), 0, &MeasOp::identity(3, 3), &mdl).unwrap();
        let e = perturbation_e(&rec, 0.3, &mdl).unwrap();
        // Ŷ has eigenvalues ±y_i, so E = (1/η)ln(I+ηŶ) − Ŷ acts on them as scalars.
        let eta = 0.05;
        let eig = sym_eig(&mdl.y_hat).unwrap();
        let expected = eig.apply(|l| (1.0 + eta * l).ln() / eta - l);
        assert!((&e - &expected).max_abs() < 1e-12);
    }

    #[test]
    fn perturbation_is_first_order_in_eta() {
        let ratios: Vec<f64> = [0.02, 0.01, 0.005]
            .iter()
            .map(|&eta| {
                let mdl = model(3, 3, 2, 4, eta);
                let w = random_w(&mdl, 3, 0.5);
                let rec = gd_step_lifted(&w, 0, &MeasOp::identity(3, 3), &mdl).unwrap();
                perturbation_e(&rec, 0.0, &mdl).unwrap().op_norm()
            })
            .collect();
        for pair in ratios.windows(2) {
            assert!((pair[0] / pair[1] - 2.0).abs() < 0.05, "{ratios:?}");
        }
    }

    #[test]
    fn flow_derivative_matches_differences() {
        let mdl = model(4, 3, 2, 5, 0.05);
        let op = MeasOp::gaussian(4, 3, 25, 2).unwrap();
        let w = random_w(&mdl, 4, 0.5);
        let rec = gd_step_lifted(&w, 0, &op, &mdl).unwrap();
        let piece = FlowPiece::new(&rec).unwrap();
        let s = 0.4;
        let dt = 1e-4 * rec.eta;
        let ds = dt / rec.eta;
        let fd = (&piece.w_at(s + ds) - &piece.w_at(s - ds)).scale(1.0 / (2.0 * dt));
        assert!((&fd - &piece.dw_dt(s)).max_abs() < 1e-7);
        let d0 = flow_derivative_w(&rec, 0.0).unwrap();
        assert!((&d0 - &piece.generator().matmul(&rec.w_before)).max_abs() == 0.0);
    }

    #[test]
    fn derivative_formulas_agree_with_w_dot() {
        // Both closed forms must agree with the chain rule through Ẇ.
        let mdl = model(4, 4, 2, 6, 0.02);
        let op = MeasOp::gaussian(4, 4, 30, 7).unwrap();
        for seed in 0..10 {
            let w = random_w(&mdl, seed, 0.5);
            let rec = gd_step_lifted(&w, 0, &op, &mdl).unwrap();
            let piece = FlowPiece::new(&rec).unwrap();
            let s = 0.5;
            let e = piece.perturbation(s, &mdl);
            let st = LiftedState::derive(piece.w_at(s), &mdl, piece.time(s)).unwrap();
            let dt = 1e-5;
            let ds = dt / rec.eta;
            let plus = LiftedState::derive(piece.w_at(s + ds), &mdl, 0.0).unwrap();
            let minus = LiftedState::derive(piece.w_at(s - ds), &mdl, 0.0).unwrap();
            let fd_f = (&plus.f - &minus.f).scale(0.5 / dt);
            let fd_wt = (&plus.wtilde - &minus.wtilde).scale(0.5 / dt);
            let fd_r = (&plus.r - &minus.r).scale(0.5 / dt);
            let fd_b = (&plus.imbalance - &minus.imbalance).scale(0.5 / dt);
            assert!((&fd_f - &df_dt(&st, &e, &mdl).unwrap()).max_abs() < 1e-6);
            assert!((&fd_wt - &dwtilde_dt(&st, &e, &mdl).unwrap()).max_abs() < 1e-6);
            assert!((&fd_r - &dr_dt(&st, &e, &mdl)).max_abs() < 1e-6);
            assert!((&fd_b - &dimbalance_dt(&st, &e, &mdl)).max_abs() < 1e-6);
        }
    }

    #[test]
    fn derivative_special_cases() {
        let mdl = model(3, 3, 2, 3, 0.05);
        // Aligned state: W̃ = 0 and F = 0.
        let mut u = DenseMatrix::zeros(3, 3);
        u[(0, 0)] = 0.4;
        u[(1, 1)] = 0.2;
        let st = LiftedState::derive(lift(&u, &u), &mdl, 0.0).unwrap();
        let e = DenseMatrix::from_fn(6, 6, |i, j| 1e-3 * ((i + j) as f64).sin());
        let p = &mdl.proj;
        let collapsed = p.pp.matmul(&(&st.x + &e)).matmul_t(&p.pa);
        assert!((&df_dt(&st, &e, &mdl).unwrap() - &collapsed).max_abs() < 1e-15);
        assert_eq!(dwtilde_dt(&st, &e, &mdl).unwrap().max_abs(), 0.0);

        let mut bad = e.clone();
        bad[(0, 1)] += 1e-3;
        assert!(df_dt(&st, &bad, &mdl).is_err());
        assert!(dwtilde_dt(&st, &bad, &mdl).is_err());
    }

    #[test]
    fn wtilde_derivative_stays_in_pp_range() {
        let mdl = model(4, 5, 2, 7, 0.02);
        let op = MeasOp::identity(4, 5);
        for seed in 0..10 {
            let w = init_random(&mdl.spec, 0.5, seed).scale(300.0);
            let rec = gd_step_lifted(&w, 0, &op, &mdl).unwrap();
            let e = perturbation_e(&rec, 0.0, &mdl).unwrap();
            let st = LiftedState::derive(w, &mdl, 0.0).unwrap();
            let d = dwtilde_dt(&st, &e, &mdl).unwrap();
            let pa = &mdl.proj.pa;
            assert!(pa.t_matmul(&pa.matmul(&d)).max_abs() < 1e-9);
        }
    }

    #[test]
    fn pair_derivative_is_sign_invariant() {
        let mdl = model(4, 4, 2, 5, 0.02);
        let w = random_w(&mdl, 2, 0.4);
        let st = LiftedState::derive(w, &mdl, 0.0).unwrap();
        let e = DenseMatrix::zeros(8, 8);
        let d = Tracked::Wtilde.derivative(&st, &e, &mdl).unwrap();
        let pair = top_singular_pair(&st.wtilde).unwrap();
        assert_eq!(pair.bilinear(&d), pair.flipped().bilinear(&d));
        let (val, sigma) = singular_pair_derivative(&st, &e, Tracked::Wtilde, &mdl).unwrap();
        assert_eq!(val, pair.bilinear(&d));
        assert_eq!(sigma, pair.sigma);
    }

    #[test]
    fn exact_flow_conserves_imbalance() {
        // With E ≡ 0 the generator is R itself; s-interpolation within one
        // piece of exp(sηR) then leaves WᵀJW unchanged.
        let mdl = model(3, 3, 2, 4, 0.05);
        let w = random_w(&mdl, 6, 0.4);
        let r = mdl.residual(&w);
        let eta = mdl.spec.eta;
        let exp = sym_eig(&r).unwrap();
        let imb = |w: &DenseMatrix| w.t_matmul(&mdl.j_left(w));
        let b0 = imb(&w);
        for s in [0.25, 0.5, 1.0] {
            let ws = exp.apply(|l| (s * eta * l).exp()).matmul(&w);
            // The flow only moves W along exp(sηR) if R is frozen; imbalance is
            // preserved because RJ + JR = 0.
            assert!((&imb(&ws) - &b0).max_abs() < 1e-10);
        }
    }
}
