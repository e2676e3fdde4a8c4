use proptest::prelude::*;

use pgflow_core::dynamics::{gd_step_factored, gd_step_lifted, FlowPiece};
use pgflow_core::lifted::{dilation, lift, LiftedState, Model, ProblemSpec};
use pgflow_core::linalg::{pinv_wide, singular_values, svd, sym_eig};
use pgflow_core::monitors::identity_suite;
use pgflow_core::rng::{gaussian_matrix, stream};
use pgflow_core::{DenseMatrix, Hyper, MeasOp};

fn matrix(rows: usize, cols: usize, seed: u64, scale: f64) -> DenseMatrix {
    gaussian_matrix(&mut stream(seed, 0), rows, cols, scale)
}

fn model(m: usize, n: usize, r: usize, h: usize, eta: f64) -> Model {
    let kappa = if r == 1 { 1.0 } else { 2.0 };
    let y = ProblemSpec::geometric_target(m, n, r, kappa, 1.0).unwrap();
    let hyper = Hyper {
        alpha: 1.0,
        delta: 0.01,
        epsilon: 1e-3,
        eta,
        rho_target: 0.0,
    };
    Model::new(ProblemSpec::new(y, r, h, hyper).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svd_reconstructs(rows in 1usize..8, cols in 1usize..8, seed: u64) {
        let a = matrix(rows, cols, seed, 1.0);
        let s = svd(&a);
        prop_assert!((&s.reconstruct() - &a).max_abs() <= 1e-12 * a.max_abs().max(1.0));
        prop_assert!(s.sigmas.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn symmetric_eig_reconstructs(n in 1usize..9, seed: u64) {
        let a = matrix(n, n, seed, 1.0).symmetrized();
        let e = sym_eig(&a).unwrap();
        prop_assert!((&e.reconstruct() - &a).max_abs() <= 1e-12 * a.max_abs().max(1.0));
        let gram = e.eigenvectors.t_matmul(&e.eigenvectors);
        prop_assert!((&gram - &DenseMatrix::identity(n)).max_abs() <= 1e-12);
    }

    #[test]
    fn pinv_satisfies_moore_penrose(r in 1usize..4, extra in 0usize..5, seed: u64) {
        let a = matrix(r, r + extra, seed, 1.0);
        let p = pinv_wide(&a).unwrap();
        let tol = 1e-9 * (1.0 + p.max_abs() * a.max_abs()).powi(2);
        prop_assert!((&a.matmul(&p).matmul(&a) - &a).max_abs() <= tol);
        prop_assert!((&p.matmul(&a).matmul(&p) - &p).max_abs() <= tol);
        prop_assert!(a.matmul(&p).asymmetry() <= tol);
        prop_assert!(p.matmul(&a).asymmetry() <= tol);
    }

    #[test]
    fn dilation_spectrum_is_plus_minus_singular_values(m in 1usize..6, n in 1usize..6, seed: u64) {
        let y = matrix(m, n, seed, 1.0);
        let eig = sym_eig(&dilation(&y)).unwrap();
        let s = singular_values(&y);
        prop_assert!((eig.max_eigenvalue() - s[0]).abs() <= 1e-12 * s[0].max(1.0));
        prop_assert!((eig.min_eigenvalue() + s[0]).abs() <= 1e-12 * s[0].max(1.0));
    }

    #[test]
    fn flow_piece_is_a_semigroup(seed: u64, s1 in 0.0f64..1.0, s2 in 0.0f64..1.0) {
        let mdl = model(5, 4, 2, 6, 0.05);
        let w = matrix(9, 6, seed, 0.3);
        let rec = gd_step_lifted(&w, 0, &MeasOp::identity(5, 4), &mdl).unwrap();
        let piece = FlowPiece::new(&rec).unwrap();
        let joint = piece.propagator(s1 + s2);
        let split = piece.propagator(s1).matmul(&piece.propagator(s2));
        prop_assert!((&joint - &split).max_abs() <= 1e-12);
        prop_assert!((&piece.w_at(1.0) - &rec.w_after).max_abs() <= 1e-12);
    }

    #[test]
    fn lifted_step_matches_factored(seed: u64, eta in 1e-3f64..5e-2) {
        let mdl = model(4, 5, 2, 6, eta);
        let op = MeasOp::gaussian(4, 5, 60, seed).unwrap();
        let u = matrix(4, 6, seed, 0.3);
        let v = matrix(5, 6, seed ^ 1, 0.3);
        let (u1, v1) = gd_step_factored(&u, &v, &op, &mdl.spec.y, eta).unwrap();
        let rec = gd_step_lifted(&lift(&u, &v), 0, &op, &mdl).unwrap();
        prop_assert!((&rec.w_after - &lift(&u1, &v1)).max_abs() <= 1e-13);
    }

    #[test]
    fn identities_hold_on_random_states(seed: u64, scale in 1e-3f64..2.0, h in 2usize..10) {
        let mdl = model(6, 5, 2, h, 1e-2);
        let w = matrix(11, h, seed, scale);
        let st = LiftedState::derive(w, &mdl, 0.0).unwrap();
        let rep = identity_suite(&st, &mdl);
        prop_assert!(rep.all_pass(), "{:?}", rep.failures().collect::<Vec<_>>());
    }

    #[test]
    fn adjoint_identity(seed: u64, count in 1usize..50) {
        let op = MeasOp::gaussian(3, 4, count, seed).unwrap();
        let x = matrix(3, 4, seed ^ 7, 1.0);
        let y = gaussian_matrix(&mut stream(seed, 11), count, 1, 1.0).into_vec();
        let lhs: f64 = op.apply(&x).unwrap().iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs = x.inner(&op.adjoint(&y).unwrap());
        let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * x.frobenius_norm() * ynorm);
    }
}
