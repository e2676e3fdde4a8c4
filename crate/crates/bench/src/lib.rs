//! Fixtures shared by the benchmarks.

use pgflow_core::lifted::{init_random, Model, ProblemSpec};
use pgflow_core::{DenseMatrix, Hyper, MeasOp};

pub struct Fixture {
    pub model: Model,
    pub op: MeasOp,
    pub w: DenseMatrix,
}

/// Rank-2 target of size `m×n` with width `h`, a Gaussian operator with
/// `6(m+n)r` measurements and a random start of scale `0.3`.
pub fn fixture(m: usize, n: usize, h: usize) -> Fixture {
    let r = 2;
    let y = ProblemSpec::geometric_target(m, n, r, 2.0, 1.0).expect("valid target");
    let hyper = Hyper {
        alpha: 1.0,
        delta: 0.01,
        epsilon: 0.3,
        eta: 1e-2,
        rho_target: 0.0,
    };
    let spec = ProblemSpec::new(y, r, h, hyper).expect("valid spec");
    let w = init_random(&spec, 1.0, 1);
    let op = MeasOp::gaussian(m, n, 6 * (m + n) * r, 1).expect("valid operator");
    Fixture {
        model: Model::new(spec).expect("valid model"),
        op,
        w,
    }
}
