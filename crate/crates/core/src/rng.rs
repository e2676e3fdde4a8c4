//! Seeded random streams.
//!
//! Every random draw in the crate goes through a ChaCha20 generator keyed by
//! a user seed and a stream id, so independent consumers (operator, init,
//! probes, sweep runs) never share a sequence.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};

use crate::linalg::DenseMatrix;

/// Stream ids used by the experiment driver.
pub mod streams {
    pub const OPERATOR: u64 = 1;
    pub const INIT: u64 = 2;
    pub const RIP: u64 = 3;
    pub const PROBES: u64 = 4;
    pub const SWEEP: u64 = 5;
}

pub fn stream(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Matrix with i.i.d. `Normal(0, std²)` entries, filled row-major.
pub fn gaussian_matrix<R: rand::Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    std: f64,
) -> DenseMatrix {
    let normal = Normal::new(0.0, std).expect("standard deviation must be finite and >= 0");
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    DenseMatrix::new(rows, cols, data).expect("gaussian entries are finite")
}

pub fn gaussian_vector<R: rand::Rng + ?Sized>(rng: &mut R, len: usize, std: f64) -> Vec<f64> {
    gaussian_matrix(rng, len, 1, std).into_vec()
}
