//! Shared fixtures for the criterion benches.

use ugrid_core::analysis::gen_testcase;
use ugrid_core::{GridField, PdeProblem};

/// Grid sides swept by the kernel benches.
pub const SIDES: &[usize] = &[65, 129, 257];

/// Poisson problem on the L-shaped domain, so masking is exercised.
pub fn l_shape(n: usize) -> PdeProblem {
    gen_testcase("l_shape", n).expect("valid side")
}

/// Deterministic non-trivial iterate.
pub fn iterate(n: usize) -> GridField {
    GridField::from_fn(n, |i, j| ((i * 7 + j * 13) % 17) as f64 / 17.0 - 0.5).expect("valid side")
}
