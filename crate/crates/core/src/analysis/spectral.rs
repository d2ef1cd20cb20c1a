//! Power-iteration estimate of the Jacobi update operator's spectral radius.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{l2_norm, GridField};
use crate::stencil::{PdeKind, PdeProblem};

pub const SPECTRAL_MAX_SIDE: usize = 129;
pub const SPECTRAL_TOL: f64 = 1e-6;
pub const SPECTRAL_MAX_ITERS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub rho_estimate: f64,
    pub iterations: usize,
    pub converged: bool,
    pub n: usize,
    pub family: PdeKind,
    pub interior_points: usize,
}

impl SpectralReport {
    /// The premise of convergence for the fixed smoother fails.
    pub fn exceeds_one(&self) -> bool {
        self.rho_estimate >= 1.0
    }
}

/// Estimates `rho(G)` for `G = (1 - M)(I - P^-1 A)`, applied matrix-free
/// as one smoothing step of the homogeneous problem.
///
/// Uses the two-step ratio `sqrt(||G^2 x|| / ||x||)`, which also settles
/// when the dominant eigenvalues come as a `+-rho` pair.
pub fn spectral_radius(problem: &PdeProblem) -> Result<SpectralReport> {
    spectral_radius_with(problem, SPECTRAL_TOL, SPECTRAL_MAX_ITERS)
}

pub fn spectral_radius_with(problem: &PdeProblem, tol: f64, max_iters: usize) -> Result<SpectralReport> {
    let n = problem.n();
    if n > SPECTRAL_MAX_SIDE {
        return Err(Error::InvalidProblem(format!(
            "spectral analysis supports n <= {SPECTRAL_MAX_SIDE}, got {n}"
        )));
    }
    let h = problem.homogeneous();
    let report = |rho: f64, iterations: usize, converged: bool| SpectralReport {
        rho_estimate: rho,
        iterations,
        converged,
        n,
        family: problem.kind(),
        interior_points: problem.mask().interior_count(),
    };
    if problem.mask().interior_count() == 0 {
        return Ok(report(0.0, 0, true));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x5EC7);
    let mut x = problem.mask().gate(&GridField::from_fn(n, |_, _| rng.random_range(0.5..1.0))?)?;
    let norm = l2_norm(&x);
    x = x.scale(1.0 / norm);
    let mut prev = f64::NAN;
    for k in 1..=max_iters {
        let y = h.smooth_unchecked(&h.smooth_unchecked(&x));
        let ny = l2_norm(&y);
        if ny == 0.0 {
            return Ok(report(0.0, k, true));
        }
        let rho = ny.sqrt();
        if (rho - prev).abs() <= tol * rho.max(1e-300) {
            return Ok(report(rho, k, true));
        }
        prev = rho;
        x = y.scale(1.0 / ny);
    }
    Ok(report(prev, max_iters, false))
}
