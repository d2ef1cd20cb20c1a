//! Explicitly assembled systems for tiny grids. These are the ground-truth
//! oracles every iterative path is checked against.
//!
//! Assembly works from the continuous operators with central differences
//! (x along columns, y towards row 0), independently of the convolution
//! kernels in [`crate::stencil`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::grid::GridField;
use crate::stencil::{Coefficients, PdeProblem};

/// Largest side accepted by [`dense_solve`].
pub const MAX_DENSE_SIDE: usize = 33;

/// Assembles the full `n^2 x n^2` masked system: interior rows carry the
/// discretized PDE, boundary rows are identity rows with right-hand side `b`.
pub fn assemble_physical(p: &PdeProblem) -> (DMatrix<f64>, DVector<f64>) {
    let n = p.n();
    let nn = n * n;
    let mut a = DMatrix::zeros(nn, nn);
    let mut rhs = DVector::zeros(nn);
    let mask = p.mask();
    for i in 0..n {
        for j in 0..n {
            let row = i * n + j;
            if !mask.is_interior(i, j) {
                a[(row, row)] = 1.0;
                rhs[row] = p.b().get(i, j);
                continue;
            }
            rhs[row] = p.f().get(i, j);
            let (north, south, west, east) = (row - n, row + n, row - 1, row + 1);
            match p.coefficients() {
                Coefficients::Poisson | Coefficients::Helmholtz { .. } => {
                    // laplacian
                    a[(row, row)] = -4.0;
                    for nb in [north, south, west, east] {
                        a[(row, nb)] = 1.0;
                    }
                    if let Coefficients::Helmholtz { k2 } = p.coefficients() {
                        a[(row, row)] += k2.get(i, j);
                    }
                }
                Coefficients::ConvDiffReact { vx, vy, alpha, beta } => {
                    // -alpha lap u + vx du/dx + vy du/dy + beta u
                    let (cx, cy) = (vx.get(i, j), vy.get(i, j));
                    a[(row, row)] = 4.0 * alpha + beta;
                    a[(row, east)] = -alpha + 0.5 * cx;
                    a[(row, west)] = -alpha - 0.5 * cx;
                    a[(row, north)] = -alpha + 0.5 * cy;
                    a[(row, south)] = -alpha - 0.5 * cy;
                }
            }
        }
    }
    (a, rhs)
}

/// Dense matrix of the masked Jacobi update `G = (1 - M)(I - P^-1 A)`.
pub fn assemble_update_matrix(p: &PdeProblem) -> DMatrix<f64> {
    let (a, _) = assemble_physical(p);
    let nn = a.nrows();
    let mask = p.mask().as_slice();
    let diag = p.diagonal();
    let mut g = DMatrix::zeros(nn, nn);
    for row in 0..nn {
        if mask[row] == 0.0 {
            continue;
        }
        for col in 0..nn {
            let id = if row == col { 1.0 } else { 0.0 };
            g[(row, col)] = id - a[(row, col)] / diag[row];
        }
    }
    g
}

/// Solves the masked system directly by LU with partial pivoting.
pub fn dense_solve(p: &PdeProblem) -> Result<GridField> {
    let n = p.n();
    if n > MAX_DENSE_SIDE {
        return Err(Error::Config(format!(
            "dense solve limited to n <= {MAX_DENSE_SIDE}, got {n}"
        )));
    }
    let (a, rhs) = assemble_physical(p);
    let scale = a.amax();
    let lu = a.lu();
    let u = lu.u();
    for k in 0..u.nrows() {
        let pivot = u[(k, k)];
        if pivot.is_nan() || pivot.abs() <= 1e-13 * scale {
            return Err(Error::Singular { column: k, pivot });
        }
    }
    let x = lu.solve(&rhs).ok_or(Error::Singular {
        column: 0,
        pivot: 0.0,
    })?;
    GridField::from_vec(n, x.as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{l2_norm, InteriorMask};

    #[test]
    fn single_interior_point() {
        let mask = InteriorMask::from_fn(5, |i, j| (i, j) == (2, 2)).unwrap();
        let p = PdeProblem::poisson(
            GridField::zeros(5).unwrap(),
            GridField::filled(5, 1.0).unwrap(),
            mask,
        )
        .unwrap();
        let u = dense_solve(&p).unwrap();
        assert!((u.get(2, 2) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn self_consistent_poisson() {
        let n = 9;
        let b = GridField::from_fn(n, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0).unwrap();
        let f = GridField::from_fn(n, |i, j| (i as f64 - j as f64) * 0.1).unwrap();
        let p = PdeProblem::poisson(f, b.clone(), InteriorMask::full(n).unwrap()).unwrap();
        let u = dense_solve(&p).unwrap();
        assert!(l2_norm(&p.residual(&u).unwrap()) <= 1e-10);
        for q in 0..n * n {
            if p.mask().as_slice()[q] == 0.0 {
                assert_eq!(u.as_slice()[q], b.as_slice()[q]);
            }
        }
    }

    #[test]
    fn helmholtz_matches_iterated_smoother() {
        let n = 9;
        let b = GridField::from_fn(n, |i, j| ((i + 2 * j) % 3) as f64).unwrap();
        // Jacobi for k2 = 1 diverges on the full 7x7 interior (rho = 4 cos(pi/8) / 3);
        // on a 3x3 interior rho = 4 cos(pi/4) / 3 < 1.
        let mask = InteriorMask::from_fn(n, |i, j| (3..6).contains(&i) && (3..6).contains(&j)).unwrap();
        let k2 = GridField::filled(n, 1.0).unwrap();
        let p = PdeProblem::helmholtz(GridField::zeros(n).unwrap(), b, mask, k2).unwrap();
        let direct = dense_solve(&p).unwrap();
        let mut u = p.zero_interior_guess();
        for _ in 0..20_000 {
            let next = p.smooth(&u).unwrap();
            if next == u {
                break;
            }
            u = next;
        }
        for (a, b) in u.as_slice().iter().zip(direct.as_slice()) {
            assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn singular_helmholtz_is_reported() {
        // -L on two adjacent interior points has eigenvalues 3 and 5
        let n = 5;
        let mask = InteriorMask::from_fn(n, |i, j| i == 2 && (j == 1 || j == 2)).unwrap();
        let k2 = GridField::filled(n, 3.0).unwrap();
        let p = PdeProblem::helmholtz(
            GridField::zeros(n).unwrap(),
            GridField::filled(n, 1.0).unwrap(),
            mask,
            k2,
        )
        .unwrap();
        assert!(matches!(dense_solve(&p), Err(Error::Singular { .. })));
    }

    #[test]
    fn rejects_large_grids() {
        let p = PdeProblem::poisson(
            GridField::zeros(65).unwrap(),
            GridField::zeros(65).unwrap(),
            InteriorMask::full(65).unwrap(),
        )
        .unwrap();
        assert!(dense_solve(&p).is_err());
    }
}
