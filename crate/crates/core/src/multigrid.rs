//! Classical geometric multigrid: full-weighting restriction, bilinear
//! prolongation, conservative mask coarsening and a correction-scheme
//! V-cycle built on the masked Jacobi smoother.
//!
//! Coarse operators are rediscretized rather than Galerkin products. With
//! unit lattice spacing on every level, doubling the spacing scales the
//! lattice coefficients: `k2` and `beta` by 4, `vx`/`vy` by 2, and the
//! restricted residual by 4.

use crate::error::{Error, Result};
use crate::grid::{coarser_side, GridField, InteriorMask};
use crate::stencil::{Coefficients, PdeProblem};

/// Sweeps used in place of a direct solve on the coarsest level.
pub const COARSEST_SWEEPS: usize = 50;

/// Default Jacobi damping inside the V-cycle. Plain Jacobi leaves the
/// checkerboard mode of the five-point Laplacian undamped (its eigenvalue
/// tends to -1), which stalls the cycle; 4/5 is the optimal smoothing
/// weight for that stencil.
pub const DEFAULT_OMEGA: f64 = 0.8;

const FW: [f64; 3] = [0.25, 0.5, 0.25];

/// Full-weighting restriction to side `(n + 1) / 2`. Frame points are
/// injected.
pub fn restrict_full_weighting(fine: &GridField) -> Result<GridField> {
    let nf = fine.n();
    let nc = coarser_side(nf).ok_or(Error::GridTooSmall { n: nf, min: 9 })?;
    let mut out = vec![0.0; nc * nc];
    for ci in 0..nc {
        for cj in 0..nc {
            let (fi, fj) = (2 * ci, 2 * cj);
            out[ci * nc + cj] = if ci == 0 || cj == 0 || ci == nc - 1 || cj == nc - 1 {
                fine.get(fi, fj)
            } else {
                let mut s = 0.0;
                for (a, wa) in FW.iter().enumerate() {
                    for (b, wb) in FW.iter().enumerate() {
                        s += wa * wb * fine.get(fi + a - 1, fj + b - 1);
                    }
                }
                s
            };
        }
    }
    Ok(GridField::from_raw(nc, out))
}

/// Bilinear interpolation to side `2 n - 1`; exact at coincident points.
pub fn prolong_bilinear(coarse: &GridField) -> GridField {
    let nc = coarse.n();
    let nf = 2 * nc - 1;
    let mut out = vec![0.0; nf * nf];
    prolong_into(coarse.as_slice(), nc, &mut out);
    GridField::from_raw(nf, out)
}

/// `dst = prolong(src)` for raw row-major buffers.
pub(crate) fn prolong_into(src: &[f64], nc: usize, dst: &mut [f64]) {
    let nf = 2 * nc - 1;
    for fi in 0..nf {
        let (i0, i1, wi) = if fi % 2 == 0 { (fi / 2, fi / 2, 1.0) } else { (fi / 2, fi / 2 + 1, 0.5) };
        for fj in 0..nf {
            let (j0, j1, wj) = if fj % 2 == 0 { (fj / 2, fj / 2, 1.0) } else { (fj / 2, fj / 2 + 1, 0.5) };
            dst[fi * nf + fj] = if wi == 1.0 && wj == 1.0 {
                src[i0 * nc + j0]
            } else if wi == 1.0 {
                0.5 * (src[i0 * nc + j0] + src[i0 * nc + j1])
            } else if wj == 1.0 {
                0.5 * (src[i0 * nc + j0] + src[i1 * nc + j0])
            } else {
                0.25 * (src[i0 * nc + j0] + src[i0 * nc + j1] + src[i1 * nc + j0] + src[i1 * nc + j1])
            };
        }
    }
}

/// `dst += prolong^T(src)` where `src` lives on the fine grid.
pub(crate) fn prolong_adjoint_acc(src: &[f64], nc: usize, dst: &mut [f64]) {
    let nf = 2 * nc - 1;
    for fi in 0..nf {
        for fj in 0..nf {
            let g = src[fi * nf + fj];
            if g == 0.0 {
                continue;
            }
            let is = if fi % 2 == 0 { [fi / 2, usize::MAX] } else { [fi / 2, fi / 2 + 1] };
            let js = if fj % 2 == 0 { [fj / 2, usize::MAX] } else { [fj / 2, fj / 2 + 1] };
            let wi = if fi % 2 == 0 { 1.0 } else { 0.5 };
            let wj = if fj % 2 == 0 { 1.0 } else { 0.5 };
            for &ci in is.iter().filter(|&&v| v != usize::MAX) {
                for &cj in js.iter().filter(|&&v| v != usize::MAX) {
                    dst[ci * nc + cj] += wi * wj * g;
                }
            }
        }
    }
}

/// Full weighting on interior coarse points only (frame set to zero).
pub(crate) fn pool_interior_into(src: &[f64], nf: usize, dst: &mut [f64]) {
    let nc = nf.div_ceil(2);
    dst.fill(0.0);
    for ci in 1..nc - 1 {
        for cj in 1..nc - 1 {
            let (fi, fj) = (2 * ci, 2 * cj);
            let mut s = 0.0;
            for (a, wa) in FW.iter().enumerate() {
                let row = (fi + a - 1) * nf + fj - 1;
                s += wa * (0.25 * src[row] + 0.5 * src[row + 1] + 0.25 * src[row + 2]);
            }
            dst[ci * nc + cj] = s;
        }
    }
}

/// `dst += pool_interior^T(src)` where `src` lives on the coarse grid.
pub(crate) fn pool_interior_adjoint_acc(src: &[f64], nf: usize, dst: &mut [f64]) {
    let nc = nf.div_ceil(2);
    for ci in 1..nc - 1 {
        for cj in 1..nc - 1 {
            let g = src[ci * nc + cj];
            if g == 0.0 {
                continue;
            }
            let (fi, fj) = (2 * ci, 2 * cj);
            for (a, wa) in FW.iter().enumerate() {
                let row = (fi + a - 1) * nf + fj - 1;
                dst[row] += wa * 0.25 * g;
                dst[row + 1] += wa * 0.5 * g;
                dst[row + 2] += wa * 0.25 * g;
            }
        }
    }
}

/// A coarse point is interior iff all nine fine points of its
/// full-weighting footprint are interior.
pub fn coarsen_mask(mask: &InteriorMask) -> Result<InteriorMask> {
    let nf = mask.n();
    let nc = coarser_side(nf).ok_or(Error::GridTooSmall { n: nf, min: 9 })?;
    InteriorMask::from_fn(nc, |ci, cj| {
        if ci == 0 || cj == 0 || ci == nc - 1 || cj == nc - 1 {
            return false;
        }
        (0..3).all(|a| (0..3).all(|b| mask.is_interior(2 * ci + a - 1, 2 * cj + b - 1)))
    })
}

fn coarsen_problem(p: &PdeProblem) -> Result<PdeProblem> {
    let mask = coarsen_mask(p.mask())?;
    let zero = GridField::zeros(mask.n())?;
    let coeffs = match p.coefficients() {
        Coefficients::Poisson => Coefficients::Poisson,
        Coefficients::Helmholtz { k2 } => Coefficients::Helmholtz {
            k2: restrict_full_weighting(k2)?.scale(4.0),
        },
        Coefficients::ConvDiffReact { vx, vy, alpha, beta } => Coefficients::ConvDiffReact {
            vx: restrict_full_weighting(vx)?.scale(2.0),
            vy: restrict_full_weighting(vy)?.scale(2.0),
            alpha: *alpha,
            beta: 4.0 * beta,
        },
    };
    PdeProblem::new(zero.clone(), zero, mask, coeffs)
}

/// Homogeneous problems for every level, finest first.
#[derive(Clone, Debug)]
pub struct MgHierarchy {
    levels: Vec<PdeProblem>,
    omega: f64,
}

impl MgHierarchy {
    /// Coarsens down to side 5 or `max_levels` levels. Stops early if a
    /// rediscretized coarse operator violates its family invariants.
    pub fn build(problem: &PdeProblem, max_levels: Option<usize>) -> Self {
        let cap = max_levels.unwrap_or(usize::MAX).max(1);
        let mut levels = vec![problem.homogeneous()];
        while levels.len() < cap {
            let last = levels.last().unwrap();
            if coarser_side(last.n()).is_none() {
                break;
            }
            match coarsen_problem(last) {
                Ok(c) => levels.push(c),
                Err(_) => break,
            }
        }
        Self {
            levels,
            omega: DEFAULT_OMEGA,
        }
    }

    /// Overrides the smoother damping; `1.0` gives plain masked Jacobi.
    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = omega;
        self
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, l: usize) -> &PdeProblem {
        &self.levels[l]
    }

    pub fn sides(&self) -> Vec<usize> {
        self.levels.iter().map(|p| p.n()).collect()
    }
}

/// One V-cycle with `pre` and `post` masked Jacobi sweeps per level.
pub fn vcycle(
    problem: &PdeProblem,
    u: &GridField,
    hierarchy: &MgHierarchy,
    pre: usize,
    post: usize,
) -> Result<GridField> {
    u.check_same(problem.n())?;
    if hierarchy.level(0).n() != problem.n() {
        return Err(Error::DimensionMismatch {
            expected: problem.n(),
            actual: hierarchy.level(0).n(),
        });
    }
    cycle(problem, u.clone(), hierarchy, 0, pre, post)
}

fn cycle(
    p: &PdeProblem,
    u: GridField,
    h: &MgHierarchy,
    level: usize,
    pre: usize,
    post: usize,
) -> Result<GridField> {
    if level + 1 == h.depth() {
        let sweeps = if level == 0 { pre + post } else { COARSEST_SWEEPS };
        return Ok(damped_smooth(p, u, sweeps, h.omega));
    }
    let u = damped_smooth(p, u, pre, h.omega);
    let r = p.residual_unchecked(&u);
    let coarse = h.level(level + 1);
    let rc = restrict_full_weighting(&r)?.scale(4.0);
    let zero = GridField::zeros(coarse.n())?;
    let cp = coarse.with_data(rc, zero.clone())?;
    let ec = cycle(&cp, zero, h, level + 1, pre, post)?;
    let mut corr = prolong_bilinear(&ec);
    p.mask().gate_in_place(corr.data_mut());
    let u = u.add(&corr)?;
    Ok(damped_smooth(p, u, post, h.omega))
}

/// `u <- u + omega (smooth(u) - u)`, repeated. Boundary entries stay `b`
/// exactly since `smooth(u) - u` vanishes there.
fn damped_smooth(p: &PdeProblem, mut u: GridField, sweeps: usize, omega: f64) -> GridField {
    for _ in 0..sweeps {
        let s = p.smooth_unchecked(&u);
        if omega == 1.0 {
            u = s;
        } else {
            for (uv, sv) in u.data_mut().iter_mut().zip(s.as_slice()) {
                *uv += omega * (sv - *uv);
            }
        }
    }
    u
}
