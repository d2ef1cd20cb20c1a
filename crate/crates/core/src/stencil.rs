//! Masked convolutional smoothers and residual operators for the three PDE
//! families, all on unit lattice spacing.
//!
//! Every kernel is applied as a zero-padded cross-correlation with the
//! entries laid out exactly as written below. Under that orientation `JX`
//! and `JY` are negated central differences (x along columns, y pointing
//! towards row 0), and the convection-diffusion-reaction formulas absorb
//! the sign. The operator `A` of each family is the one for which
//! `residual(u) = (1 - M)(f - A u)`:
//!
//! * Poisson: `A u = u * L`
//! * Helmholtz: `A u = u * L + k2 u`
//! * convection-diffusion-reaction: `A u = -vx (u * JX) - vy (u * JY) - alpha (u * L) + beta u`
//!
//! The Jacobi diagonal `P` is `-4`, `k2 - 4` and `4 alpha + beta` respectively.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{masked_compose, GridField, InteriorMask, Kernel3x3};

/// Jacobi neighbor average.
pub const J: Kernel3x3 = Kernel3x3([0.0, 0.25, 0.0, 0.25, 0.0, 0.25, 0.0, 0.25, 0.0]);
/// Five-point Laplacian.
pub const L: Kernel3x3 = Kernel3x3([0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0]);
pub const JX: Kernel3x3 = Kernel3x3([0.0, 0.0, 0.0, 0.5, 0.0, -0.5, 0.0, 0.0, 0.0]);
pub const JY: Kernel3x3 = Kernel3x3([0.0, -0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.0]);

/// `4 J`: plain sum of the four neighbors.
const J4: Kernel3x3 = Kernel3x3([0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);

/// `dst += k * src` (zero-padded cross-correlation) on an `n x n` grid.
pub(crate) fn correlate_acc(src: &[f64], n: usize, k: &Kernel3x3, dst: &mut [f64]) {
    debug_assert_eq!(src.len(), n * n);
    debug_assert_eq!(dst.len(), n * n);
    for a in 0..3 {
        for b in 0..3 {
            let w = k.at(a, b);
            if w != 0.0 {
                correlate_tap(src, n, a, b, w, dst);
            }
        }
    }
}

/// Adds the contribution of a single kernel tap `(a, b)` with weight `w`.
#[inline]
pub(crate) fn correlate_tap(src: &[f64], n: usize, a: usize, b: usize, w: f64, dst: &mut [f64]) {
    // output (i, j) reads input (i + a - 1, j + b - 1)
    let (i0, i1) = (if a == 0 { 1 } else { 0 }, if a == 2 { n - 1 } else { n });
    let (j0, j1) = (if b == 0 { 1 } else { 0 }, if b == 2 { n - 1 } else { n });
    for i in i0..i1 {
        let si = i + a - 1;
        let d = &mut dst[i * n + j0..i * n + j1];
        let s = &src[si * n + j0 + b - 1..si * n + j1 + b - 1];
        for (dv, &sv) in d.iter_mut().zip(s) {
            *dv += w * sv;
        }
    }
}

/// Zero-padded 3x3 cross-correlation of `x` with `k`.
pub fn conv3x3(x: &GridField, k: &Kernel3x3) -> GridField {
    let n = x.n();
    let mut out = vec![0.0; n * n];
    correlate_acc(x.as_slice(), n, k, &mut out);
    GridField::from_raw(n, out)
}

/// Adjoint of [`conv3x3`] under the Euclidean inner product.
pub fn conv3x3_adjoint(g: &GridField, k: &Kernel3x3) -> GridField {
    conv3x3(g, &k.flipped())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PdeKind {
    Poisson,
    Helmholtz,
    ConvDiffReact,
}

impl PdeKind {
    pub fn name(self) -> &'static str {
        match self {
            PdeKind::Poisson => "poisson",
            PdeKind::Helmholtz => "helmholtz",
            PdeKind::ConvDiffReact => "conv_diff_react",
        }
    }
}

impl std::str::FromStr for PdeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poisson" => Ok(PdeKind::Poisson),
            "helmholtz" => Ok(PdeKind::Helmholtz),
            "conv_diff_react" | "cdr" | "diffusion" => Ok(PdeKind::ConvDiffReact),
            other => Err(Error::Config(format!("unknown PDE family '{other}'"))),
        }
    }
}

impl std::fmt::Display for PdeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Family-specific coefficients.
#[derive(Clone, Debug, PartialEq)]
pub enum Coefficients {
    Poisson,
    Helmholtz {
        k2: GridField,
    },
    ConvDiffReact {
        vx: GridField,
        vy: GridField,
        alpha: f64,
        beta: f64,
    },
}

/// A masked Dirichlet problem `(1 - M) A u = (1 - M) f`, `M u = M b`.
#[derive(Clone, Debug, PartialEq)]
pub struct PdeProblem {
    f: GridField,
    b: GridField,
    mask: InteriorMask,
    coeffs: Coefficients,
}

impl PdeProblem {
    pub fn new(f: GridField, b: GridField, mask: InteriorMask, coeffs: Coefficients) -> Result<Self> {
        let n = mask.n();
        f.check_same(n)?;
        b.check_same(n)?;
        match &coeffs {
            Coefficients::Poisson => {}
            Coefficients::Helmholtz { k2 } => {
                k2.check_same(n)?;
                let bad = k2
                    .as_slice()
                    .iter()
                    .zip(mask.as_slice())
                    .position(|(&k, &m)| m != 0.0 && 4.0 - k == 0.0);
                if let Some(p) = bad {
                    return Err(Error::InvalidProblem(format!(
                        "k2 = 4 at interior point ({}, {})",
                        p / n,
                        p % n
                    )));
                }
            }
            Coefficients::ConvDiffReact { vx, vy, alpha, beta } => {
                vx.check_same(n)?;
                vy.check_same(n)?;
                if !alpha.is_finite() || !beta.is_finite() {
                    return Err(Error::InvalidProblem("alpha and beta must be finite".into()));
                }
                if 4.0 * alpha + beta == 0.0 {
                    return Err(Error::InvalidProblem("4 alpha + beta must be nonzero".into()));
                }
            }
        }
        Ok(Self { f, b, mask, coeffs })
    }

    pub fn poisson(f: GridField, b: GridField, mask: InteriorMask) -> Result<Self> {
        Self::new(f, b, mask, Coefficients::Poisson)
    }

    pub fn helmholtz(f: GridField, b: GridField, mask: InteriorMask, k2: GridField) -> Result<Self> {
        Self::new(f, b, mask, Coefficients::Helmholtz { k2 })
    }

    pub fn conv_diff_react(
        f: GridField,
        b: GridField,
        mask: InteriorMask,
        vx: GridField,
        vy: GridField,
        alpha: f64,
        beta: f64,
    ) -> Result<Self> {
        Self::new(f, b, mask, Coefficients::ConvDiffReact { vx, vy, alpha, beta })
    }

    pub fn n(&self) -> usize {
        self.mask.n()
    }

    pub fn kind(&self) -> PdeKind {
        match self.coeffs {
            Coefficients::Poisson => PdeKind::Poisson,
            Coefficients::Helmholtz { .. } => PdeKind::Helmholtz,
            Coefficients::ConvDiffReact { .. } => PdeKind::ConvDiffReact,
        }
    }

    pub fn f(&self) -> &GridField {
        &self.f
    }

    pub fn b(&self) -> &GridField {
        &self.b
    }

    pub fn mask(&self) -> &InteriorMask {
        &self.mask
    }

    pub fn coefficients(&self) -> &Coefficients {
        &self.coeffs
    }

    /// Same operator and mask with new data fields.
    pub fn with_data(&self, f: GridField, b: GridField) -> Result<Self> {
        Self::new(f, b, self.mask.clone(), self.coeffs.clone())
    }

    /// Same operator and mask with `f = 0`, `b = 0`: the smoother of this
    /// problem applies the linear update operator `G` alone.
    pub fn homogeneous(&self) -> Self {
        let zero = GridField::from_raw(self.n(), vec![0.0; self.n() * self.n()]);
        Self {
            f: zero.clone(),
            b: zero,
            mask: self.mask.clone(),
            coeffs: self.coeffs.clone(),
        }
    }

    /// The Jacobi diagonal `P` at every grid point.
    pub fn diagonal(&self) -> Vec<f64> {
        let nn = self.n() * self.n();
        match &self.coeffs {
            Coefficients::Poisson => vec![-4.0; nn],
            Coefficients::Helmholtz { k2 } => k2.as_slice().iter().map(|&k| k - 4.0).collect(),
            Coefficients::ConvDiffReact { alpha, beta, .. } => vec![4.0 * alpha + beta; nn],
        }
    }

    /// Ungated `A u` on the whole grid.
    pub(crate) fn apply_a_raw(&self, u: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut t = vec![0.0; n * n];
        correlate_acc(u, n, &L, &mut t);
        match &self.coeffs {
            Coefficients::Poisson => t,
            Coefficients::Helmholtz { k2 } => {
                for ((tv, &kv), &uv) in t.iter_mut().zip(k2.as_slice()).zip(u) {
                    *tv += kv * uv;
                }
                t
            }
            Coefficients::ConvDiffReact { vx, vy, alpha, beta } => {
                let mut cx = vec![0.0; n * n];
                let mut cy = vec![0.0; n * n];
                correlate_acc(u, n, &JX, &mut cx);
                correlate_acc(u, n, &JY, &mut cy);
                (0..n * n)
                    .map(|p| {
                        -vx.as_slice()[p] * cx[p] - vy.as_slice()[p] * cy[p] - alpha * t[p]
                            + beta * u[p]
                    })
                    .collect()
            }
        }
    }

    /// Ungated `A^T g` on the whole grid.
    pub(crate) fn apply_a_adjoint_raw(&self, g: &[f64]) -> Vec<f64> {
        let n = self.n();
        let mut t = vec![0.0; n * n];
        correlate_acc(g, n, &L.flipped(), &mut t);
        match &self.coeffs {
            Coefficients::Poisson => t,
            Coefficients::Helmholtz { k2 } => {
                for ((tv, &kv), &gv) in t.iter_mut().zip(k2.as_slice()).zip(g) {
                    *tv += kv * gv;
                }
                t
            }
            Coefficients::ConvDiffReact { vx, vy, alpha, beta } => {
                let wx: Vec<f64> = g.iter().zip(vx.as_slice()).map(|(a, b)| a * b).collect();
                let wy: Vec<f64> = g.iter().zip(vy.as_slice()).map(|(a, b)| a * b).collect();
                let mut cx = vec![0.0; n * n];
                let mut cy = vec![0.0; n * n];
                correlate_acc(&wx, n, &JX.flipped(), &mut cx);
                correlate_acc(&wy, n, &JY.flipped(), &mut cy);
                (0..n * n)
                    .map(|p| -cx[p] - cy[p] - alpha * t[p] + beta * g[p])
                    .collect()
            }
        }
    }

    /// One masked Jacobi sweep. Boundary entries of the result are `b`
    /// exactly.
    pub fn smooth(&self, u: &GridField) -> Result<GridField> {
        u.check_same(self.n())?;
        Ok(self.smooth_unchecked(u))
    }

    pub(crate) fn smooth_unchecked(&self, u: &GridField) -> GridField {
        let n = self.n();
        let (us, fs) = (u.as_slice(), self.f.as_slice());
        let interior: Vec<f64> = match &self.coeffs {
            Coefficients::Poisson => {
                let mut t = vec![0.0; n * n];
                correlate_acc(us, n, &J, &mut t);
                t.iter().zip(fs).map(|(&tv, &fv)| tv - 0.25 * fv).collect()
            }
            Coefficients::Helmholtz { k2 } => {
                let mut t = vec![0.0; n * n];
                correlate_acc(us, n, &J4, &mut t);
                t.iter()
                    .zip(fs)
                    .zip(k2.as_slice())
                    .map(|((&tv, &fv), &kv)| (1.0 / (4.0 - kv)) * (tv - fv))
                    .collect()
            }
            Coefficients::ConvDiffReact { vx, vy, alpha, beta } => {
                let mut t = vec![0.0; n * n];
                let mut cx = vec![0.0; n * n];
                let mut cy = vec![0.0; n * n];
                correlate_acc(us, n, &J4, &mut t);
                correlate_acc(us, n, &JX, &mut cx);
                correlate_acc(us, n, &JY, &mut cy);
                let s = 1.0 / (4.0 * alpha + beta);
                (0..n * n)
                    .map(|p| {
                        s * (alpha * t[p]
                            + vx.as_slice()[p] * cx[p]
                            + vy.as_slice()[p] * cy[p]
                            + fs[p])
                    })
                    .collect()
            }
        };
        let data = interior
            .into_iter()
            .zip(self.b.as_slice())
            .zip(self.mask.as_slice())
            .map(|((x, &bv), &m)| if m != 0.0 { x } else { bv })
            .collect();
        GridField::from_raw(n, data)
    }

    /// Applies the smoother `count` times.
    pub fn smooth_n(&self, u: &GridField, count: usize) -> Result<GridField> {
        u.check_same(self.n())?;
        let mut u = u.clone();
        for _ in 0..count {
            u = self.smooth_unchecked(&u);
        }
        Ok(u)
    }

    /// Masked residual `(1 - M)(f - A u)`; zero at every boundary point.
    pub fn residual(&self, u: &GridField) -> Result<GridField> {
        u.check_same(self.n())?;
        Ok(self.residual_unchecked(u))
    }

    pub(crate) fn residual_unchecked(&self, u: &GridField) -> GridField {
        let n = self.n();
        let (us, fs) = (u.as_slice(), self.f.as_slice());
        let mut t = vec![0.0; n * n];
        correlate_acc(us, n, &L, &mut t);
        let mut r: Vec<f64> = match &self.coeffs {
            Coefficients::Poisson => fs.iter().zip(&t).map(|(&fv, &tv)| fv - tv).collect(),
            Coefficients::Helmholtz { k2 } => (0..n * n)
                .map(|p| fs[p] - t[p] - k2.as_slice()[p] * us[p])
                .collect(),
            Coefficients::ConvDiffReact { vx, vy, alpha, beta } => {
                let mut cx = vec![0.0; n * n];
                let mut cy = vec![0.0; n * n];
                correlate_acc(us, n, &JX, &mut cx);
                correlate_acc(us, n, &JY, &mut cy);
                (0..n * n)
                    .map(|p| {
                        fs[p] + vx.as_slice()[p] * cx[p] + vy.as_slice()[p] * cy[p]
                            + alpha * t[p]
                            - beta * us[p]
                    })
                    .collect()
            }
        };
        self.mask.gate_in_place(&mut r);
        GridField::from_raw(n, r)
    }

    /// `(1 - M) A u`.
    pub fn apply_operator(&self, u: &GridField) -> Result<GridField> {
        u.check_same(self.n())?;
        let mut au = self.apply_a_raw(u.as_slice());
        self.mask.gate_in_place(&mut au);
        Ok(GridField::from_raw(self.n(), au))
    }

    /// Initial iterate: `b` on the boundary, zero in the interior.
    pub fn zero_interior_guess(&self) -> GridField {
        let zero = GridField::from_raw(self.n(), vec![0.0; self.n() * self.n()]);
        masked_compose(&zero, &self.b, &self.mask).expect("sides checked at construction")
    }

    /// Right-hand side of the reduced system over interior unknowns:
    /// `(1 - M)(f - A (M b))`, i.e. `f` with the boundary values moved to
    /// the right-hand side. Relative residuals are measured against it.
    pub fn effective_rhs(&self) -> GridField {
        self.residual_unchecked(&self.zero_interior_guess())
    }

    /// Adjoint of the linear part of [`PdeProblem::smooth`]:
    /// `G = (1 - M)(I - P^-1 A)`, so `G^T g = g' - A^T (P^-1 g')` with `g' = (1 - M) g`.
    pub(crate) fn smooth_linear_adjoint(&self, g: &[f64], diag: &[f64]) -> Vec<f64> {
        let mut gated = g.to_vec();
        self.mask.gate_in_place(&mut gated);
        let scaled: Vec<f64> = gated.iter().zip(diag).map(|(&v, &d)| v / d).collect();
        let at = self.apply_a_adjoint_raw(&scaled);
        gated.iter().zip(&at).map(|(&a, &b)| a - b).collect()
    }

    /// Adjoint of the linear part of [`PdeProblem::residual`], `u -> -(1 - M) A u`.
    pub(crate) fn residual_linear_adjoint(&self, g: &[f64]) -> Vec<f64> {
        let mut gated = g.to_vec();
        self.mask.gate_in_place(&mut gated);
        self.apply_a_adjoint_raw(&gated).into_iter().map(|v| -v).collect()
    }
}
