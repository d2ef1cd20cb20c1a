//! Field and mask types shared by every solver component.
//!
//! All fields are square `n x n` grids stored row-major in double precision,
//! with `n = 2^k + 1` and `k >= 2` so every coarsening step halves cleanly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible grid side (`k = 2`).
pub const MIN_SIDE: usize = 5;

/// Returns true when `n = 2^k + 1` for some `k >= 2`.
pub fn is_valid_side(n: usize) -> bool {
    n >= MIN_SIDE && (n - 1).is_power_of_two()
}

pub(crate) fn check_side(n: usize) -> Result<()> {
    if is_valid_side(n) {
        Ok(())
    } else {
        Err(Error::InvalidSize(n))
    }
}

/// Side length of the next coarser grid, if it is still admissible.
pub fn coarser_side(n: usize) -> Option<usize> {
    let c = n.div_ceil(2);
    is_valid_side(c).then_some(c)
}

/// An `n x n` scalar field.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    n: usize,
    data: Vec<f64>,
}

impl GridField {
    pub fn zeros(n: usize) -> Result<Self> {
        Self::filled(n, 0.0)
    }

    pub fn filled(n: usize, value: f64) -> Result<Self> {
        check_side(n)?;
        if !value.is_finite() {
            return Err(Error::NonFinite(0));
        }
        Ok(Self {
            n,
            data: vec![value; n * n],
        })
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        check_side(n)?;
        if data.len() != n * n {
            return Err(Error::DataLength {
                n,
                expected: n * n,
                actual: data.len(),
            });
        }
        if let Some(idx) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(idx));
        }
        Ok(Self { n, data })
    }

    /// Builds a field from `f(row, col)`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        check_side(n)?;
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self::from_vec(n, data)
    }

    /// Internal constructor for operations whose output is finite by
    /// construction from finite inputs of a validated side.
    pub(crate) fn from_raw(n: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), n * n);
        Self { n, data }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn check_same(&self, n: usize) -> Result<()> {
        if self.n == n {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: n,
                actual: self.n,
            })
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridField {
        GridField::from_raw(self.n, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &GridField, f: impl Fn(f64, f64) -> f64) -> Result<GridField> {
        other.check_same(self.n)?;
        Ok(GridField::from_raw(
            self.n,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &GridField) -> Result<GridField> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &GridField) -> Result<GridField> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, a: f64) -> GridField {
        self.map(|v| a * v)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Indicator of interior (unknown) points: 1 marks interior, 0 marks a
/// Dirichlet boundary point. The outer frame is always boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct InteriorMask {
    n: usize,
    data: Vec<f64>,
}

impl InteriorMask {
    /// Every non-frame point is interior.
    pub fn full(n: usize) -> Result<Self> {
        Self::from_fn(n, |i, j| i > 0 && j > 0 && i + 1 < n && j + 1 < n)
    }

    /// No interior points at all.
    pub fn empty(n: usize) -> Result<Self> {
        Self::from_fn(n, |_, _| false)
    }

    /// Builds a mask from a predicate. Returns an error if the predicate
    /// marks any frame point as interior.
    pub fn from_fn(n: usize, mut interior: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        check_side(n)?;
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(if interior(i, j) { 1.0 } else { 0.0 });
            }
        }
        Self::from_vec(n, data)
    }

    /// Like [`InteriorMask::from_fn`] but forces the frame to boundary.
    pub fn from_fn_clipped(n: usize, mut interior: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        Self::from_fn(n, |i, j| {
            i > 0 && j > 0 && i + 1 < n && j + 1 < n && interior(i, j)
        })
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        check_side(n)?;
        if data.len() != n * n {
            return Err(Error::DataLength {
                n,
                expected: n * n,
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidMaskValue {
                index,
                value: data[index],
            });
        }
        let frame_interior = (0..n).any(|t| {
            data[t] != 0.0
                || data[(n - 1) * n + t] != 0.0
                || data[t * n] != 0.0
                || data[t * n + n - 1] != 0.0
        });
        if frame_interior {
            return Err(Error::MaskFrameNotBoundary);
        }
        Ok(Self { n, data })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn is_interior(&self, i: usize, j: usize) -> bool {
        self.data[i * self.n + j] != 0.0
    }

    /// Mask values as 0.0 / 1.0, row-major.
    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn interior_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    pub fn to_field(&self) -> GridField {
        GridField::from_raw(self.n, self.data.clone())
    }

    /// Multiplies `x` by the mask in place.
    #[inline]
    pub(crate) fn gate_in_place(&self, x: &mut [f64]) {
        debug_assert_eq!(x.len(), self.data.len());
        for (v, &m) in x.iter_mut().zip(&self.data) {
            *v *= m;
        }
    }

    pub fn gate(&self, x: &GridField) -> Result<GridField> {
        x.check_same(self.n)?;
        let mut out = x.clone();
        self.gate_in_place(out.data_mut());
        Ok(out)
    }
}

/// A 3x3 stencil, row-major. Applied as a cross-correlation: entry `(a, b)`
/// multiplies the input at offset `(a - 1, b - 1)` from the output point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel3x3(pub [f64; 9]);

impl Kernel3x3 {
    #[inline]
    pub fn at(&self, a: usize, b: usize) -> f64 {
        self.0[a * 3 + b]
    }

    pub fn scaled(&self, s: f64) -> Kernel3x3 {
        Kernel3x3(self.0.map(|v| v * s))
    }

    /// Kernel rotated by 180 degrees; correlating with it applies the
    /// adjoint of correlating with `self`.
    pub fn flipped(&self) -> Kernel3x3 {
        let mut k = self.0;
        k.reverse();
        Kernel3x3(k)
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

/// Takes `x` at interior points and `b` at boundary points.
pub fn masked_compose(x: &GridField, b: &GridField, mask: &InteriorMask) -> Result<GridField> {
    let n = mask.n();
    x.check_same(n)?;
    b.check_same(n)?;
    let data = x
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .zip(mask.as_slice())
        .map(|((&xv, &bv), &m)| if m != 0.0 { xv } else { bv })
        .collect();
    Ok(GridField::from_raw(n, data))
}

pub fn l2_norm(x: &GridField) -> f64 {
    x.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `||r|| / ||f_eff||`, where `f_eff` is the effective right-hand side of the
/// masked system (see [`crate::stencil::effective_rhs`]).
pub fn relative_residual(r: &GridField, f_eff: &GridField) -> Result<f64> {
    r.check_same(f_eff.n())?;
    let denom = l2_norm(f_eff);
    if denom == 0.0 {
        return Err(Error::DegenerateRhs);
    }
    Ok(l2_norm(r) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(n: usize, rng: &mut ChaCha8Rng) -> GridField {
        GridField::from_fn(n, |_, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    fn random_mask(n: usize, rng: &mut ChaCha8Rng) -> InteriorMask {
        InteriorMask::from_fn_clipped(n, |_, _| rng.random_bool(0.6)).unwrap()
    }

    #[test]
    fn valid_sides() {
        assert!(is_valid_side(5));
        assert!(is_valid_side(257));
        assert!(!is_valid_side(3));
        assert!(!is_valid_side(6));
        assert!(!is_valid_side(256));
        assert_eq!(coarser_side(9), Some(5));
        assert_eq!(coarser_side(5), None);
        assert!(matches!(GridField::zeros(6), Err(Error::InvalidSize(6))));
    }

    #[test]
    fn rejects_non_finite() {
        let mut v = vec![0.0; 25];
        v[7] = f64::NAN;
        assert!(matches!(GridField::from_vec(5, v), Err(Error::NonFinite(7))));
    }

    #[test]
    fn mask_frame_must_be_boundary() {
        let r = InteriorMask::from_fn(5, |i, _| i == 0);
        assert!(matches!(r, Err(Error::MaskFrameNotBoundary)));
        let m = InteriorMask::full(9).unwrap();
        assert_eq!(m.interior_count(), 49);
    }

    #[test]
    fn compose_all_boundary() {
        let x = GridField::filled(9, 5.0).unwrap();
        let b = GridField::filled(9, 2.0).unwrap();
        let m = InteriorMask::empty(9).unwrap();
        let out = masked_compose(&x, &b, &m).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn compose_single_interior_point() {
        let x = GridField::filled(9, 5.0).unwrap();
        let b = GridField::filled(9, 2.0).unwrap();
        let m = InteriorMask::from_fn(9, |i, j| i == 3 && j == 5).unwrap();
        let out = masked_compose(&x, &b, &m).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                let expect = if (i, j) == (3, 5) { 5.0 } else { 2.0 };
                assert_eq!(out.get(i, j), expect);
            }
        }
    }

    #[test]
    fn compose_matches_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_field(9, &mut rng);
        let b = random_field(9, &mut rng);
        let m = random_mask(9, &mut rng);
        let out = masked_compose(&x, &b, &m).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                let expect = if m.is_interior(i, j) { x.get(i, j) } else { b.get(i, j) };
                assert_eq!(out.get(i, j).to_bits(), expect.to_bits());
            }
        }
    }

    #[test]
    fn compose_dimension_mismatch() {
        let x = GridField::zeros(9).unwrap();
        let b = GridField::zeros(5).unwrap();
        let m = InteriorMask::full(9).unwrap();
        assert!(matches!(
            masked_compose(&x, &b, &m),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn norms() {
        assert_eq!(l2_norm(&GridField::zeros(5).unwrap()), 0.0);
        let one = GridField::from_fn(5, |i, j| if (i, j) == (2, 2) { 3.0 } else { 0.0 }).unwrap();
        assert_eq!(l2_norm(&one), 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_field(5, &mut rng);
        let mut s = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                s += x.get(i, j) * x.get(i, j);
            }
        }
        assert!((l2_norm(&x) - s.sqrt()).abs() <= 1e-15);
    }

    #[test]
    fn relative_residual_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = random_field(9, &mut rng);
        let zero = GridField::zeros(9).unwrap();
        assert_eq!(relative_residual(&zero, &f).unwrap(), 0.0);
        assert_eq!(relative_residual(&f, &f).unwrap(), 1.0);
        assert!(matches!(
            relative_residual(&f, &zero),
            Err(Error::DegenerateRhs)
        ));

        let r = random_field(9, &mut rng);
        let (mut sr, mut sf) = (0.0, 0.0);
        for i in 0..9 {
            for j in 0..9 {
                sr += r.get(i, j).powi(2);
                sf += f.get(i, j).powi(2);
            }
        }
        let oracle = sr.sqrt() / sf.sqrt();
        assert!((relative_residual(&r, &f).unwrap() - oracle).abs() <= 1e-14);
    }

    #[test]
    fn kernel_flip() {
        let k = Kernel3x3([1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        assert_eq!(k.flipped().0, [9., 8., 7., 6., 5., 4., 3., 2., 1.]);
        assert_eq!(k.flipped().flipped(), k);
    }

    proptest! {
        #[test]
        fn compose_is_idempotent(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_field(9, &mut rng);
            let b = random_field(9, &mut rng);
            let m = random_mask(9, &mut rng);
            let once = masked_compose(&x, &b, &m).unwrap();
            let twice = masked_compose(&once, &b, &m).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
