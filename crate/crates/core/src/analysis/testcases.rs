//! Benchmark geometries.
//!
//! Coordinates are normalized: `x = j / (n - 1)` runs along columns and
//! `y = i / (n - 1)` along rows, both in `[0, 1]`.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{check_side, GridField, InteriorMask};
use crate::io::read_mask;
use crate::stencil::{Coefficients, PdeKind, PdeProblem};
use crate::train::boundary_components;

pub const TESTCASES: &[&str] = &[
    "square",
    "poisson_square",
    "l_shape",
    "star",
    "donut",
    "noisy",
    "sharp_feature",
];

/// Corners of the L-shaped domain, counter-clockwise: the square
/// `[0.11, 0.89]^2` with the block `x > 0.53, y < 0.53` removed.
pub const L_SHAPE: [(f64, f64); 6] = [
    (0.11, 0.11),
    (0.53, 0.11),
    (0.53, 0.53),
    (0.89, 0.53),
    (0.89, 0.89),
    (0.11, 0.89),
];

#[derive(Clone, Debug, PartialEq)]
pub struct TestcaseOptions {
    pub family: PdeKind,
    /// Drives the random parts (noise, coefficient fields).
    pub seed: u64,
    pub star_points: usize,
    /// Upper bound of the random Helmholtz `k^2` field.
    pub k2_max: f64,
}

impl Default for TestcaseOptions {
    fn default() -> Self {
        Self {
            family: PdeKind::Poisson,
            seed: 0,
            star_points: 5,
            k2_max: 2.0,
        }
    }
}

fn coord(n: usize, k: usize) -> f64 {
    k as f64 / (n - 1) as f64
}

fn smooth_boundary(x: f64, y: f64) -> f64 {
    (2.0 * PI * x).cos() * (PI * y).sin() + 0.5 * x - 0.25
}

/// Vertices of a `points`-pointed star centered in the unit square.
pub fn star_polygon(points: usize) -> Vec<(f64, f64)> {
    let (ro, ri) = (0.42, 0.18);
    (0..2 * points)
        .map(|k| {
            let r = if k % 2 == 0 { ro } else { ri };
            let t = PI * k as f64 / points as f64 - PI / 2.0;
            (0.5 + r * t.cos(), 0.5 + r * t.sin())
        })
        .collect()
}

/// Crossing-number containment test.
pub fn point_in_polygon(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

/// Interior mask of a named geometry.
pub fn testcase_mask(name: &str, n: usize, opts: &TestcaseOptions) -> Result<InteriorMask> {
    check_side(n)?;
    match name {
        "square" | "poisson_square" | "sharp_feature" => InteriorMask::full(n),
        "l_shape" => InteriorMask::from_fn_clipped(n, |i, j| {
            let (x, y) = (coord(n, j), coord(n, i));
            let in_square = x > 0.11 && x < 0.89 && y > 0.11 && y < 0.89;
            in_square && !(x > 0.53 && y < 0.53)
        }),
        "star" => {
            if opts.star_points < 3 {
                return Err(Error::Config("a star needs at least 3 points".into()));
            }
            let poly = star_polygon(opts.star_points);
            InteriorMask::from_fn_clipped(n, |i, j| point_in_polygon(&poly, coord(n, j), coord(n, i)))
        }
        "donut" => InteriorMask::from_fn_clipped(n, |i, j| {
            let d2 = (coord(n, j) - 0.5).powi(2) + (coord(n, i) - 0.5).powi(2);
            d2 < 0.42 * 0.42 && d2 > 0.18 * 0.18
        }),
        "noisy" => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x0015e);
            InteriorMask::from_fn_clipped(n, |_, _| rng.random_range(0.0..1.0) >= 0.03)
        }
        other => {
            if let Some(path) = other.strip_prefix("pgm:") {
                let m = read_mask(Path::new(path))?;
                if m.n() != n {
                    return Err(Error::DimensionMismatch {
                        expected: n,
                        actual: m.n(),
                    });
                }
                Ok(m)
            } else {
                Err(Error::Config(format!(
                    "unknown testcase '{other}' (known: {}, or pgm:<path>)",
                    TESTCASES.join(", ")
                )))
            }
        }
    }
}

/// Boundary values along the frame for the sharp-feature case: two narrow
/// tents and two wide Gaussian bumps, parametrized by arclength.
fn sharp_feature_boundary(x: f64, y: f64) -> f64 {
    // position along the perimeter in [0, 4)
    let s = if y == 0.0 {
        x
    } else if x == 1.0 {
        1.0 + y
    } else if y == 1.0 {
        3.0 - x
    } else {
        4.0 - y
    };
    let tent = |c: f64, w: f64| (1.0 - (s - c).abs() / w).max(0.0);
    let bump = |c: f64, w: f64| (-((s - c) / w).powi(2)).exp();
    tent(0.5, 0.03) - tent(2.5, 0.03) + 0.8 * bump(1.5, 0.2) - 0.6 * bump(3.5, 0.25)
}

/// Builds a named benchmark problem.
pub fn gen_testcase(name: &str, n: usize) -> Result<PdeProblem> {
    gen_testcase_with(name, n, &TestcaseOptions::default())
}

pub fn gen_testcase_with(name: &str, n: usize, opts: &TestcaseOptions) -> Result<PdeProblem> {
    let mask = testcase_mask(name, n, opts)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let (b, f) = match name {
        "poisson_square" => (GridField::zeros(n)?, GridField::filled(n, 1.0)?),
        "donut" => {
            let (label, _) = boundary_components(&mask);
            // frame side +1, hole -1
            let outer = label[0];
            let b = label
                .iter()
                .map(|&l| match l {
                    usize::MAX => 0.0,
                    l if l == outer => 1.0,
                    _ => -1.0,
                })
                .collect();
            (GridField::from_vec(n, b)?, GridField::zeros(n)?)
        }
        "noisy" => {
            let b = GridField::from_fn(n, |i, j| {
                if mask.is_interior(i, j) {
                    0.0
                } else {
                    rng.random_range(-1.0..=1.0)
                }
            })?;
            (b, GridField::zeros(n)?)
        }
        "sharp_feature" => (
            GridField::from_fn(n, |i, j| sharp_feature_boundary(coord(n, j), coord(n, i)))?,
            GridField::zeros(n)?,
        ),
        _ => (
            GridField::from_fn(n, |i, j| smooth_boundary(coord(n, j), coord(n, i)))?,
            GridField::zeros(n)?,
        ),
    };
    let coeffs = match opts.family {
        PdeKind::Poisson => Coefficients::Poisson,
        PdeKind::Helmholtz => Coefficients::Helmholtz {
            k2: GridField::from_fn(n, |_, _| rng.random_range(0.0..=opts.k2_max))?,
        },
        PdeKind::ConvDiffReact => Coefficients::ConvDiffReact {
            vx: GridField::from_fn(n, |_, _| rng.random_range(-1.0..=1.0))?,
            vy: GridField::from_fn(n, |_, _| rng.random_range(-1.0..=1.0))?,
            alpha: 1.0,
            beta: 0.5,
        },
    };
    PdeProblem::new(f, b, mask, coeffs)
}
