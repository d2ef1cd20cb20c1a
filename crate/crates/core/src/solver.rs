//! The outer UGrid iteration, plain-Jacobi and classical-multigrid drivers,
//! and the shared stopping logic.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{l2_norm, GridField};
use crate::multigrid::{vcycle, MgHierarchy};
use crate::net::{forward_taped, MaskPyramid, Tape, UGridParams};
use crate::stencil::PdeProblem;

/// A solve is declared diverged once the error grows past this multiple of
/// its initial value.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    /// Jacobi sweeps before the correction.
    pub pre_smooth: usize,
    /// Jacobi sweeps after the correction.
    pub post_smooth: usize,
    /// Relative-residual target.
    pub tol: f64,
    /// Cap on outer iterations.
    pub max_iters: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            pre_smooth: 2,
            post_smooth: 2,
            tol: 1e-4,
            max_iters: 64,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::Config(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIters,
    Diverged,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Termination::Converged => "converged",
            Termination::MaxIters => "max_iters",
            Termination::Diverged => "diverged",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Error after each iteration: relative residual, or absolute residual
    /// when `absolute` is set.
    pub trace: Vec<f64>,
    /// Wall time elapsed after each iteration, in milliseconds.
    pub cumulative_ms: Vec<f64>,
    pub initial_error: f64,
    pub final_error: f64,
    pub terminated: Termination,
    pub wall_time: Duration,
    /// The effective right-hand side vanished, so the trace holds absolute
    /// residual norms and convergence means `<= tol * n`.
    pub absolute: bool,
}

impl SolveReport {
    /// Writes the convergence map: `iteration,relative_residual,cumulative_ms`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "relative_residual", "cumulative_ms"])?;
        for (k, (e, ms)) in self.trace.iter().zip(&self.cumulative_ms).enumerate() {
            w.write_record([
                (k + 1).to_string(),
                format!("{e:e}"),
                format!("{ms:.6}"),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

/// Measures the stopping metric of a problem.
struct ErrorMetric {
    denom: f64,
    absolute: bool,
}

impl ErrorMetric {
    fn new(problem: &PdeProblem) -> Self {
        let denom = l2_norm(&problem.effective_rhs());
        if denom == 0.0 {
            Self {
                denom: 1.0,
                absolute: true,
            }
        } else {
            Self {
                denom,
                absolute: false,
            }
        }
    }

    fn eval(&self, problem: &PdeProblem, u: &GridField) -> f64 {
        l2_norm(&problem.residual_unchecked(u)) / self.denom
    }
}

/// Drives `step` until the stopping rule fires.
pub fn iterate_until(
    problem: &PdeProblem,
    u0: GridField,
    cfg: &SolveConfig,
    mut step: impl FnMut(&GridField) -> Result<GridField>,
) -> Result<(GridField, SolveReport)> {
    cfg.validate()?;
    u0.check_same(problem.n())?;
    let start = Instant::now();
    let metric = ErrorMetric::new(problem);
    let threshold = if metric.absolute {
        cfg.tol * problem.n() as f64
    } else {
        cfg.tol
    };
    let initial_error = metric.eval(problem, &u0);
    let mut u = u0;
    let mut trace = Vec::new();
    let mut cumulative_ms = Vec::new();
    let mut terminated = Termination::MaxIters;
    for _ in 0..cfg.max_iters {
        u = step(&u)?;
        let e = metric.eval(problem, &u);
        trace.push(e);
        cumulative_ms.push(start.elapsed().as_secs_f64() * 1e3);
        if !e.is_finite() || (initial_error > 0.0 && e > DIVERGENCE_FACTOR * initial_error) {
            terminated = Termination::Diverged;
            break;
        }
        if e <= threshold {
            terminated = Termination::Converged;
            break;
        }
    }
    if !u.is_finite() {
        // keep the last finite-free contract for callers that persist u
        u = problem.zero_interior_guess();
    }
    Ok((
        u,
        SolveReport {
            iterations: trace.len(),
            final_error: *trace.last().expect("max_iters >= 1"),
            trace,
            cumulative_ms,
            initial_error,
            terminated,
            wall_time: start.elapsed(),
            absolute: metric.absolute,
        },
    ))
}

/// Per-problem state for repeated UGrid iterations.
pub struct UGridContext<'a> {
    problem: &'a PdeProblem,
    params: &'a UGridParams,
    pyramid: MaskPyramid,
    diag: Vec<f64>,
}

impl<'a> UGridContext<'a> {
    pub fn new(problem: &'a PdeProblem, params: &'a UGridParams) -> Result<Self> {
        Ok(Self {
            problem,
            params,
            pyramid: MaskPyramid::build(problem.mask(), params.depth)?,
            diag: problem.diagonal(),
        })
    }

    pub fn pyramid(&self) -> &MaskPyramid {
        &self.pyramid
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.diag
    }

    /// Network input for residual `r`: the Jacobi-preconditioned residual
    /// `P^-1 r`.
    pub fn network_input(&self, r: &GridField) -> GridField {
        let data = r.as_slice().iter().zip(&self.diag).map(|(&v, &d)| v / d).collect();
        GridField::from_raw(r.n(), data)
    }

    /// One UGrid iteration; also returns the network tape.
    pub fn iterate_taped(&self, u: &GridField, cfg: &SolveConfig) -> Result<(GridField, Tape)> {
        u.check_same(self.problem.n())?;
        let u = self.problem.smooth_n(u, cfg.pre_smooth)?;
        let r = self.problem.residual_unchecked(&u);
        let tape = forward_taped(&self.network_input(&r), &self.pyramid, self.params)?;
        let mut u = u;
        for (v, d) in u.data_mut().iter_mut().zip(tape.output().as_slice()) {
            *v += d;
        }
        let u = self.problem.smooth_n(&u, cfg.post_smooth)?;
        Ok((u, tape))
    }

    pub fn iterate(&self, u: &GridField, cfg: &SolveConfig) -> Result<GridField> {
        Ok(self.iterate_taped(u, cfg)?.0)
    }
}

/// One UGrid iteration: `pre_smooth` Jacobi sweeps, a correction from the
/// network applied to the preconditioned residual, `post_smooth` sweeps.
pub fn ugrid_iterate(
    u: &GridField,
    problem: &PdeProblem,
    params: &UGridParams,
    cfg: &SolveConfig,
) -> Result<GridField> {
    UGridContext::new(problem, params)?.iterate(u, cfg)
}

/// Iterates [`ugrid_iterate`] from `u0` (default: zero interior) until the
/// stopping rule fires.
pub fn solve(
    problem: &PdeProblem,
    params: &UGridParams,
    cfg: &SolveConfig,
    u0: Option<&GridField>,
) -> Result<(GridField, SolveReport)> {
    let ctx = UGridContext::new(problem, params)?;
    let u0 = initial_guess(problem, u0)?;
    iterate_until(problem, u0, cfg, |u| ctx.iterate(u, cfg))
}

/// Plain masked Jacobi; one iteration is one sweep.
pub fn jacobi_solve(problem: &PdeProblem, cfg: &SolveConfig) -> Result<(GridField, SolveReport)> {
    let u0 = problem.zero_interior_guess();
    iterate_until(problem, u0, cfg, |u| Ok(problem.smooth_unchecked(u)))
}

/// Classical geometric multigrid; one iteration is one V-cycle with
/// `pre_smooth` / `post_smooth` sweeps per level.
pub fn mg_solve(problem: &PdeProblem, cfg: &SolveConfig) -> Result<(GridField, SolveReport)> {
    let h = MgHierarchy::build(problem, None);
    mg_solve_with(problem, &h, cfg)
}

pub fn mg_solve_with(
    problem: &PdeProblem,
    hierarchy: &MgHierarchy,
    cfg: &SolveConfig,
) -> Result<(GridField, SolveReport)> {
    let u0 = problem.zero_interior_guess();
    iterate_until(problem, u0, cfg, |u| {
        vcycle(problem, u, hierarchy, cfg.pre_smooth, cfg.post_smooth)
    })
}

fn initial_guess(problem: &PdeProblem, u0: Option<&GridField>) -> Result<GridField> {
    match u0 {
        Some(u) => {
            u.check_same(problem.n())?;
            crate::grid::masked_compose(u, problem.b(), problem.mask())
        }
        None => Ok(problem.zero_interior_guess()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dense::dense_solve;
    use crate::grid::InteriorMask;
    use crate::net::init_params;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_field(n: usize, rng: &mut ChaCha8Rng) -> GridField {
        GridField::from_fn(n, |_, _| rng.random_range(-1.0..1.0)).unwrap()
    }

    fn square(n: usize, seed: u64) -> PdeProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PdeProblem::poisson(
            GridField::zeros(n).unwrap(),
            rand_field(n, &mut rng),
            InteriorMask::full(n).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn exact_input_stays_exact() {
        let p = square(17, 1);
        let exact = dense_solve(&p).unwrap();
        let params = init_params(3, 4, 2);
        let out = ugrid_iterate(&exact, &p, &params, &SolveConfig::default()).unwrap();
        assert!(l2_norm(&p.residual(&out).unwrap()) <= 1e-9);
    }

    #[test]
    fn zero_params_reduce_to_jacobi() {
        let p = square(17, 2);
        let params = UGridParams::zeros(3, 4, 2);
        let cfg = SolveConfig::default();
        let u = p.zero_interior_guess();
        let out = ugrid_iterate(&u, &p, &params, &cfg).unwrap();
        let jac = p.smooth_n(&u, 4).unwrap();
        assert_eq!(out, jac);

        // traces agree at matching sweep counts
        let (_, rep) = solve(&p, &params, &SolveConfig { max_iters: 5, ..cfg }, None).unwrap();
        let (_, jrep) = jacobi_solve(&p, &SolveConfig { max_iters: 20, ..cfg }).unwrap();
        for (k, e) in rep.trace.iter().enumerate() {
            assert_eq!(e.to_bits(), jrep.trace[4 * k + 3].to_bits());
        }
    }

    #[test]
    fn homogeneous_problem_stays_zero() {
        let n = 17;
        let p = PdeProblem::poisson(
            GridField::zeros(n).unwrap(),
            GridField::zeros(n).unwrap(),
            InteriorMask::full(n).unwrap(),
        )
        .unwrap();
        let params = init_params(3, 4, 3);
        let out = ugrid_iterate(&GridField::zeros(n).unwrap(), &p, &params, &SolveConfig::default()).unwrap();
        assert!(out.as_slice().iter().all(|&v| v == 0.0));
        let (_, rep) = solve(&p, &params, &SolveConfig::default(), None).unwrap();
        assert!(rep.absolute);
        assert_eq!(rep.terminated, Termination::Converged);
    }

    #[test]
    fn zero_params_hit_iteration_cap() {
        let p = square(65, 4);
        let params = UGridParams::zeros(4, 2, 2);
        let (_, rep) = solve(&p, &params, &SolveConfig::default(), None).unwrap();
        assert_eq!(rep.terminated, Termination::MaxIters);
        assert_eq!(rep.iterations, 64);
        assert_eq!(rep.trace.len(), rep.iterations);
        assert_eq!(rep.final_error, *rep.trace.last().unwrap());
    }

    #[test]
    fn exact_warm_start_converges_immediately() {
        let p = square(17, 5);
        let exact = dense_solve(&p).unwrap();
        let params = init_params(3, 4, 6);
        let (_, rep) = solve(&p, &params, &SolveConfig::default(), Some(&exact)).unwrap();
        assert_eq!(rep.terminated, Termination::Converged);
        assert_eq!(rep.iterations, 1);
    }

    #[test]
    fn jacobi_cases() {
        let mask = InteriorMask::from_fn(5, |i, j| (i, j) == (2, 2)).unwrap();
        let p = PdeProblem::poisson(GridField::zeros(5).unwrap(), GridField::filled(5, 1.0).unwrap(), mask).unwrap();
        let (u, rep) = jacobi_solve(&p, &SolveConfig::default()).unwrap();
        assert_eq!(rep.iterations, 1);
        assert_eq!(u.get(2, 2), 1.0);

        let p = square(17, 7);
        let (_, rep) = jacobi_solve(&p, &SolveConfig { max_iters: 500, ..Default::default() }).unwrap();
        assert!(rep.trace.windows(2).all(|w| w[1] <= w[0]));

        let p = square(9, 8);
        let (u, _) = jacobi_solve(&p, &SolveConfig { tol: 1e-13, max_iters: 100_000, ..Default::default() }).unwrap();
        let exact = dense_solve(&p).unwrap();
        for (a, b) in u.as_slice().iter().zip(exact.as_slice()) {
            assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn divergence_is_labelled() {
        // Helmholtz with k2 = 3 on a full 17x17 square: Jacobi has rho > 1
        let n = 17;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = PdeProblem::helmholtz(
            GridField::zeros(n).unwrap(),
            rand_field(n, &mut rng),
            InteriorMask::full(n).unwrap(),
            GridField::filled(n, 3.0).unwrap(),
        )
        .unwrap();
        let (u, rep) = jacobi_solve(&p, &SolveConfig { max_iters: 10_000, ..Default::default() }).unwrap();
        assert_eq!(rep.terminated, Termination::Diverged);
        assert!(rep.trace.iter().all(|e| e.is_finite()));
        assert!(u.is_finite());
    }

    #[test]
    fn mg_solves_square() {
        let p = square(65, 10);
        let (_, rep) = mg_solve(&p, &SolveConfig::default()).unwrap();
        assert_eq!(rep.terminated, Termination::Converged);
        assert!(rep.iterations <= 15, "{}", rep.iterations);
    }

    #[test]
    fn csv_schema() {
        let p = square(17, 11);
        let (_, rep) = mg_solve(&p, &SolveConfig::default()).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("iteration,relative_residual,cumulative_ms"));
        assert_eq!(lines.count(), rep.iterations);
    }

    #[test]
    fn invalid_config() {
        let p = square(9, 12);
        assert!(jacobi_solve(&p, &SolveConfig { tol: 0.0, ..Default::default() }).is_err());
        assert!(jacobi_solve(&p, &SolveConfig { max_iters: 0, ..Default::default() }).is_err());
    }
}
