//! Solver comparison harness.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multigrid::MgHierarchy;
use crate::net::UGridParams;
use crate::solver::{iterate_until, mg_solve_with, SolveConfig, SolveReport, Termination, UGridContext};
use crate::stencil::PdeProblem;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    Jacobi,
    ClassicalMg,
    Ugrid,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Jacobi => "jacobi",
            SolverKind::ClassicalMg => "classical-mg",
            SolverKind::Ugrid => "ugrid",
        }
    }
}

impl FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jacobi" => Ok(SolverKind::Jacobi),
            "classical-mg" | "mg" => Ok(SolverKind::ClassicalMg),
            "ugrid" => Ok(SolverKind::Ugrid),
            other => Err(Error::Config(format!("unknown solver '{other}'"))),
        }
    }
}

impl std::fmt::Display for SolverKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchConfig {
    pub solve: SolveConfig,
    /// Iteration cap for plain Jacobi, whose iterations are single sweeps.
    pub jacobi_max_iters: usize,
    pub repeats: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            solve: SolveConfig::default(),
            jacobi_max_iters: 20_000,
            repeats: 10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub testcase: String,
    pub solver: String,
    /// Median wall time over the repeats.
    pub time_ms: f64,
    pub final_error: f64,
    pub iterations: usize,
    pub terminated: Termination,
}

#[derive(Clone, Debug)]
pub struct BenchOutput {
    pub rows: Vec<BenchRow>,
    /// Trace of the first repeat for each row, in row order.
    pub traces: Vec<SolveReport>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

/// Runs one solver once. Setup (hierarchy, mask pyramid) counts toward
/// the reported time.
pub fn run_solver(
    kind: SolverKind,
    problem: &PdeProblem,
    params: Option<&UGridParams>,
    cfg: &BenchConfig,
) -> Result<SolveReport> {
    let report = match kind {
        SolverKind::Jacobi => {
            let jcfg = SolveConfig {
                max_iters: cfg.jacobi_max_iters,
                ..cfg.solve
            };
            iterate_until(problem, problem.zero_interior_guess(), &jcfg, |u| Ok(problem.smooth_unchecked(u)))?.1
        }
        SolverKind::ClassicalMg => {
            let start = std::time::Instant::now();
            let h = MgHierarchy::build(problem, None);
            let mut rep = mg_solve_with(problem, &h, &cfg.solve)?.1;
            rep.wall_time = start.elapsed();
            rep
        }
        SolverKind::Ugrid => {
            let params = params.ok_or_else(|| Error::Config("the ugrid solver needs a checkpoint".into()))?;
            let start = std::time::Instant::now();
            let ctx = UGridContext::new(problem, params)?;
            let mut rep = iterate_until(problem, problem.zero_interior_guess(), &cfg.solve, |u| {
                ctx.iterate(u, &cfg.solve)
            })?
            .1;
            rep.wall_time = start.elapsed();
            rep
        }
    };
    Ok(report)
}

/// Runs every solver on every testcase `repeats` times. Rows follow the
/// testcase-major order of the inputs.
pub fn bench(
    testcases: &[(String, PdeProblem)],
    solvers: &[SolverKind],
    params: Option<&UGridParams>,
    cfg: &BenchConfig,
) -> Result<BenchOutput> {
    if cfg.repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    cfg.solve.validate()?;
    if solvers.contains(&SolverKind::Ugrid) && params.is_none() {
        return Err(Error::Config("the ugrid solver needs a checkpoint".into()));
    }
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for (name, problem) in testcases {
        for &kind in solvers {
            let mut times = Vec::with_capacity(cfg.repeats);
            let mut first = None;
            for _ in 0..cfg.repeats {
                let rep = run_solver(kind, problem, params, cfg)?;
                times.push(rep.wall_time.as_secs_f64() * 1e3);
                first.get_or_insert(rep);
            }
            let rep = first.expect("repeats >= 1");
            rows.push(BenchRow {
                testcase: name.clone(),
                solver: kind.name().to_string(),
                time_ms: median(times),
                final_error: rep.final_error,
                iterations: rep.iterations,
                terminated: rep.terminated,
            });
            traces.push(rep);
        }
    }
    Ok(BenchOutput { rows, traces })
}

impl BenchOutput {
    pub fn write_rows_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `bench.csv` plus one `<testcase>_<solver>.csv` trace per row.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        self.write_rows_csv(fs::File::create(dir.join("bench.csv"))?)?;
        for (row, trace) in self.rows.iter().zip(&self.traces) {
            let stem = row.testcase.replace(|c: char| !c.is_ascii_alphanumeric() && c != '_', "_");
            trace.save_csv(dir.join(format!("{stem}_{}.csv", row.solver)))?;
        }
        Ok(())
    }
}
