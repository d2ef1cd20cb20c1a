//! Spectral checks, benchmark geometries and the solver comparison harness.

pub mod bench;
pub mod spectral;
pub mod testcases;

pub use bench::{bench, run_solver, BenchConfig, BenchOutput, BenchRow, SolverKind};
pub use spectral::{spectral_radius, SpectralReport};
pub use testcases::{gen_testcase, gen_testcase_with, testcase_mask, TestcaseOptions, TESTCASES};
