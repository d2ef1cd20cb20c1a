pub mod analysis;
pub mod dense;
pub mod error;
pub mod grid;
pub mod io;
pub mod multigrid;
pub mod net;
pub mod solver;
pub mod stencil;
pub mod train;

pub use error::{Error, Result};
pub use grid::{l2_norm, masked_compose, relative_residual, GridField, InteriorMask, Kernel3x3};
pub use net::{init_params, UGridParams};
pub use solver::{jacobi_solve, mg_solve, solve, ugrid_iterate, SolveConfig, SolveReport, Termination};
pub use stencil::{Coefficients, PdeKind, PdeProblem};
