//! Loss and parameter gradient of `T` unrolled UGrid iterations.

use crate::error::Result;
use crate::grid::{l2_norm, GridField};
use crate::net::{backward, UGridParams};
use crate::solver::{SolveConfig, UGridContext};
use crate::stencil::PdeProblem;

use super::optim::{legacy_loss, legacy_loss_grad};

/// What the final iterate is scored against.
#[derive(Clone, Copy, Debug)]
pub enum Objective<'a> {
    Residual,
    /// Elementwise relative error against a reference solution.
    Legacy(&'a GridField),
}

#[derive(Clone, Debug)]
pub struct UnrollOutput {
    pub loss: f64,
    /// Residual norm of the final iterate, whatever the objective.
    pub residual_loss: f64,
    /// Flattened in canonical tensor order.
    pub grad: Vec<f64>,
    pub final_iterate: GridField,
}

/// Runs `steps` iterations from the zero-interior guess and scores the
/// final iterate.
pub fn unrolled_loss(
    problem: &PdeProblem,
    params: &UGridParams,
    cfg: &SolveConfig,
    steps: usize,
    objective: Objective<'_>,
) -> Result<f64> {
    let ctx = UGridContext::new(problem, params)?;
    let mut u = problem.zero_interior_guess();
    for _ in 0..steps {
        u = ctx.iterate(&u, cfg)?;
    }
    score(problem, &u, objective)
}

fn score(problem: &PdeProblem, u: &GridField, objective: Objective<'_>) -> Result<f64> {
    match objective {
        Objective::Residual => Ok(l2_norm(&problem.residual(u)?)),
        Objective::Legacy(y) => Ok(legacy_loss(u, y)?.value),
    }
}

/// Loss of [`unrolled_loss`] together with its gradient with respect to
/// every network weight.
pub fn unrolled_loss_grad(
    problem: &PdeProblem,
    params: &UGridParams,
    cfg: &SolveConfig,
    steps: usize,
    objective: Objective<'_>,
) -> Result<UnrollOutput> {
    let ctx = UGridContext::new(problem, params)?;
    let diag = ctx.diagonal().to_vec();
    let n = problem.n();

    let mut u = problem.zero_interior_guess();
    let mut tapes = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (next, tape) = ctx.iterate_taped(&u, cfg)?;
        tapes.push(tape);
        u = next;
    }

    let r = problem.residual_unchecked(&u);
    let residual_loss = l2_norm(&r);
    let (loss, mut g) = match objective {
        Objective::Residual => {
            let g = if residual_loss > 0.0 {
                let unit: Vec<f64> = r.as_slice().iter().map(|v| v / residual_loss).collect();
                problem.residual_linear_adjoint(&unit)
            } else {
                vec![0.0; n * n]
            };
            (residual_loss, g)
        }
        Objective::Legacy(y) => (legacy_loss(&u, y)?.value, legacy_loss_grad(&u, y)),
    };

    let mut grad = vec![0.0; params.param_count()];
    for tape in tapes.iter().rev() {
        for _ in 0..cfg.post_smooth {
            g = problem.smooth_linear_adjoint(&g, &diag);
        }
        // u + delta: the gradient flows to both terms unchanged
        let net = backward(tape, ctx.pyramid(), params, &GridField::from_raw(n, g.clone()))?;
        for (acc, v) in grad.iter_mut().zip(net.params.flatten()) {
            *acc += v;
        }
        // network input is P^-1 r(u)
        let gr: Vec<f64> = net.input.as_slice().iter().zip(&diag).map(|(&v, &d)| v / d).collect();
        for (a, b) in g.iter_mut().zip(problem.residual_linear_adjoint(&gr)) {
            *a += b;
        }
        for _ in 0..cfg.pre_smooth {
            g = problem.smooth_linear_adjoint(&g, &diag);
        }
    }

    Ok(UnrollOutput {
        loss,
        residual_loss,
        grad,
        final_iterate: u,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::InteriorMask;
    use crate::multigrid::MgHierarchy;
    use crate::net::init_params_with;
    use crate::solver::mg_solve_with;
    use crate::stencil::Coefficients;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(seed: u64, kind: u8) -> PdeProblem {
        let n = 17;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = InteriorMask::from_fn_clipped(n, |i, j| {
            let (x, y) = (i as f64 - 8.0, j as f64 - 8.0);
            x * x + y * y > 4.0
        })
        .unwrap();
        let b = GridField::from_fn(n, |_, _| rng.random_range(-1.0..1.0)).unwrap();
        let f = GridField::from_fn(n, |_, _| rng.random_range(-0.1..0.1)).unwrap();
        let coeffs = match kind {
            0 => Coefficients::Poisson,
            1 => Coefficients::Helmholtz {
                k2: GridField::from_fn(n, |_, _| rng.random_range(0.0..0.5)).unwrap(),
            },
            _ => Coefficients::ConvDiffReact {
                vx: GridField::from_fn(n, |_, _| rng.random_range(-1.0..1.0)).unwrap(),
                vy: GridField::from_fn(n, |_, _| rng.random_range(-1.0..1.0)).unwrap(),
                alpha: 1.3,
                beta: 0.4,
            },
        };
        PdeProblem::new(f, b, mask, coeffs).unwrap()
    }

    fn fd_check(p: &PdeProblem, steps: usize, objective: Objective<'_>) {
        let params = init_params_with(2, 2, 2, 21);
        let cfg = SolveConfig::default();
        let out = unrolled_loss_grad(p, &params, &cfg, steps, objective).unwrap();
        let base = unrolled_loss(p, &params, &cfg, steps, objective).unwrap();
        assert_eq!(out.loss, base);
        let flat = params.flatten();
        let mut worst: f64 = 0.0;
        for k in 0..flat.len() {
            let h = 1e-6;
            let eval = |d: f64| {
                let mut q = params.clone();
                let mut w = flat.clone();
                w[k] += d;
                q.assign_flat(&w).unwrap();
                unrolled_loss(p, &q, &cfg, steps, objective).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let err = (fd - out.grad[k]).abs() / fd.abs().max(out.grad[k].abs()).max(1e-3);
            worst = worst.max(err);
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn residual_gradient_matches_finite_differences() {
        for kind in 0..3 {
            for steps in [1, 2] {
                fd_check(&problem(kind as u64, kind), steps, Objective::Residual);
            }
        }
    }

    #[test]
    fn legacy_gradient_matches_finite_differences() {
        let p = problem(7, 0);
        let h = MgHierarchy::build(&p, None);
        let (y, _) = mg_solve_with(&p, &h, &SolveConfig { tol: 1e-12, max_iters: 200, ..Default::default() }).unwrap();
        fd_check(&p, 2, Objective::Legacy(&y));
    }

    #[test]
    fn zero_steps_is_plain_loss() {
        let p = problem(3, 0);
        let params = init_params_with(2, 2, 2, 1);
        let out = unrolled_loss_grad(&p, &params, &SolveConfig::default(), 0, Objective::Residual).unwrap();
        assert!(out.grad.iter().all(|&g| g == 0.0));
        assert_eq!(out.loss, l2_norm(&p.effective_rhs()));
    }
}
