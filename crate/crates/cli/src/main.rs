use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ugrid_core::analysis::{self, BenchConfig, SolverKind, TestcaseOptions};
use ugrid_core::io::{read_field, read_problem_dir};
use ugrid_core::net::{load_checkpoint, CheckpointMeta};
use ugrid_core::train::{self, LossKind, TrainConfig};
use ugrid_core::{Error, PdeKind, PdeProblem, SolveConfig, Termination};

const EXIT_MAX_ITERS: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "ugrid", version, about = "Masked multigrid and UGrid solvers for linear elliptic PDEs")]
struct Cli {
    /// Seed for every random choice [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = one per core)
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    /// Directory for generated files [default: .]
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a donut-shaped training dataset
    GenData(GenDataArgs),
    /// Train a UGrid network
    Train(TrainArgs),
    /// Solve one problem
    Solve(SolveArgs),
    /// Compare solvers across testcases
    Bench(BenchArgs),
    /// Estimate the Jacobi spectral radius of a testcase
    Spectral(SpectralArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    /// PDE family: poisson, helmholtz or conv_diff_react
    #[arg(long, default_value = "poisson")]
    family: PdeKind,
    /// Grid side, 2^k + 1
    #[arg(long, default_value_t = 257)]
    n: usize,
    /// Number of samples
    #[arg(long, default_value_t = 2000)]
    count: usize,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Flat key = value config file; flags below take precedence
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra key=value override, repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// PDE family [default: poisson]
    #[arg(long)]
    family: Option<PdeKind>,
    /// Training epochs [default: 300]
    #[arg(long)]
    epochs: Option<usize>,
    /// Initial learning rate [default: 1e-3]
    #[arg(long)]
    lr0: Option<f64>,
    /// Learning-rate decay factor [default: 0.1]
    #[arg(long)]
    lr_decay: Option<f64>,
    /// Epochs between decays [default: 50]
    #[arg(long)]
    decay_every: Option<usize>,
    /// Samples per optimizer step [default: 8]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Generated samples, validation included [default: 2000]
    #[arg(long)]
    dataset_size: Option<usize>,
    /// Grid side of generated samples [default: 257]
    #[arg(long)]
    grid_n: Option<usize>,
    /// Unrolled iterations per step [default: 3]
    #[arg(long)]
    unroll: Option<usize>,
    /// Objective: residual or legacy [default: residual]
    #[arg(long)]
    loss: Option<LossKind>,
    /// Network levels [default: 6]
    #[arg(long)]
    depth: Option<usize>,
    /// Feature channels [default: 8]
    #[arg(long)]
    channels: Option<usize>,
    /// Held-out share of the dataset [default: 0.1]
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Validate every this many epochs [default: 1]
    #[arg(long)]
    val_every: Option<usize>,
    /// Outer-iteration cap of validation solves [default: 64]
    #[arg(long)]
    val_max_iters: Option<usize>,
    /// Tolerance of validation solves [default: 1e-4]
    #[arg(long)]
    val_tol: Option<f64>,
    /// Jacobi sweeps before each correction [default: 2]
    #[arg(long)]
    pre_smooth: Option<usize>,
    /// Jacobi sweeps after each correction [default: 2]
    #[arg(long)]
    post_smooth: Option<usize>,
    /// Train on random constant forcing instead of f = 0 [default: false]
    #[arg(long)]
    nonzero_f: Option<bool>,
    /// Dataset directory written by gen-data [default: none, samples are drawn]
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct ProblemArgs {
    /// Named testcase (square, poisson_square, l_shape, star, donut, noisy, sharp_feature, pgm:<path>)
    #[arg(long, conflicts_with = "problem_dir")]
    testcase: Option<String>,
    /// Directory with mask.ugf|mask.pgm, b.ugf, f.ugf and coefficient files
    #[arg(long)]
    problem_dir: Option<PathBuf>,
    /// Grid side for named testcases
    #[arg(long, default_value_t = 65)]
    n: usize,
    /// PDE family for named testcases
    #[arg(long, default_value = "poisson")]
    family: PdeKind,
}

#[derive(Args, Debug)]
struct SolveArgs {
    /// UGrid checkpoint
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    problem: ProblemArgs,
    /// Solver: ugrid, jacobi or classical-mg
    #[arg(long, default_value = "ugrid")]
    solver: SolverKind,
    /// Relative-residual tolerance
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Iteration cap
    #[arg(long, default_value_t = 64)]
    max_iters: usize,
    /// Jacobi sweeps before each correction
    #[arg(long, default_value_t = 2)]
    pre_smooth: usize,
    /// Jacobi sweeps after each correction
    #[arg(long, default_value_t = 2)]
    post_smooth: usize,
    /// Initial iterate as a UGF1 field (boundary values are reset to b)
    #[arg(long)]
    warm_start: Option<PathBuf>,
    /// Convergence trace CSV
    #[arg(long)]
    trace_out: Option<PathBuf>,
    /// Final iterate as a UGF1 field
    #[arg(long)]
    solution_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// UGrid checkpoint, required when ugrid is among the solvers
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Comma-separated solvers
    #[arg(long, value_delimiter = ',', default_value = "jacobi,classical-mg,ugrid")]
    solvers: Vec<SolverKind>,
    /// Comma-separated testcases
    #[arg(long, value_delimiter = ',', default_value = "square,l_shape,star,donut,noisy,sharp_feature")]
    testcases: Vec<String>,
    /// Grid side
    #[arg(long, default_value_t = 257)]
    n: usize,
    /// PDE family
    #[arg(long, default_value = "poisson")]
    family: PdeKind,
    /// Timed repetitions per row
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    /// Relative-residual tolerance
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Iteration cap for multigrid and UGrid
    #[arg(long, default_value_t = 64)]
    max_iters: usize,
    /// Iteration cap for plain Jacobi
    #[arg(long, default_value_t = 20000)]
    jacobi_max_iters: usize,
}

#[derive(Args, Debug)]
struct SpectralArgs {
    /// PDE family
    #[arg(long, default_value = "poisson")]
    family: PdeKind,
    /// Named testcase
    #[arg(long, default_value = "square")]
    testcase: String,
    /// Grid side, at most 129
    #[arg(long, default_value_t = 65)]
    n: usize,
}

/// Failures split by exit code.
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl Cli {
    fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn out_dir(&self) -> PathBuf {
        self.out_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Usage(m),
            e @ (Error::InvalidSize(_) | Error::GridTooSmall { .. }) => Failure::Usage(e.to_string()),
            e => Failure::Runtime(e),
        }
    }
}

type CmdResult = std::result::Result<ExitCode, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let result = match &cli.command {
        Command::GenData(a) => gen_data(&cli, a),
        Command::Train(a) => run_train(&cli, a),
        Command::Solve(a) => run_solve(&cli, a),
        Command::Bench(a) => run_bench(&cli, a),
        Command::Spectral(a) => run_spectral(&cli, a),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn gen_data(cli: &Cli, a: &GenDataArgs) -> CmdResult {
    let samples = train::generate_dataset(a.family, a.n, a.count, cli.seed())?;
    let manifest = train::save_dataset(cli.out_dir(), a.family, cli.seed(), &samples)?;
    println!(
        "wrote {} {} samples (n = {}) to {}",
        manifest.samples.len(),
        a.family,
        a.n,
        cli.out_dir().display()
    );
    Ok(ExitCode::SUCCESS)
}

fn run_train(cli: &Cli, a: &TrainArgs) -> CmdResult {
    let mut cfg = match &a.config {
        Some(path) => {
            if !path.exists() {
                return Err(Failure::Usage(format!("config file {} not found", path.display())));
            }
            TrainConfig::from_kv_file(path)?
        }
        None => TrainConfig::default(),
    };
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k, v)?;
    }
    macro_rules! apply {
        ($($field:ident),*) => {
            $(if let Some(v) = &a.$field { cfg.$field = v.clone(); })*
        };
    }
    apply!(family, epochs, lr0, lr_decay, decay_every, batch_size, dataset_size, grid_n, unroll, loss, depth, channels, val_fraction, val_every, val_max_iters, val_tol, pre_smooth, post_smooth, nonzero_f);
    if let Some(d) = &a.data_dir {
        cfg.data_dir = Some(d.clone());
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.out_dir {
        cfg.out_dir = Some(dir.clone());
    }
    let out_dir = cfg.out_dir.get_or_insert_with(|| PathBuf::from(".")).clone();
    cfg.validate()?;

    let out = train::train(&cfg)?;
    for m in &out.metrics {
        let val = m.val_rel_residual.map_or("-".to_string(), |v| format!("{v:.3e}"));
        println!("epoch {:4}  loss {:.6e}  val {val}  lr {:.1e}", m.epoch, m.train_loss, m.lr);
    }
    println!("checkpoint: {}", out_dir.join("final.ugck").display());
    Ok(ExitCode::SUCCESS)
}

fn load_problem(p: &ProblemArgs, seed: u64) -> std::result::Result<PdeProblem, Failure> {
    match (&p.testcase, &p.problem_dir) {
        (Some(name), None) => {
            let opts = TestcaseOptions {
                family: p.family,
                seed,
                ..Default::default()
            };
            Ok(analysis::gen_testcase_with(name, p.n, &opts)?)
        }
        (None, Some(dir)) => {
            if !dir.is_dir() {
                return Err(Failure::Usage(format!("problem directory {} not found", dir.display())));
            }
            Ok(read_problem_dir(dir)?)
        }
        _ => Err(Failure::Usage("give exactly one of --testcase or --problem-dir".into())),
    }
}

fn load_params(path: Option<&Path>) -> std::result::Result<ugrid_core::UGridParams, Failure> {
    let path = path.ok_or_else(|| Failure::Usage("--checkpoint is required for the ugrid solver".into()))?;
    if !path.is_file() {
        return Err(Failure::Usage(format!("checkpoint {} not found", path.display())));
    }
    let (params, _meta): (_, CheckpointMeta) = load_checkpoint(path)?;
    Ok(params)
}

fn run_solve(cli: &Cli, a: &SolveArgs) -> CmdResult {
    let problem = load_problem(&a.problem, cli.seed())?;
    let cfg = SolveConfig {
        pre_smooth: a.pre_smooth,
        post_smooth: a.post_smooth,
        tol: a.tol,
        max_iters: a.max_iters,
    };
    cfg.validate()?;
    let warm = a.warm_start.as_deref().map(read_field).transpose()?;
    let (u, report) = match a.solver {
        SolverKind::Ugrid => {
            let params = load_params(a.checkpoint.as_deref())?;
            ugrid_core::solve(&problem, &params, &cfg, warm.as_ref())?
        }
        SolverKind::Jacobi if warm.is_none() => ugrid_core::jacobi_solve(&problem, &cfg)?,
        SolverKind::ClassicalMg if warm.is_none() => ugrid_core::mg_solve(&problem, &cfg)?,
        other => return Err(Failure::Usage(format!("--warm-start is only supported by ugrid, not {other}"))),
    };
    if let Some(path) = &a.trace_out {
        report.save_csv(path)?;
    }
    if let Some(path) = &a.solution_out {
        ugrid_core::io::write_field(path, &u)?;
    }
    let metric = if report.absolute { "absolute residual" } else { "relative residual" };
    println!(
        "{}: {} after {} iterations, {metric} {:.3e}, {:.3} ms",
        a.solver,
        report.terminated,
        report.iterations,
        report.final_error,
        report.wall_time.as_secs_f64() * 1e3
    );
    Ok(match report.terminated {
        Termination::Converged => ExitCode::SUCCESS,
        Termination::MaxIters => ExitCode::from(EXIT_MAX_ITERS),
        Termination::Diverged => ExitCode::from(EXIT_DIVERGED),
    })
}

fn run_bench(cli: &Cli, a: &BenchArgs) -> CmdResult {
    let params = if a.solvers.contains(&SolverKind::Ugrid) {
        Some(load_params(a.checkpoint.as_deref())?)
    } else {
        None
    };
    let opts = TestcaseOptions {
        family: a.family,
        seed: cli.seed(),
        ..Default::default()
    };
    let cases = a
        .testcases
        .iter()
        .map(|name| Ok((name.clone(), analysis::gen_testcase_with(name, a.n, &opts)?)))
        .collect::<ugrid_core::Result<Vec<_>>>()?;
    let cfg = BenchConfig {
        solve: SolveConfig {
            tol: a.tol,
            max_iters: a.max_iters,
            ..Default::default()
        },
        jacobi_max_iters: a.jacobi_max_iters,
        repeats: a.repeats,
    };
    let out = analysis::bench(&cases, &a.solvers, params.as_ref(), &cfg)?;
    fs::create_dir_all(cli.out_dir()).map_err(|e| Failure::Runtime(e.into()))?;
    out.save(cli.out_dir())?;
    println!("{:<16} {:<14} {:>12} {:>12} {:>6}  status", "testcase", "solver", "time_ms", "error", "iters");
    for r in &out.rows {
        println!(
            "{:<16} {:<14} {:>12.3} {:>12.3e} {:>6}  {}",
            r.testcase, r.solver, r.time_ms, r.final_error, r.iterations, r.terminated
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn run_spectral(cli: &Cli, a: &SpectralArgs) -> CmdResult {
    let opts = TestcaseOptions {
        family: a.family,
        seed: cli.seed(),
        ..Default::default()
    };
    let problem = analysis::gen_testcase_with(&a.testcase, a.n, &opts)?;
    let rep = analysis::spectral_radius(&problem)?;
    println!(
        "rho = {:.6} ({} iterations, {}, {} interior points)",
        rep.rho_estimate,
        rep.iterations,
        if rep.converged { "converged" } else { "not converged" },
        rep.interior_points
    );
    if rep.exceeds_one() {
        println!("warning: rho >= 1, plain Jacobi does not converge on this problem");
    }
    Ok(ExitCode::SUCCESS)
}
