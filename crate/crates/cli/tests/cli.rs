use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ugrid_core::analysis::gen_testcase;
use ugrid_core::io::write_field;
use ugrid_core::net::{save_checkpoint, CheckpointMeta};
use ugrid_core::train::TrainConfig;
use ugrid_core::{init_params, mg_solve, SolveConfig};

fn ugrid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ugrid")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn zero_checkpoint(path: &Path) {
    let mut params = init_params(3, 4, 0);
    let zeros = vec![0.0; params.param_count()];
    params.assign_flat(&zeros).unwrap();
    save_checkpoint(path, &params, &CheckpointMeta::default()).unwrap();
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn gen_data_writes_a_seeded_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let o = ugrid(&["--seed", "3", "--out-dir", p(d), "gen-data", "--family", "helmholtz", "--n", "17", "--count", "10"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let manifest = fs::read_to_string(a.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"helmholtz\""));
    assert!(a.join("000009_k2.ugf").is_file());
    assert!(!a.join("000010_mask.ugf").exists());
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn exact_warm_start_converges_in_one_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("zero.ugck");
    zero_checkpoint(&ckpt);
    let problem = gen_testcase("star", 33).unwrap();
    let cfg = SolveConfig { tol: 1e-12, max_iters: 100, ..Default::default() };
    let (u, _) = mg_solve(&problem, &cfg).unwrap();
    let warm = dir.path().join("warm.ugf");
    write_field(&warm, &u).unwrap();
    let trace = dir.path().join("trace.csv");
    let o = ugrid(&[
        "solve", "--checkpoint", p(&ckpt), "--testcase", "star", "--n", "33", "--warm-start", p(&warm),
        "--trace-out", p(&trace),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("after 1 iterations"));
    let text = fs::read_to_string(&trace).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.starts_with("iteration,relative_residual,cumulative_ms"));
}

#[test]
fn iteration_cap_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("zero.ugck");
    zero_checkpoint(&ckpt);
    let o = ugrid(&["solve", "--checkpoint", p(&ckpt), "--testcase", "square", "--n", "65"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).contains("max_iters after 64 iterations"));
}

#[test]
fn baseline_solvers_need_no_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let sol = dir.path().join("u.ugf");
    let o = ugrid(&["solve", "--solver", "classical-mg", "--testcase", "donut", "--n", "33", "--solution-out", p(&sol)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(sol.is_file());
}

#[test]
fn spectral_reports_the_closed_form() {
    let o = ugrid(&["spectral", "--n", "9"]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("rho = 0.923878"), "{}", stdout(&o));
}

#[test]
fn bench_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = ugrid(&[
        "--out-dir", p(dir.path()), "bench", "--solvers", "jacobi,mg", "--testcases", "square,donut", "--n", "17",
        "--repeats", "1",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);
    assert!(dir.path().join("donut_jacobi.csv").is_file());
}

#[test]
fn train_help_defaults_match_the_config() {
    let help = stdout(&ugrid(&["train", "-h"]));
    let defaults = TrainConfig::default();
    let mut seen = 0;
    for key in TrainConfig::KEYS {
        let flag = format!("--{} ", key.replace('_', "-"));
        let Some(line) = help.lines().find(|l| l.trim_start().starts_with(&flag)) else {
            continue;
        };
        let value = line.split("[default: ").nth(1).and_then(|s| s.split(']').next()).unwrap();
        // out_dir is resolved by the global flag
        if value.starts_with("none") || *key == "out_dir" {
            continue;
        }
        let mut cfg = defaults.clone();
        cfg.set(key, value).unwrap();
        assert_eq!(cfg, defaults, "--{key} advertises {value}");
        seen += 1;
    }
    assert!(seen >= 19, "only {seen} flags checked");
}

#[test]
fn usage_errors_exit_with_64() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.ugck");
    let cases: Vec<Vec<&str>> = vec![
        vec!["solve", "--testcase", "square", "--n", "17"],
        vec!["solve", "--checkpoint", p(&missing), "--testcase", "square", "--n", "17"],
        vec!["solve", "--solver", "jacobi", "--testcase", "hexagon", "--n", "17"],
        vec!["solve", "--solver", "jacobi", "--testcase", "square", "--n", "18"],
        vec!["train", "--epochs", "0"],
        vec!["train", "--set", "nonsense=1"],
        vec!["frobnicate"],
    ];
    for args in cases {
        assert_eq!(ugrid(&args).status.code(), Some(64), "{args:?}");
    }
}
