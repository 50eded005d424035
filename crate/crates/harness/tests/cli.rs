use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--set", "grid.n_points=15",
    "--set", "grid.n_modes=8",
    "--set", "solver.dt=1e-3",
    "--set", "solver.T=0.02",
    "--set", "solver.record_stride=5",
];

fn spdelab(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spdelab"))
        .arg(args[0])
        .args(TINY)
        .args(&args[1..])
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

#[test]
fn simulate_writes_trajectories_and_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let o = spdelab(&["simulate", "--set", "noise.paths=2", "--seed", "9"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for name in ["trajectory_0.csv", "trajectory_1.bin", "results.csv", "config.resolved"] {
        assert!(dir.path().join(name).exists(), "missing {name}");
    }
    let results = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let mut lines = results.lines();
    assert_eq!(lines.next(), Some("experiment_id,op,params_digest,mean,stderr,n,seed,wall_time"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row.len(), 8);
    assert_eq!(row[0], "simulate");
    assert_eq!(row[6], "9");
    let resolved = fs::read_to_string(dir.path().join("config.resolved")).unwrap();
    assert!(resolved.contains("noise.seed=9"), "{resolved}");
}

#[test]
fn worker_count_does_not_change_bytes() {
    let run = |workers: &str| {
        let dir = tempfile::tempdir().unwrap();
        let o = spdelab(
            &["estimate", "--set", "estimator.n=40", "--set", "estimator.functional=tanh", "--workers", workers],
            dir.path(),
        );
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(dir.path().join("results.csv")).unwrap()
    };
    assert_eq!(run("1"), run("3"));
}

#[test]
fn config_file_and_overrides_compose() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# tiny run\nkernels.times = 0.1, 0.5\nnoise.seed = 5\n").unwrap();
    let out = dir.path().join("out");
    let o = spdelab(&["kernels", "--config", cfg.to_str().unwrap(), "--set", "noise.seed=6"], &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let resolved = fs::read_to_string(out.join("config.resolved")).unwrap();
    assert!(resolved.contains("noise.seed=6"), "{resolved}");
    assert!(resolved.contains("solver.T=0.02"), "{resolved}");
    assert!(out.join("kernels.csv").exists());
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["simulate", "--set", "grid.nodes=3"][..],
        &["simulate", "--set", "solver.dt=fast"][..],
        &["simulate", "--set", "noise.levels=1"][..],
        &["simulate", "--set", "grid.n_modes=99"][..],
        &["uniqueness", "--set", "drift.variant=none"][..],
        &["simulate", "--config", "/definitely/not/here.cfg"][..],
        &["simulate", "--set", "no-equals-sign"][..],
    ] {
        let o = spdelab(args, dir.path());
        assert_eq!(code(&o), 2, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn blow_up_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = spdelab(
        &["simulate", "--set", "initial.kind=mode", "--set", "initial.value=5", "--set", "solver.blow_up_threshold=1"],
        dir.path(),
    );
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("blow"), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn unresolved_kernel_is_a_numerical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = spdelab(&["kernels", "--set", "kernels.times=0.01"], dir.path());
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unconverged"));
}

#[test]
fn unwritable_output_exits_with_one() {
    let o = spdelab(&["kernels", "--set", "kernels.times=0.5"], Path::new("/proc/spdelab-cannot-write"));
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/proc/spdelab-cannot-write"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_spdelab")).arg("frobnicate").output().unwrap();
    assert_eq!(code(&o), 2);
}
