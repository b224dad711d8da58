//! End-to-end smoke tests of the command-line interface.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_newton-less"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("newton-less-cli-{tag}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

#[test]
fn gen_data_then_levscores() {
    let dir = temp_dir("gen");
    let matrix = dir.join("a.nlmx");
    let out = bin()
        .args([
            "gen-data", "--kind", "coherent", "--n", "128", "--d", "8", "--seed", "7", "--out",
        ])
        .arg(&matrix)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let loaded = newton_less::data::read_matrix_nlmx(&matrix).unwrap();
    assert_eq!(loaded.shape(), (128, 8));

    let scores = dir.join("scores.csv");
    let out = bin()
        .args(["levscores", "--data"])
        .arg(&matrix)
        .args(["--lambda", "0.5", "--out"])
        .arg(&scores)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("d_eff="), "stdout: {stdout}");
    let text = std::fs::read_to_string(&scores).unwrap();
    assert!(text.starts_with("row,score\n"));
    assert_eq!(text.lines().count(), 129);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn solve_writes_schema_csv() {
    let dir = temp_dir("solve");
    let csv = dir.join("run.csv");
    let out = bin()
        .args([
            "solve",
            "--problem",
            "ls",
            "--n",
            "96",
            "--d",
            "6",
            "--sketch",
            "less",
            "--m",
            "48",
            "--iters",
            "3",
            "--trials",
            "4",
            "--seed",
            "5",
            "--threads",
            "1",
            "--no-timing",
            "--out",
        ])
        .arg(&csv)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "problem,sketch,m,s,scaling,q,trial,iter,mu,errorH,fgap,sketch_seconds,step_seconds"
    );
    assert_eq!(text.lines().count() - 1, 4 * (3 + 1));
    let rows = newton_less::experiment::parse_csv(&text).unwrap();
    assert!(rows.iter().all(|r| r.sketch == "less" && r.m == 48));
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn solve_reruns_are_byte_identical() {
    let dir = temp_dir("replay");
    let mut csvs = Vec::new();
    for name in ["a.csv", "b.csv"] {
        let csv = dir.join(name);
        let out = bin()
            .args([
                "solve",
                "--problem",
                "ridge",
                "--lambda",
                "0.3",
                "--n",
                "64",
                "--d",
                "4",
                "--sketch",
                "less-uniform",
                "--m",
                "32",
                "--iters",
                "2",
                "--trials",
                "3",
                "--seed",
                "9",
                "--no-timing",
                "--out",
            ])
            .arg(&csv)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        csvs.push(std::fs::read(&csv).unwrap());
    }
    assert_eq!(csvs[0], csvs[1]);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn sweep_runs_grid_with_baseline() {
    let dir = temp_dir("sweep");
    let csv = dir.join("sweep.csv");
    let out = bin()
        .args([
            "sweep",
            "--problem",
            "ls",
            "--n",
            "96",
            "--d",
            "6",
            "--sketch",
            "less-uniform,exact-newton",
            "--m",
            "24,48",
            "--nnz-per-row",
            "2,default",
            "--step",
            "fixed=1.0",
            "--iters",
            "2",
            "--trials",
            "2",
            "--seed",
            "3",
            "--no-timing",
            "--out",
        ])
        .arg(&csv)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows = newton_less::experiment::parse_csv(&text).unwrap();
    // 1 baseline cell + 2 m-values x 2 sparsities
    assert_eq!(rows.len(), 5 * 2 * 3);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn moments_prints_and_writes_csv() {
    let dir = temp_dir("moments");
    let csv = dir.join("moments.csv");
    let out = bin()
        .args([
            "moments",
            "--kind",
            "gaussian",
            "--m",
            "20",
            "--d",
            "4",
            "--n",
            "32",
            "--trials",
            "2000",
            "--seed",
            "1",
            "--scaling",
            "unbiased",
            "--out",
        ])
        .arg(&csv)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("dev_first="), "stdout: {stdout}");
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("kind,m,d,lambda,trials,devFirst,devSecond,failures\n"));
    assert_eq!(text.lines().count(), 2);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn threads_env_var_is_honored() {
    let out = bin()
        .env("NEWTONLESS_THREADS", "1")
        .args([
            "solve",
            "--problem",
            "ls",
            "--n",
            "64",
            "--d",
            "4",
            "--sketch",
            "gaussian",
            "--m",
            "16",
            "--iters",
            "2",
            "--trials",
            "2",
            "--seed",
            "2",
            "--no-timing",
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn bad_configuration_fails_with_diagnostic() {
    let out = bin()
        .args([
            "solve",
            "--problem",
            "ls",
            "--n",
            "64",
            "--d",
            "4",
            "--sketch",
            "no-such-kind",
            "--m",
            "16",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("unknown sketch kind"), "stderr: {stderr}");
}
