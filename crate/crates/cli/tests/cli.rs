//! End-to-end tests of the command-line interface: artifact contracts,
//! determinism, config precedence, and error handling.

use std::path::Path;
use std::process::{Command, Output};

fn smoothmkt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smoothmkt"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

/// metrics.csv with the wall-clock column dropped; everything else in the
/// file is deterministic under a fixed seed.
fn strip_timing(csv: &str) -> String {
    csv.lines()
        .map(|line| {
            let mut cols: Vec<&str> = line.split(',').collect();
            cols.pop();
            cols.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

const QUICK: &[&str] = &[
    "--batch", "512", "--iters", "100", "--eval-every", "50", "--eval-batch", "1024",
];

#[test]
fn train_writes_expected_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let result = smoothmkt(
        &[
            &["train", "--mechanism", "fpsb", "--bidders", "2", "--items", "1", "--estimator", "sm",
              "--lambda", "0.01", "--seed", "1", "--out", out.to_str().unwrap()][..],
            QUICK,
        ]
        .concat(),
    );
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let csv = read(&out.join("metrics.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    // header + iterations / eval-every rows
    assert_eq!(lines.len(), 1 + 100 / 50, "{csv}");
    assert_eq!(lines[0], "iteration,l2,utility_loss,grad_variance,seconds_per_iter");
    assert!(out.join("manifest.json").exists());
    assert!(out.join("policy.txt").exists());
}

#[test]
fn train_is_deterministic_up_to_wall_clock() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let result = smoothmkt(
            &[
                &["train", "--seed", "7", "--out", out.to_str().unwrap()][..],
                QUICK,
            ]
            .concat(),
        );
        assert!(result.status.success());
    }
    let ma = read(&a.join("metrics.csv"));
    let mb = read(&b.join("metrics.csv"));
    assert_eq!(strip_timing(&ma), strip_timing(&mb));
    // the learned parameters are bit-identical too
    assert_eq!(read(&a.join("policy.txt")), read(&b.join("policy.txt")));
}

#[test]
fn train_reinforce_doubles_the_output_head() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let result = smoothmkt(
        &[
            &["train", "--estimator", "reinforce", "--seed", "2", "--out", out.to_str().unwrap()][..],
            QUICK,
        ]
        .concat(),
    );
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let policy = read(&out.join("policy.txt"));
    assert!(policy.contains("layer_sizes: 1,10,10,2"), "{policy}");
    assert!(policy.contains("head: gaussian"));
}

#[test]
fn sweep_emits_one_row_per_lambda_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep");
    let result = smoothmkt(&[
        "sweep", "--lambdas", "0.05,0.01", "--seeds", "1,2", "--out", out.to_str().unwrap(),
        "--batch", "256", "--iters", "20", "--eval-every", "10", "--eval-batch", "512",
    ]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let csv = read(&out.join("sweep.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 1 + 2 * 2, "{csv}");
    assert_eq!(lines[0], "lambda,seed,final_l2");
}

#[test]
fn sweep_single_point_matches_train() {
    let dir = tempfile::tempdir().unwrap();
    let (sweep_out, train_out) = (dir.path().join("s"), dir.path().join("t"));
    let shared = ["--seed", "3", "--batch", "256", "--iters", "20", "--eval-every", "10",
                  "--eval-batch", "512"];
    let result = smoothmkt(
        &[
            &["sweep", "--lambdas", "0.01", "--out", sweep_out.to_str().unwrap()][..],
            &shared[..],
        ]
        .concat(),
    );
    assert!(result.status.success());
    let result = smoothmkt(
        &[
            &["train", "--lambda", "0.01", "--final-loss", "false", "--out", train_out.to_str().unwrap()][..],
            &shared[..],
        ]
        .concat(),
    );
    assert!(result.status.success());
    let sweep_l2 = read(&sweep_out.join("sweep.csv"))
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .nth(2)
        .unwrap()
        .to_string();
    let train_l2 = read(&train_out.join("metrics.csv"))
        .lines()
        .last()
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .to_string();
    assert_eq!(sweep_l2, train_l2);
}

#[test]
fn sweep_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let result = smoothmkt(&[
            "sweep", "--lambdas", "0.05,0.01", "--seed", "5", "--out", out.to_str().unwrap(),
            "--batch", "256", "--iters", "20", "--eval-every", "10", "--eval-batch", "512",
        ]);
        assert!(result.status.success());
    }
    assert_eq!(read(&a.join("sweep.csv")), read(&b.join("sweep.csv")));
}

#[test]
fn oracle_default_grid_is_internally_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("oracle");
    let result = smoothmkt(&["oracle", "--out", out.to_str().unwrap()]);
    assert!(result.status.success());
    let csv = read(&out.join("oracle.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 1 + 9);
    for line in &lines[1..] {
        let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        let (exact, quad, bound) = (cols[3], cols[4], cols[5]);
        assert!((exact - quad).abs() <= 1e-6, "{line}");
        assert!(exact <= bound, "{line}");
    }
}

#[test]
fn oracle_empty_grid_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("oracle");
    let result = smoothmkt(&["oracle", "--lambdas", "", "--out", out.to_str().unwrap()]);
    assert!(result.status.success());
    let csv = read(&out.join("oracle.csv"));
    assert_eq!(csv, "v1,b1,lambda,exact_error,quadrature_error,bound\n");
}

#[test]
fn variance_reports_each_estimator() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("var");
    let result = smoothmkt(&[
        "variance", "--estimators", "sm,es", "--lambdas", "0.05,0.01", "--repeats", "2",
        "--batch", "128", "--pop", "8", "--seed", "1", "--out", out.to_str().unwrap(),
    ]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let csv = read(&out.join("variance.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "estimator,lambda,grad_variance");
    // two sm rows (one per lambda) and one es row with an empty lambda
    assert_eq!(lines.len(), 1 + 2 + 1, "{csv}");
    assert!(lines[3].starts_with("es,,"));
}

#[test]
fn invalid_flags_exit_nonzero_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let result = smoothmkt(&["train", "--bidders", "1", "--out", out.to_str().unwrap()]);
    assert!(!result.status.success());
    assert!(String::from_utf8_lossy(&result.stderr).contains("bidders"));

    let result = smoothmkt(&["train", "--items", "9", "--out", out.to_str().unwrap()]);
    assert!(!result.status.success());

    let result = smoothmkt(&["sweep", "--lambdas", "", "--out", out.to_str().unwrap()]);
    assert!(!result.status.success());
}

#[test]
fn config_file_fills_gaps_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "mechanism = spsb\nbatch = 256\niters = 30\neval-every = 10\neval-batch = 512\nseed = 9\n",
    )
    .unwrap();
    let out = dir.path().join("run");
    let result = smoothmkt(&[
        "train", "--config", cfg.to_str().unwrap(), "--iters", "20", "--final-loss", "false",
        "--out", out.to_str().unwrap(),
    ]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&read(&out.join("manifest.json"))).unwrap();
    assert_eq!(manifest["config"]["mechanism"], "spsb");
    assert_eq!(manifest["config"]["batch"], 256);
    // the flag beats the file
    assert_eq!(manifest["config"]["iters"], 20);
    assert_eq!(manifest["config"]["seed"], 9);
    // row count follows the resolved values: 20 iterations at cadence 10
    let csv = read(&out.join("metrics.csv"));
    assert_eq!(csv.lines().count(), 1 + 2);
}
