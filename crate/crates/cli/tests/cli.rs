use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn pinn(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pinn"))
        .args(args)
        .env("PINN_OUT_DIR", out)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn missing_config_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = pinn(&["sweep", "--config", "missing.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.json"), "{}", stderr(&o));
    assert_eq!(stderr(&o).lines().count(), 1);
}

#[test]
fn malformed_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    fs::write(&cfg, r#"{"lr": "fast"}"#).unwrap();
    let o = pinn(&["train", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("bad.json"));

    fs::write(&cfg, r#"{"learning_rate": 1e-3}"#).unwrap();
    let o = pinn(&["train", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("learning_rate"), "{}", stderr(&o));
}

#[test]
fn zero_depth_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = pinn(&["train", "--depth", "0"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("depth"));
}

#[test]
fn unknown_flag_is_a_one_line_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = pinn(&["train", "--no-such-flag"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("--no-such-flag") && err.contains("--help"));
}

#[test]
fn help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let o = pinn(&["--help"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("oracle"));
}

#[test]
fn unwritable_out_dir_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let target = blocker.join("sub");
    let o = pinn(
        &[
            "train",
            "--iterations",
            "1",
            "--out-dir",
            target.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("not writable"));
}

#[test]
fn short_train_prints_error_and_persists() {
    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("model.snap");
    let o = pinn(
        &[
            "train",
            "--nf",
            "16",
            "--width",
            "8",
            "--depth",
            "2",
            "--iterations",
            "20",
            "--seed",
            "3",
            "--save",
            snap.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let line = out.lines().find(|l| l.starts_with("error = ")).unwrap();
    let err: f64 = line["error = ".len()..].parse().unwrap();
    assert!(err.is_finite() && err > 0.0);
    assert!(snap.exists());
    assert!(dir.path().join("sweep.csv").exists());
}

#[test]
fn inverse_train_reports_lambda() {
    let dir = tempfile::tempdir().unwrap();
    let o = pinn(
        &[
            "train",
            "--problem",
            "laplace-inverse",
            "--nf",
            "16",
            "--m",
            "8",
            "--width",
            "8",
            "--depth",
            "2",
            "--iterations",
            "5",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("lambda = "));
}

#[test]
fn distributed_train_writes_rank_logs() {
    let dir = tempfile::tempdir().unwrap();
    let o = pinn(
        &[
            "train",
            "--nf",
            "16",
            "--width",
            "8",
            "--depth",
            "2",
            "--iterations",
            "10",
            "--ranks",
            "2",
            "--mode",
            "strong",
            "--seed",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let logs = dir.path().join("logs/train_strong_size2_seed1");
    assert!(logs.join("rank_0.log").exists() && logs.join("rank_1.log").exists());
}

#[test]
fn weak_scale_with_one_rank_is_fully_efficient() {
    let dir = tempfile::tempdir().unwrap();
    let o = pinn(
        &[
            "scale",
            "--mode",
            "weak",
            "--ranks",
            "1",
            "--nf",
            "16",
            "--width",
            "8",
            "--depth",
            "2",
            "--iterations",
            "10",
            "--seed",
            "0",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let row = out
        .lines()
        .find(|l| l.trim_start().starts_with("weak"))
        .unwrap();
    assert!(row.contains("100.00%") && row.contains("1.00"), "{out}");
}

#[test]
fn report_on_empty_sweep_exits_one_without_plots() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("sweep.csv"), "").unwrap();
    let o = pinn(&["report"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let svgs = fs::read_dir(dir.path())
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "svg")
        })
        .count();
    assert_eq!(svgs, 0);
    assert!(!dir.path().join("report.md").exists());

    let o = pinn(
        &[
            "report",
            "--input",
            dir.path().join("nowhere").to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_then_report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let o = pinn(
        &[
            "sweep",
            "--n-list",
            "8,16",
            "--seed",
            "0,1",
            "--width",
            "8",
            "--depth",
            "2",
            "--iterations",
            "10",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("regime"));

    let o = pinn(&["report"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("| 16 |"));
    let svg = fs::read_to_string(dir.path().join("error_vs_nf_laplace.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(dir.path().join("report.md").exists());
}

#[test]
fn oracle_validates_and_writes_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o = pinn(&["oracle", "--nx", "100"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let o = pinn(&["oracle", "--dt", "0.01"], dir.path());
    assert_eq!(o.status.code(), Some(1));

    let o = pinn(
        &["oracle", "--nx", "64", "--nt", "5", "--dt", "1e-3"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let grid = dir.path().join("reference.grid");
    assert!(grid.exists());

    // a grid file feeds training of the Schrödinger problem
    let o = pinn(
        &[
            "train",
            "--problem",
            "schrodinger",
            "--nf",
            "16",
            "--ng",
            "8",
            "--nh",
            "8",
            "--width",
            "8",
            "--depth",
            "2",
            "--iterations",
            "3",
            "--reference",
            grid.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}
