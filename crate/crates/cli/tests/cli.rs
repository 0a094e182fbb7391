use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ipg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ipg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SYN: &str = "synthetic:40,6,3,1";
const SYN_LABEL: &str = "synthetic_40x6_c3_s1";

#[test]
fn run_writes_trace_files_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = ipg(&[
        "run",
        "--dataset",
        SYN,
        "--method",
        "ipg",
        "--noise",
        "none",
        "--tuning",
        "rate",
        "--out",
        p(dir.path()),
    ]);
    ok(&out);
    let stem = format!("{SYN_LABEL}_ipg_none_seed0");
    let csv = fs::read_to_string(dir.path().join(format!("{stem}.csv"))).unwrap();
    assert!(csv.starts_with("t,err,step_delta,bound_t1,u_t,bound_t2,diverged\n"));
    let json = fs::read_to_string(dir.path().join(format!("{stem}.json"))).unwrap();
    let trace = ipg_core::harness::parse_trace_json(&json).unwrap();
    assert!(trace.summary.final_error < 1e-3);
    assert_eq!(ipg_core::harness::parse_trace_csv(&csv).unwrap(), trace.rows);
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 2);
    assert!(summary
        .lines()
        .nth(1)
        .unwrap()
        .starts_with(&format!("none,{SYN_LABEL},ipg,")));
}

#[test]
fn same_seed_gives_identical_csv() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(&ipg(&[
            "run",
            "--dataset",
            SYN,
            "--method",
            "nag",
            "--noise",
            "observation",
            "--seed",
            "7",
            "--out",
            p(d.path()),
        ]));
    }
    let name = format!("{SYN_LABEL}_nag_observation_seed7.csv");
    let x = fs::read(a.path().join(&name)).unwrap();
    let y = fs::read(b.path().join(&name)).unwrap();
    assert!(!x.is_empty());
    assert_eq!(x, y);
}

#[test]
fn run_reads_a_toml_file_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        format!("dataset = \"{SYN}\"\nmethod = \"gd\"\nnoise = \"none\"\nseed = 3\nmax_iterations = 5\n"),
    )
    .unwrap();
    ok(&ipg(&[
        "run",
        "--config",
        p(&cfg),
        "--seed",
        "4",
        "--out",
        p(dir.path()),
    ]));
    let json = fs::read_to_string(dir.path().join(format!("{SYN_LABEL}_gd_none_seed4.json"))).unwrap();
    let trace = ipg_core::harness::parse_trace_json(&json).unwrap();
    assert_eq!(trace.summary.iterations, 5);
    assert_eq!(trace.config.seed, 4);
}

#[test]
fn missing_dataset_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = ipg(&["run", "--dataset", "nowhere", "--method", "ipg", "--out", p(dir.path())]);
    assert!(!out.status.success());
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn invalid_config_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = ipg(&[
        "run",
        "--dataset",
        SYN,
        "--method",
        "ipg",
        "--agents",
        "0",
        "--out",
        p(dir.path()),
    ]);
    assert!(!out.status.success());
}

#[test]
fn empty_grid_succeeds_with_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("grid.toml");
    fs::write(&cfg, "").unwrap();
    ok(&ipg(&["grid", "--config", p(&cfg), "--out", p(dir.path())]));
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1);
}

#[test]
fn grid_keeps_going_past_failed_cells() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("grid.toml");
    fs::write(
        &cfg,
        format!(
            "[[sweep]]\ndatasets = [\"{SYN}\", \"nowhere\"]\nmethods = [\"ipg\", \"gd\"]\nnoises = [\"observation\"]\nreps = 3\ntuning = \"rate\"\n"
        ),
    )
    .unwrap();
    ok(&ipg(&["grid", "--config", p(&cfg), "--out", p(dir.path())]));
    let table =
        ipg_core::harness::parse_grid_csv(&fs::read_to_string(dir.path().join("summary.csv")).unwrap()).unwrap();
    assert_eq!(table.rows.len(), 4);
    assert!(table.rows[..2].iter().all(|r| r.error.is_none() && r.reps == 3));
    assert!(table.rows[2..].iter().all(|r| r.error.is_some()));
    let traces = fs::read_dir(dir.path().join("traces")).unwrap().count();
    assert_eq!(traces, 2 * 3 * 2);
}

#[test]
fn spectrum_prints_json() {
    let out = ipg(&["spectrum", "--dataset", "ash608", "--json"]);
    ok(&out);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["d"], 188);
    assert!((v["lambda_d"].as_f64().unwrap() - 1.43301).abs() < 1e-4);
}

#[test]
fn bounds_writes_json_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = ipg(&[
        "bounds",
        "--dataset",
        SYN,
        "--noise",
        "observation",
        "--horizon",
        "20",
        "--out",
        p(dir.path()),
    ]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).contains("observation floor"));
    let rows = ipg_core::harness::parse_trace_csv(&fs::read_to_string(dir.path().join("bounds.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 21);
    assert!(dir.path().join("bounds.json").exists());
    assert!(!ipg(&["bounds", "--dataset", SYN, "--method", "gd"]).status.success());
}

#[test]
fn version_flag_works() {
    let out = ipg(&["--version"]);
    ok(&out);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ipg "));
}
