use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use aoi_lab::commands::{ladder, sweep_points};
use aoi_lab::config::TimeConstant;
use aoi_lab::RunConfig;

const SMALL: [&str; 6] = [
    "--set",
    "t_grid={\"start\":0,\"stop\":12,\"step\":0.5}",
    "--set",
    "x_grid={\"start\":0,\"stop\":10,\"step\":0.02}",
    "--set",
    "simulation.n_paths=4000",
];

fn run(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_aoi-lab"));
    cmd.args(args).env_remove("AOI_LAB_THREADS");
    if let Some(n) = threads {
        cmd.env("AOI_LAB_THREADS", n);
    }
    cmd.output().expect("binary runs")
}

fn with_out<'a>(cmd: &'a str, out: &'a Path, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd, "--out", out.to_str().unwrap()];
    v.extend_from_slice(&SMALL);
    v.extend_from_slice(extra);
    v
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(run(&["calibrate"], None).status.code(), Some(0));
    assert_eq!(run(&["frobnicate"], None).status.code(), Some(1));
    assert_eq!(run(&["exact", "--set", "tau=oops", "--out", out], None).status.code(), Some(1));
    assert_eq!(run(&["exact", "--config", "/no/such/file.json"], None).status.code(), Some(1));
    assert_eq!(run(&["calibrate", "--set", "link.mu=0.4"], None).status.code(), Some(2));
    assert_eq!(run(&["calibrate", "--threads", "0"], None).status.code(), Some(1));
    assert_eq!(run(&["--version"], None).status.code(), Some(0));
}

#[test]
fn calibrate_prints_residuals() {
    let out = run(&["calibrate"], None);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["s_hat"].as_f64().unwrap() - 1.0857).abs() < 1e-4);
    assert!((v["mu_hat"].as_f64().unwrap() + 1.2824).abs() < 1e-4);
    for key in ["mean", "sd", "ratio"] {
        assert!(v["residuals"][key].as_f64().unwrap().abs() < 1e-8, "{key}");
    }
}

#[test]
fn exact_writes_all_files_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let args = with_out("exact", dir.path(), &["--seed", "9"]);
    let status = run(&args, None);
    assert_eq!(status.status.code(), Some(0), "{}", String::from_utf8_lossy(&status.stderr));
    for (name, header) in [
        ("ccdf.csv", "t,x,ccdf"),
        ("heatmap.csv", "t,x,pmf"),
        ("timeavg.csv", "x,ccdf_avg"),
        ("percentiles.csv", "link,c,tau,s,p10,p25,p50,p75,p90"),
    ] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        assert_eq!(text.lines().next(), Some(header), "{name}");
    }
    let ccdf = fs::read_to_string(dir.path().join("ccdf.csv")).unwrap();
    assert_eq!(ccdf.lines().count(), 1 + 25 * 501);

    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("meta.json")).unwrap()).unwrap();
    assert_eq!(meta["seed"], 9);
    assert!(meta["wall_time_s"].as_f64().unwrap() >= 0.0);
    assert_eq!(meta["engine_version"], env!("CARGO_PKG_VERSION"));
    let echoed: RunConfig = serde_json::from_value(meta["config"].clone()).unwrap();
    let mut overrides: Vec<String> = SMALL.chunks(2).map(|p| p[1].to_string()).collect();
    overrides.push("simulation.seed=9".into());
    assert_eq!(echoed, RunConfig::load(None, &overrides).unwrap());

    // the echoed config reproduces the run
    let cfg_path = dir.path().join("echo.json");
    fs::write(&cfg_path, serde_json::to_string(&meta["config"]).unwrap()).unwrap();
    assert_eq!(RunConfig::load(Some(&cfg_path), &[]).unwrap(), echoed);
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let one = tempfile::tempdir().unwrap();
    let many = tempfile::tempdir().unwrap();
    for cmd in ["exact", "simulate"] {
        assert!(run(&with_out(cmd, one.path(), &[]), Some("1")).status.success());
        assert!(run(&with_out(cmd, many.path(), &["--threads", "4"]), None).status.success());
    }
    for name in ["ccdf.csv", "heatmap.csv", "timeavg.csv", "percentiles.csv", "ccdf_empirical.csv", "paths.csv"] {
        let a = fs::read(one.path().join(name)).unwrap();
        let b = fs::read(many.path().join(name)).unwrap();
        assert!(a == b, "{name} differs between thread counts");
    }
}

#[test]
fn compare_passes_on_a_small_run() {
    let dir = tempfile::tempdir().unwrap();
    let args = with_out(
        "compare",
        dir.path(),
        &["--set", "x_grid={\"start\":0,\"stop\":10,\"step\":0.5}", "--set", "compare.z_limit=5"],
    );
    let out = run(&args, None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("compare.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], true);
    assert_eq!(report["ladder"].as_array().unwrap().len(), 4);
}

#[test]
fn compare_fails_with_exit_four() {
    let dir = tempfile::tempdir().unwrap();
    // an impossible agreement requirement
    let args = with_out("compare", dir.path(), &["--set", "compare.z_limit=0", "--set", "simulation.n_paths=50"]);
    assert_eq!(run(&args, None).status.code(), Some(4));
}

#[test]
fn sweep_reports_partial_failures() {
    let dir = tempfile::tempdir().unwrap();
    let args = with_out(
        "sweep",
        dir.path(),
        &["--set", "sweep.c=[\"0\",\"inf\"]", "--set", "sweep.s=[0.75,-1]"],
    );
    assert_eq!(run(&args, None).status.code(), Some(5));
    let rows = fs::read_to_string(dir.path().join("percentiles.csv")).unwrap();
    assert_eq!(rows.lines().count(), 3);
    assert!(rows.contains("shifted-lognormal,0,2,0.75,") && rows.contains("shifted-lognormal,inf,2,0.75,"));
    assert!(dir.path().join("sweep_failures.json").exists());
}

#[test]
fn sweep_bounds_finite_time_constants() {
    let cfg = RunConfig::load(
        None,
        &[
            "sweep.c=[\"0\",1,10,\"inf\"]".into(),
            "sweep.tau=[0.5]".into(),
            "link.kind=censored-normal".into(),
        ],
    )
    .unwrap();
    let points = sweep_points(&cfg);
    assert_eq!(points.len(), 4);
    let rows: Vec<_> = points
        .iter()
        .map(|&(c, tau, s)| aoi_lab::commands::sweep_row(&cfg, c, tau, s, Default::default()).unwrap())
        .collect();
    assert_eq!(rows[0].c, 0.0);
    assert_eq!(rows[3].c, f64::INFINITY);
    for row in &rows[1..3] {
        for i in 0..5 {
            assert!(rows[0].values[i] <= row.values[i] + 5e-5);
            assert!(row.values[i] <= rows[3].values[i] + 5e-5);
        }
    }
}

#[test]
fn iid_percentiles_shrink_with_tau() {
    let cfg = RunConfig::load(None, &["correlation.c=0".into()]).unwrap();
    let rows: Vec<_> = [2.0, 1.0, 0.5, 0.1]
        .iter()
        .map(|&tau| aoi_lab::commands::sweep_row(&cfg, Some(TimeConstant(0.0)), tau, None, Default::default()).unwrap())
        .collect();
    for pair in rows.windows(2) {
        assert!(pair[1].values[2] < pair[0].values[2], "{:?}", rows.iter().map(|r| r.values[2]).collect::<Vec<_>>());
    }
}

#[test]
fn ladder_runs_from_iid_to_frozen() {
    let modes = ladder(&[0.1, 0.5, 0.05]).unwrap();
    let names: Vec<String> = modes.iter().map(|m| format!("{m:?}")).collect();
    assert!(names[0].contains("Iid") && names[4].contains("Frozen"));
    assert!(names[1].contains("0.5") && names[3].contains("0.05"));
    assert!(ladder(&[-1.0]).is_err());
}
