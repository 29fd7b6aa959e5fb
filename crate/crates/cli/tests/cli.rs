use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn evomarket(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evomarket"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn lifecycle_text(dir: &Path) -> String {
    let o = evomarket(&["preset", "lifecycle-bwtv", "--print"], dir);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    stdout(&o)
}

#[test]
fn preset_without_name_lists_the_builtins() {
    let dir = tempfile::tempdir().unwrap();
    let o = evomarket(&["preset"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    for name in [
        "gibrat-lognormal",
        "pareto-tail",
        "laplace-price",
        "size-variance",
        "lifecycle-bwtv",
        "profit-invariant",
    ] {
        assert!(text.contains(name), "{text}");
    }
}

#[test]
fn run_then_verify_then_tamper() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bwtv.toml");
    fs::write(&file, lifecycle_text(dir.path())).unwrap();

    let o = evomarket(&["run", "bwtv.toml", "--seeds", "3,4", "--out", "out", "--threads", "2"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = dir.path().join("out");
    for seed in [3, 4] {
        assert!(out.join(format!("seed-{seed}/timeseries.csv")).exists());
    }
    let manifest = fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 4"), "{manifest}");

    let o = evomarket(&["verify", "out"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let table = out.join("seed-3/timeseries.csv");
    let mut text = fs::read_to_string(&table).unwrap();
    text.push_str("999,0,0,0,0,0,0,0,0,0,0\n");
    fs::write(&table, text).unwrap();
    let o = evomarket(&["verify", "out"], dir.path());
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("seed-3"), "{}", stderr(&o));
}

#[test]
fn invalid_parameter_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let text = lifecycle_text(dir.path()).replace("upper_share = 0.02", "upper_share = 1.5");
    fs::write(dir.path().join("bad.toml"), text).unwrap();
    let o = evomarket(&["run", "bad.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("upper_share out of [0,1]"), "{}", stderr(&o));
}

#[test]
fn unknown_keys_warn_unless_strict() {
    let dir = tempfile::tempdir().unwrap();
    let text = lifecycle_text(dir.path()).replace("echo_depth = 3", "echo_depth = 3\necho_dept = 4");
    fs::write(dir.path().join("typo.toml"), text).unwrap();

    let o = evomarket(&["run", "typo.toml", "--out", "lenient"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning: typo.toml:"), "{}", stderr(&o));

    let o = evomarket(&["run", "typo.toml", "--strict", "--out", "strict"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("lifecycle.echo_dept"), "{}", stderr(&o));
    assert!(!dir.path().join("strict").exists());
}

#[test]
fn failed_runs_exit_with_runtime_code_and_keep_the_rest() {
    let dir = tempfile::tempdir().unwrap();
    let o = evomarket(&["preset", "profit-invariant", "--print"], dir.path());
    let text = stdout(&o)
        .replacen("[micro]\n", "[micro]\nfitness_mode = \"decomposed\"\n", 1)
        .replace("reproduction = 0.0", "reproduction = 1.0")
        .replace("horizon = 2000", "horizon = 200");
    fs::write(
        dir.path().join("sweep.toml"),
        format!("{text}\n[sweep]\nkey = \"micro.dt\"\nvalues = [1.0, 1e6]\n"),
    )
    .unwrap();
    let o = evomarket(&["run", "sweep.toml", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let report = stdout(&o);
    assert!(report.contains("micro_dt_1: ok"), "{report}");
    assert!(report.contains("micro_dt_1000000: failed"), "{report}");
    assert!(dir.path().join("out/manifest.json").exists());
}

#[test]
fn invalid_sweep_value_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{}\n[sweep]\nkey = \"lifecycle.price_decline_rate\"\nvalues = [0.2, -0.1]\n",
        lifecycle_text(dir.path())
    );
    fs::write(dir.path().join("sweep.toml"), text).unwrap();
    let o = evomarket(&["run", "sweep.toml", "--out", "out"], dir.path());
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn fit_reads_a_column_and_reports_parameters() {
    let dir = tempfile::tempdir().unwrap();
    let n = 2000;
    let mut csv = String::from("# generated\ngrowth[-],other\n");
    for i in 0..n {
        let p = (i as f64 + 0.5) / n as f64;
        let x = if p < 0.5 { 0.3 * (2.0 * p).ln() } else { -0.3 * (2.0 * (1.0 - p)).ln() };
        csv.push_str(&format!("{x},1\n"));
    }
    fs::write(dir.path().join("g.csv"), csv).unwrap();

    let o = evomarket(&["fit", "g.csv", "--family", "laplace", "--resamples", "0"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let scale_row = text.lines().find(|l| l.starts_with("laplace,scale,")).unwrap();
    let scale: f64 = scale_row.split(',').nth(2).unwrap().parse().unwrap();
    assert!((scale - 0.3).abs() < 0.01, "{text}");
    assert!(text.contains("p_value="), "{text}");

    let o = evomarket(&["fit", "g.csv", "--family", "lognormal", "--column", "growth"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));

    let o = evomarket(&["fit", "g.csv", "--family", "cauchy"], dir.path());
    assert_eq!(o.status.code(), Some(1));
}
