//! End-to-end checks of the `aspector` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_aspector"));
    c.env_remove("ASPECTOR_CONFIG").env_remove("RUST_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn aspector")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// One small world shared by every test in this file.
fn world() -> &'static Path {
    static DIR: OnceLock<(TempDir, PathBuf)> = OnceLock::new();
    let (_, path) = DIR.get_or_init(|| {
        let tmp = TempDir::new().unwrap();
        let path = tmp.path().join("w");
        let o = run(&[
            "synth",
            "--classes",
            "2",
            "--entities-per-class",
            "6",
            "--patterns",
            "4",
            "--duplicated",
            "2",
            "--seed",
            "11",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert!(o.status.success(), "synth failed: {}", stderr(&o));
        (tmp, path)
    });
    path
}

fn first_query() -> String {
    let text = fs::read_to_string(world().join("queries.tsv")).unwrap();
    text.lines().next().unwrap().split('\t').next().unwrap().to_string()
}

/// Ask `aspects` for a report and read back the effective n and sigma
/// through observable output: the number of selected groups is bounded by n.
fn selected_count(extra: &[&str], config: Option<&Path>) -> usize {
    let q = first_query();
    let data = world().to_str().unwrap().to_string();
    let mut args = vec!["aspects", "--data", &data, "--query", &q];
    args.extend_from_slice(extra);
    let mut cmd = bin();
    cmd.args(&args);
    if let Some(p) = config {
        cmd.env("ASPECTOR_CONFIG", p);
    }
    let o = cmd.output().unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    v["selected"].as_array().unwrap().len()
}

#[test]
fn config_precedence_matrix() {
    let tmp = TempDir::new().unwrap();
    let file = tmp.path().join("a.conf");
    fs::write(&file, "# shown aspects\nn = 3\n").unwrap();
    let f = file.to_str().unwrap();

    // The world plants four aspect families, so the default n = 8 shows all.
    assert_eq!(selected_count(&[], None), 4);
    assert_eq!(selected_count(&["--config", f], None), 3);
    assert_eq!(selected_count(&[], Some(&file)), 3, "env var names the config file");
    assert_eq!(selected_count(&["--config", f, "--set", "n=2"], None), 2);
    assert_eq!(selected_count(&["--config", f, "--set", "n=2", "--n", "1"], None), 1);
    assert_eq!(selected_count(&["--set", "n=2", "--n", "1"], None), 1);
    assert_eq!(selected_count(&["--n", "1"], Some(&file)), 1);
}

#[test]
fn identical_argv_gives_identical_bytes() {
    let q = first_query();
    let data = world().to_str().unwrap();
    let a = run(&["aspects", "--data", data, "--query", &q]);
    let b = run(&["aspects", "--data", data, "--query", &q, "--threads", "3"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn aspects_emits_report_json() {
    let q = first_query();
    let o = run(&["aspects", "--data", world().to_str().unwrap(), "--query", &q]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["status"], "ok");
    assert_eq!(v["query"]["entity"], q.as_str());
    assert!(!v["selected"].as_array().unwrap().is_empty());

    let t = run(&["aspects", "--data", world().to_str().unwrap(), "--query", &q, "--text"]);
    assert!(stdout(&t).starts_with(&format!("query: {q}")));
}

#[test]
fn unknown_query_is_empty_with_exit_2() {
    let o = run(&["aspects", "--data", world().to_str().unwrap(), "--query", "zzzz qqqq"]);
    assert_eq!(o.status.code(), Some(2));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["status"], "empty");
}

#[test]
fn entity_must_prefix_query() {
    let q = first_query();
    let o = run(&["aspects", "--data", world().to_str().unwrap(), "--query", &q, "--entity", "other"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_file_exits_2_and_names_path() {
    let tmp = TempDir::new().unwrap();
    let missing = tmp.path().join("nope").join("log.tsv");
    let o = run(&["sessionize", "--log", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(missing.to_str().unwrap()), "{}", stderr(&o));

    let o = run(&["aspects", "--data", world().to_str().unwrap(), "--query", "x", "--config", "/no/such.conf"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such.conf"));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["aspects", "--bogus-flag"]).status.code(), Some(1));
    assert_eq!(run(&["sessionize", "--set", "nokey=1", "--data", "."]).status.code(), Some(1));
    assert_eq!(run(&["sessionize", "--set", "sigma"]).status.code(), Some(1));
    assert_eq!(run(&["sessionize", "--sigma", "1.5", "--data", "."]).status.code(), Some(1));
    assert_eq!(run(&["sessionize", "--variant", "median", "--data", "."]).status.code(), Some(1));
    assert_eq!(run(&["sessionize"]).status.code(), Some(1), "no log path at all");
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn sweep_sigma_writes_csv() {
    let w = world();
    let gold = w.join("gold.jsonl");
    let o = run(&[
        "sweep-sigma",
        "--data",
        w.to_str().unwrap(),
        "--gold",
        gold.to_str().unwrap(),
        "--sigmas",
        "0.1,0.35",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "sigma,mean_f");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("0.350000,"));
}

#[test]
fn cluster_f_has_row_per_gold_query() {
    let w = world();
    let gold = w.join("gold.jsonl");
    let o = run(&["eval-cluster-f", "--data", w.to_str().unwrap(), "--gold", gold.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = fs::read_to_string(&gold).unwrap().lines().count();
    let out = stdout(&o);
    assert_eq!(out.lines().count(), rows + 1);
    for line in out.lines().skip(1) {
        let f: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&f));
    }
}

#[test]
fn sessionize_respects_gap_override() {
    let tmp = TempDir::new().unwrap();
    let log = tmp.path().join("log.tsv");
    fs::write(&log, "u1\t0\ta\nu1\t100\tb\nu1\t400\tc\n").unwrap();
    let count = |gap: &str| {
        let o = run(&["sessionize", "--log", log.to_str().unwrap(), "--session-gap", gap]);
        assert!(o.status.success(), "{}", stderr(&o));
        let out = stdout(&o);
        let ids: std::collections::BTreeSet<String> =
            out.lines().map(|l| l.split('\t').next().unwrap().to_string()).collect();
        ids.len()
    };
    assert_eq!(count("1800"), 1);
    assert_eq!(count("300"), 2);
    assert_eq!(count("50"), 3);
}

#[test]
fn suite_writes_reports_and_csvs() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("suite");
    let w = world();
    let queries = w.join("queries.tsv");
    let o = run(&[
        "suite",
        "--data",
        w.to_str().unwrap(),
        "--queries",
        queries.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let n = fs::read_to_string(&queries).unwrap().lines().count();
    assert_eq!(fs::read_to_string(out.join("nsim.csv")).unwrap().lines().count(), n + 1);
    assert_eq!(fs::read_to_string(out.join("coverage.csv")).unwrap().lines().count(), n + 1);
    assert!(out.join("reports").join("0000.json").exists());
}
