use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SUBCOMMANDS: [&str; 10] = ["ingest", "fixture", "seed", "score", "select", "run", "resume", "report", "compare", "sweep"];
const OUTPUTS: [&str; 5] = ["seed.ids", "scores.jsonl", "selection.json", "dataset.jsonl", "manifest.json"];

fn vitsel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vitsel")).args(args).env_remove("VITSEL_OUT_ROOT").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Work {
    dir: tempfile::TempDir,
}

impl Work {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn pool(&self, samples: usize) -> PathBuf {
        let pool = self.path("pool.jsonl");
        let n = samples.to_string();
        let o = vitsel(&["fixture", "--out", path_str(&pool), "--samples", &n, "--sources", "6", "--rng-seed", "3"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        pool
    }
}

const SMALL: [&str; 8] = ["--seed-size", "100", "--select-size", "300", "--group-size", "80", "--rng-seed", "5"];

fn with(base: &[&str], extra: &[&str]) -> Vec<String> {
    base.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn run_args(args: &[String]) -> Output {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    vitsel(&refs)
}

fn same_outputs(a: &Path, b: &Path) {
    for name in OUTPUTS {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name} differs");
    }
}

#[test]
fn run_writes_seed_plus_selection() {
    let w = Work::new();
    let pool = w.pool(7000);
    let out = w.path("d");
    let o = vitsel(&[
        "run", "--pool", path_str(&pool), "--seed-size", "1000", "--select-size", "5000", "--group-size", "500",
        "--temperature", "1.0", "--rng-seed", "7", "--out", path_str(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("effective configuration:") && err.contains("tau = 1.0") && err.contains("n1 = 1000"), "{err}");
    assert_eq!(fs::read_to_string(out.join("dataset.jsonl")).unwrap().lines().count(), 6000);
    assert!(!out.join(".lock").exists());
}

#[test]
fn zero_temperature_is_a_validation_error() {
    let w = Work::new();
    let pool = w.pool(200);
    let o = vitsel(&["run", "--pool", path_str(&pool), "--temperature", "0", "--out", path_str(&w.path("d"))]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("tau > 0"), "{}", stderr(&o));
    let o = vitsel(&["run", "--pool", path_str(&pool), "--temperature", "-1", "--out", path_str(&w.path("d"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_score_file_is_a_data_error() {
    let w = Work::new();
    let pool = w.pool(600);
    let args = with(&["select", "--pool", path_str(&pool), "--scores", "missing.jsonl", "--out", path_str(&w.path("d"))], &SMALL);
    let o = run_args(&args);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&vitsel(&[])), 1);
    assert_eq!(code(&vitsel(&["run", "--no-such-flag"])), 1);
    assert_eq!(code(&vitsel(&["frobnicate"])), 1);
    assert_eq!(code(&vitsel(&["run", "--pool", "p", "--strategy", "best"])), 1);
    assert_eq!(code(&vitsel(&["--help"])), 0);
    assert_eq!(code(&vitsel(&["--version"])), 0);
}

#[test]
fn oversized_allocation_is_a_validation_error() {
    let w = Work::new();
    let pool = w.pool(300);
    let args = with(&["run", "--pool", path_str(&pool), "--out", path_str(&w.path("d"))], &SMALL);
    let o = run_args(&args);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("exceeds the pool size"));
}

#[test]
fn run_equals_composed_stages() {
    let w = Work::new();
    let pool = w.pool(800);
    let whole = w.path("whole");
    let staged = w.path("staged");
    assert_eq!(code(&run_args(&with(&["run", "--pool", path_str(&pool), "--out", path_str(&whole)], &SMALL))), 0);
    for cmd in ["seed", "score", "select"] {
        let o = run_args(&with(&[cmd, "--pool", path_str(&pool), "--out", path_str(&staged)], &SMALL));
        assert_eq!(code(&o), 0, "{cmd}: {}", stderr(&o));
    }
    same_outputs(&whole, &staged);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let w = Work::new();
    let pool = w.pool(800);
    for (dir, jobs) in [("j1", "1"), ("j8", "8")] {
        let o = run_args(&with(&["run", "--pool", path_str(&pool), "--out", path_str(&w.path(dir)), "--jobs", jobs], &SMALL));
        assert_eq!(code(&o), 0);
    }
    same_outputs(&w.path("j1"), &w.path("j8"));
}

#[test]
fn resume_continues_and_guards_config() {
    let w = Work::new();
    let pool = w.pool(800);
    let out = w.path("d");
    assert_eq!(code(&run_args(&with(&["seed", "--pool", path_str(&pool), "--out", path_str(&out)], &SMALL))), 0);
    let o = vitsel(&["resume", "--out", path_str(&out), "--temperature", "0.5"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("configuration differs"), "{}", stderr(&o));
    let o = vitsel(&["resume", "--out", path_str(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("tau = 1.0"));
    assert_eq!(code(&run_args(&with(&["run", "--pool", path_str(&pool), "--out", path_str(&w.path("ref"))], &SMALL))), 0);
    same_outputs(&out, &w.path("ref"));

    assert_eq!(code(&vitsel(&["resume", "--out", path_str(&w.path("nothing"))])), 2);
}

#[test]
fn tampered_artifact_is_a_data_error() {
    let w = Work::new();
    let pool = w.pool(800);
    let out = w.path("d");
    assert_eq!(code(&run_args(&with(&["score", "--pool", path_str(&pool), "--out", path_str(&out)], &SMALL))), 0);
    let scores = out.join("scores.jsonl");
    let text = fs::read_to_string(&scores).unwrap();
    fs::write(&scores, text.replacen("e", "E", 1)).unwrap();
    let o = vitsel(&["resume", "--out", path_str(&out)]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("scores.jsonl"));
}

#[test]
fn locked_directory_is_refused() {
    let w = Work::new();
    let pool = w.pool(800);
    let out = w.path("d");
    fs::create_dir_all(&out).unwrap();
    fs::write(out.join(".lock"), "123\n").unwrap();
    let o = run_args(&with(&["run", "--pool", path_str(&pool), "--out", path_str(&out)], &SMALL));
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("locked"));
}

#[test]
fn out_root_from_environment() {
    let w = Work::new();
    let pool = w.pool(800);
    let root = w.path("root");
    let args = with(&["run", "--pool", path_str(&pool)], &SMALL);
    let o = Command::new(env!("CARGO_BIN_EXE_vitsel")).args(&args).env("VITSEL_OUT_ROOT", &root).output().unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let printed = PathBuf::from(String::from_utf8(o.stdout).unwrap().trim());
    assert!(printed.starts_with(&root));
    assert!(printed.join("manifest.json").exists());
    assert_eq!(code(&run_args(&args)), 1);
}

#[test]
fn ingest_reports_stats() {
    let w = Work::new();
    let pool = w.pool(120);
    let o = vitsel(&["ingest", "--pool", path_str(&pool)]);
    assert_eq!(code(&o), 0);
    let stats: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(stats["total"], 120);
    assert_eq!(stats["per_source"]["src0"], 20);

    let mut text = fs::read_to_string(&pool).unwrap();
    text.push_str("garbage\n");
    fs::write(&pool, text).unwrap();
    assert_eq!(code(&vitsel(&["ingest", "--pool", path_str(&pool)])), 3);
    let canon = w.path("canon.jsonl");
    let o = vitsel(&["ingest", "--pool", path_str(&pool), "--lenient", "--canonical", path_str(&canon)]);
    assert_eq!(code(&o), 0);
    let stats: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(stats["malformed"], 1);
    assert_eq!(fs::read_to_string(&canon).unwrap().lines().count(), 120);
}

#[test]
fn report_compare_and_sweep_write_tables() {
    let w = Work::new();
    let pool = w.pool(800);
    let out = w.path("d");
    assert_eq!(code(&run_args(&with(&["run", "--pool", path_str(&pool), "--out", path_str(&out)], &SMALL))), 0);
    let o = vitsel(&["report", "--out", path_str(&out), "--top", "2", "--bottom", "2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["selected"], 300);
    let hist: u64 = report["histogram"]["counts"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(hist, 300);
    assert!(out.join("groups.csv").exists());
    let md = fs::read_to_string(out.join("exemplars.md")).unwrap();
    assert!(md.contains("## Highest necessity") && md.contains("**human:**"));

    let cmp = w.path("cmp");
    let o = run_args(&with(&["compare", "--pool", path_str(&pool), "--out", path_str(&cmp), "--strategies", "nbgs,top"], &SMALL));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(fs::read_to_string(cmp.join("compare.csv")).unwrap().lines().count(), 3);
    assert!(cmp.join("compare.json").exists());

    let grid = w.path("grid.txt");
    fs::write(&grid, "# temperature ablation\ntau = 0.5, 2.0\nstrategy = nbgs, random\n").unwrap();
    let sweep = w.path("sweep");
    let o = run_args(&with(&["sweep", "--pool", path_str(&pool), "--grid", path_str(&grid), "--out", path_str(&sweep)], &SMALL));
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rows = fs::read_to_string(sweep.join("sweep.csv")).unwrap();
    assert_eq!(rows.lines().count(), 5);
    assert!(rows.contains("\"tau=0.5,strategy=nbgs\""));
    assert!(sweep.join("run-003").join("manifest.json").exists());

    fs::write(&grid, "temperature = 1\n").unwrap();
    let o = run_args(&with(&["sweep", "--pool", path_str(&pool), "--grid", path_str(&grid), "--out", path_str(&sweep)], &SMALL));
    assert_eq!(code(&o), 2);
}

fn snapshot(name: &str, actual: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/snapshots").join(format!("{name}.txt"));
    if std::env::var_os("UPDATE_SNAPSHOTS").is_some() {
        fs::create_dir_all(path.parent().unwrap()).unwrap();
        fs::write(&path, actual).unwrap();
        return;
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing snapshot {}; rerun with UPDATE_SNAPSHOTS=1", path.display()));
    assert_eq!(actual, expected, "help for {name} changed; rerun with UPDATE_SNAPSHOTS=1 if intended");
}

#[test]
fn help_snapshots() {
    let top = String::from_utf8(vitsel(&["--help"]).stdout).unwrap();
    for sub in SUBCOMMANDS {
        assert!(top.contains(sub), "top-level help lacks {sub}");
    }
    snapshot("vitsel", &top);
    for sub in SUBCOMMANDS {
        let o = vitsel(&[sub, "--help"]);
        assert_eq!(code(&o), 0);
        snapshot(sub, &String::from_utf8(o.stdout).unwrap());
    }
    let run = String::from_utf8(vitsel(&["run", "--help"]).stdout).unwrap();
    for flag in [
        "--pool", "--out", "--config", "--seed-size", "--select-size", "--group-size", "--temperature", "--strategy",
        "--orientation", "--rng-seed", "--length-norm", "--lenient", "--jobs", "--scores", "--ngram-order",
    ] {
        assert!(run.contains(flag), "run --help lacks {flag}");
    }
}
