use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tollgate(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tollgate")).current_dir(dir).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn gen_market_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let o = tollgate(tmp.path(), &["gen-market", "--seed", "7", "--n-tools", "20", "--out", out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = dir_contents(&tmp.path().join("a"));
    assert_eq!(a.len(), 2);
    assert_eq!(a, dir_contents(&tmp.path().join("b")));
    let task: Value = serde_json::from_slice(&a.iter().find(|f| f.0.ends_with(".task.json")).unwrap().1).unwrap();
    assert_eq!(task["market"]["tools"].as_array().unwrap().len(), 20);
}

#[test]
fn intent_bench_is_always_feasible() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tollgate(tmp.path(), &["bench", "--mode", "intent", "--backend", "synthetic", "--tasks", "100", "--out", "r"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let metrics: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("r/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["n_tasks"], 100);
    assert_eq!(metrics["feasible_rate"], 1.0);
    for f in ["metrics.csv", "trajectories.jsonl", "timing.json", "config.toml"] {
        assert!(tmp.path().join("r").join(f).exists(), "{f}");
    }
}

#[test]
fn bench_report_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    for (out, workers) in [("s", "1"), ("p", "4")] {
        let o = tollgate(tmp.path(), &["bench", "--mode", "mco", "--tasks", "40", "--seed", "3", "--workers", workers, "--out", out]);
        assert_eq!(code(&o), 0);
    }
    for f in ["metrics.json", "metrics.csv", "trajectories.jsonl"] {
        assert_eq!(fs::read(tmp.path().join("s").join(f)).unwrap(), fs::read(tmp.path().join("p").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn validate_names_a_broken_ledger() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&tollgate(tmp.path(), &["bench", "--tasks", "5", "--out", "r"])), 0);
    let log = tmp.path().join("r/trajectories.jsonl");
    let ok = tollgate(tmp.path(), &["validate", log.to_str().unwrap()]);
    assert_eq!(code(&ok), 0);
    assert!(stdout(&ok).contains("ok: 5 trajectories"));

    let text = fs::read_to_string(&log).unwrap();
    let mut corrupted = false;
    let lines: Vec<String> = text
        .lines()
        .map(|line| {
            let mut v: Value = serde_json::from_str(line).unwrap();
            if !corrupted && v["record"] == "step" && v["executed"] == true {
                v["budget_after"] = Value::String("1000".into());
                corrupted = true;
            }
            v.to_string()
        })
        .collect();
    assert!(corrupted);
    let bad = tmp.path().join("bad.jsonl");
    fs::write(&bad, lines.join("\n") + "\n").unwrap();
    let o = tollgate(tmp.path(), &["validate", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("[ledger]"), "{}", stdout(&o));
}

#[test]
fn validate_accepts_a_thousand_engine_logs() {
    let tmp = tempfile::tempdir().unwrap();
    for (mode, seed) in [("raw", "11"), ("intent", "12")] {
        let out = format!("r-{mode}");
        let o = tollgate(tmp.path(), &["bench", "--mode", mode, "--tasks", "500", "--seed", seed, "--out", &out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let v = tollgate(tmp.path(), &["validate", &format!("{out}/trajectories.jsonl")]);
        assert_eq!(code(&v), 0, "{}", stdout(&v));
        assert!(stdout(&v).contains("ok: 500 trajectories"));
    }
}

fn resolved(dir: &Path, args: &[&str]) -> toml::Table {
    let mut full = vec!["bench", "--dry-run"];
    full.extend_from_slice(args);
    let o = tollgate(dir, &full);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    stdout(&o).parse().unwrap()
}

fn get<'a>(t: &'a toml::Table, path: &str) -> &'a toml::Value {
    let mut parts = path.split('.');
    let mut v = &t[parts.next().unwrap()];
    for p in parts {
        v = &v[p];
    }
    v
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let file = r#"
mode = "mco"
backend = "scripted"
seed = 5
tasks = 7
tasks_dir = "from-file"
out = "file-out"
workers = 2
budget_ratio = "1/2"
price_factor = "3/2"

[intent]
gamma = "1/4"
delta = "0.2"
"#;
    fs::write(tmp.path().join("run.toml"), file).unwrap();
    let from_file = resolved(tmp.path(), &["--config", "run.toml"]);
    let cases = [
        ("mode", "--mode", "raw", "mco", "raw"),
        ("backend", "--backend", "synthetic", "scripted", "synthetic"),
        ("seed", "--seed", "9", "5", "9"),
        ("tasks", "--tasks", "3", "7", "3"),
        ("tasks_dir", "--tasks-dir", "cli-dir", "from-file", "cli-dir"),
        ("out", "--out", "cli-out", "file-out", "cli-out"),
        ("workers", "--workers", "1", "2", "1"),
        ("budget_ratio", "--budget-ratio", "0.75", "0.5", "0.75"),
        ("price_factor", "--price-factor", "2", "1.5", "2"),
        ("intent.gamma", "--gamma", "1/3", "0.25", "1/3"),
        ("intent.delta", "--delta", "0.05", "0.2", "0.05"),
    ];
    let text = |v: &toml::Value| v.as_str().map(String::from).unwrap_or_else(|| v.to_string());
    for (key, flag, value, in_file, after) in cases {
        assert_eq!(text(get(&from_file, key)), in_file, "{key} from file");
        let both = resolved(tmp.path(), &["--config", "run.toml", flag, value]);
        assert_eq!(text(get(&both, key)), after, "{key} from flag");
        let alone = resolved(tmp.path(), &[flag, value]);
        assert_eq!(text(get(&alone, key)), after, "{key} flag without file");
    }
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&tollgate(tmp.path(), &["bench", "--no-such-flag"])), 2);
    assert_eq!(code(&tollgate(tmp.path(), &["bench", "--gamma", "abc"])), 2);
    assert_eq!(code(&tollgate(tmp.path(), &["bench", "--gamma", "-1", "--dry-run"])), 2);
    fs::write(tmp.path().join("bad.toml"), "unknown_key = 1\n").unwrap();
    assert_eq!(code(&tollgate(tmp.path(), &["bench", "--config", "bad.toml"])), 2);
    assert_eq!(code(&tollgate(tmp.path(), &["bench", "--config", "missing.toml"])), 2);
    assert_eq!(code(&tollgate(tmp.path(), &["calibrate"])), 2);
}

#[test]
fn run_prints_a_summary_for_a_task_file() {
    let tmp = tempfile::tempdir().unwrap();
    let g = tollgate(tmp.path(), &["gen-market", "--seed", "4", "--out", "tasks"]);
    let task = stdout(&g).trim().to_string();
    let o = tollgate(tmp.path(), &["run", "--task", &task, "--backend", "scripted", "--out", "one"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("feasible    true"), "{text}");
    assert!(tmp.path().join("one/trajectory.jsonl").exists());
}

#[test]
fn gamma_sweep_writes_one_point_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tollgate(tmp.path(), &["sweep", "--kind", "gamma", "--values", "0.25,0.5,1", "--tasks", "20", "--out", "s"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let points: Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("s/sweep.json")).unwrap()).unwrap();
    let points = points.as_array().unwrap();
    assert_eq!(points.len(), 3);
    assert!(points.iter().all(|p| p["metrics"]["feasible_rate"] == 1.0));
    let unsorted = tollgate(tmp.path(), &["sweep", "--kind", "gamma", "--values", "1,0.5", "--tasks", "2"]);
    assert_eq!(code(&unsorted), 2);
}

#[test]
fn calibrate_recovers_the_temperature() {
    let tmp = tempfile::tempdir().unwrap();
    let o = tollgate(tmp.path(), &["calibrate", "--synthetic", "5000", "--t-star", "2", "--out", "cal.json"]);
    assert_eq!(code(&o), 0);
    let result: Value = serde_json::from_slice(&fs::read(tmp.path().join("cal.json")).unwrap()).unwrap();
    let t = result["temperature"].as_f64().unwrap();
    assert!((t - 2.0).abs() < 0.3, "{t}");
    fs::write(tmp.path().join("s.csv"), "score,label\n1,1\n2,1\n").unwrap();
    assert_eq!(code(&tollgate(tmp.path(), &["calibrate", "--samples", "s.csv"])), 1);
}
