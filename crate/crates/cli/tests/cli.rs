use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fdr-forge"));
    cmd.env_remove("FDR_FORGE_THREADS");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn field<'a>(out: &'a str, key: &str) -> &'a str {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}: ")))
        .unwrap_or_else(|| panic!("no {key} in {out}"))
}

#[test]
fn adjust_bh_example() {
    let dir = TempDir::new().unwrap();
    let file = write(dir.path(), "p.csv", "0.01\n0.02\n0.9\n");
    let o = run(&["adjust", &file, "--proc", "bh", "--q", "0.05"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert_eq!(field(&out, "rejected"), "1,2");
    assert_eq!(field(&out, "threshold"), "0.02");
    let hat: f64 = field(&out, "fdr_hat").parse().unwrap();
    assert!((hat - 0.03).abs() < 1e-12);
}

#[test]
fn adjust_by_rejects_subset_of_bh() {
    let dir = TempDir::new().unwrap();
    let file = write(dir.path(), "p.json", "[0.001, 0.008, 0.02, 0.03, 0.5, 0.9]");
    let ids = |proc_: &str| -> Vec<usize> {
        let o = run(&["adjust", &file, "--proc", proc_, "--q", "0.1"]);
        assert!(o.status.success(), "{}", stderr(&o));
        let out = stdout(&o);
        let list = field(&out, "rejected");
        list.split(',').filter(|s| !s.is_empty()).map(|s| s.parse().unwrap()).collect()
    };
    let bh = ids("bh");
    let by = ids("by");
    assert_eq!(bh, vec![1, 2, 3, 4]);
    assert!(!by.is_empty() && by.len() < bh.len());
    assert!(by.iter().all(|i| bh.contains(i)));
}

#[test]
fn adjust_json_output_and_shapes() {
    let dir = TempDir::new().unwrap();
    let file = write(dir.path(), "p.csv", "pvalue\n0.001\n0.02\n0.9\n");
    let o = run(&["adjust", &file, "--proc", "step-up", "--q", "0.05", "--shape", "harmonic", "--json"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["rejected"], serde_json::json!([1]));
    assert_eq!(v["threshold"], serde_json::json!(0.001));

    let o = run(&["adjust", &file, "--proc", "step-up", "--shape", r#"{"nu": [[1, 0.5], [2, 0.5]]}"#]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&["adjust", &file, "--proc", "storey", "--lambda", "0.5", "--raw-storey"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn adjust_is_a_pure_function_of_input() {
    let dir = TempDir::new().unwrap();
    let file = write(dir.path(), "p.csv", "0.3\n0.001\n0.04\n0.04\n");
    let a = run(&["adjust", &file, "--proc", "storey"]);
    let b = run(&["adjust", &file, "--proc", "storey", "--threads", "3"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn adjust_errors() {
    let dir = TempDir::new().unwrap();
    let empty = write(dir.path(), "empty.csv", "");
    let o = run(&["adjust", &empty]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("no p-values"), "{}", stderr(&o));

    let bad = write(dir.path(), "bad.csv", "0.1\n1.5\n");
    let o = run(&["adjust", &bad]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("position 2"), "{}", stderr(&o));

    let garbled = write(dir.path(), "garbled.csv", "0.1\n0.2\nabc\n");
    let o = run(&["adjust", &garbled]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));

    let json = write(dir.path(), "bad.json", "[0.1, 0.2");
    assert_eq!(run(&["adjust", &json]).status.code(), Some(1));

    let ok = write(dir.path(), "ok.csv", "0.1\n");
    assert_eq!(run(&["adjust", &ok, "--proc", "bh", "--pi", "0.5"]).status.code(), Some(1));
    assert_eq!(run(&["adjust", &ok, "--q", "1.5"]).status.code(), Some(1));
    assert_eq!(run(&["adjust", &ok, "--proc", "nope"]).status.code(), Some(1));
}

#[test]
fn experiment_writes_verdict_and_tables() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("res");
    let o = run(&[
        "experiment", "counterexample", "--m", "2", "--q", "0.25", "--reps", "20000", "--seed", "5", "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("counterexample PASS"));
    let verdict: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("counterexample.json")).unwrap()).unwrap();
    assert_eq!(verdict["pass"], true);
    assert_eq!(verdict["seed"], 5);
    assert_eq!(verdict["config"]["n_reps"], 20000);
    assert_eq!(verdict["checks"].as_array().unwrap().len(), 3);
    let csv = fs::read_to_string(out.join("counterexample_fdr.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(!csv.contains('\r'));
}

#[test]
fn experiment_failure_exits_with_two() {
    // at q = 0.01 the excess q^2/4 is far below three standard errors
    let dir = TempDir::new().unwrap();
    let o = run(&[
        "experiment", "counterexample", "--q", "0.01", "--reps", "2000", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stdout(&o));
    assert!(stdout(&o).contains("counterexample FAIL"));
}

#[test]
fn experiment_usage_errors() {
    let dir = TempDir::new().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(run(&["experiment", "nope", "--out", d]).status.code(), Some(1));
    assert_eq!(run(&["experiment", "counterexample", "--lambda", "0.3", "--out", d]).status.code(), Some(1));
    assert_eq!(run(&["experiment", "counterexample", "--q", "0.7", "--out", d]).status.code(), Some(1));
    assert_eq!(run(&["experiment"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn asymptotic_experiment_with_m_list() {
    let dir = TempDir::new().unwrap();
    let o = run(&[
        "experiment", "asymptotic-bh", "--m-list", "100,1000", "--reps", "200", "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let conv = fs::read_to_string(dir.path().join("asymptotic-bh_convergence.csv")).unwrap();
    assert_eq!(conv.lines().count(), 1 + 3 * 2);
}

#[test]
fn experiment_csv_independent_of_threads() {
    let dir = TempDir::new().unwrap();
    let mut outputs = Vec::new();
    for (threads, via_env) in [("1", false), ("4", false), ("3", true)] {
        let out = dir.path().join(format!("t{threads}"));
        let mut cmd = bin();
        cmd.args(["experiment", "by-control", "--reps", "300", "--seed", "11", "--out", out.to_str().unwrap()]);
        if via_env {
            cmd.env("FDR_FORGE_THREADS", threads);
        } else {
            cmd.args(["--threads", threads]);
        }
        let o = cmd.output().unwrap();
        assert!(o.status.code() == Some(0) || o.status.code() == Some(2));
        outputs.push(fs::read(out.join("by-control_fdr.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
}

const SWEEP: &str = r#"{
  "seed": 7,
  "n_reps": 500,
  "generators": [
    {"kind": "classical_iid", "m": 20, "m0": 10},
    {"kind": "average_slopes", "m": 20, "m0": 10, "profile": {"slopes": [2.0], "alternative": {"power": {"exponent": 0.2}}}}
  ],
  "procedures": ["bh", "by"],
  "q": [0.1]
}"#;

#[test]
fn sweep_is_resumable() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "sweep.json", SWEEP);
    let out = dir.path().join("out");
    let o = run(&["sweep", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("computed: 4, reused: 0"), "{}", stdout(&o));
    let first = fs::read(out.join("sweep.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&first).lines().count(), 5);

    let cells: Vec<_> = fs::read_dir(out.join("cells")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(cells.len(), 4);
    let stamps: Vec<_> = cells.iter().map(|p| fs::metadata(p).unwrap().modified().unwrap()).collect();

    let o = run(&["sweep", &cfg, "--out", out.to_str().unwrap()]);
    assert!(stdout(&o).contains("computed: 0, reused: 4"), "{}", stdout(&o));
    assert_eq!(fs::read(out.join("sweep.csv")).unwrap(), first);
    let again: Vec<_> = cells.iter().map(|p| fs::metadata(p).unwrap().modified().unwrap()).collect();
    assert_eq!(stamps, again);

    // one new level adds only its cells
    let wider = write(dir.path(), "wider.json", &SWEEP.replace("[0.1]", "[0.1, 0.2]"));
    let o = run(&["sweep", &wider, "--out", out.to_str().unwrap()]);
    assert!(stdout(&o).contains("computed: 4, reused: 4"), "{}", stdout(&o));
}

#[test]
fn sweep_cell_reproduces_counterexample_experiment() {
    let dir = TempDir::new().unwrap();
    let cfg = write(
        dir.path(),
        "cx.json",
        r#"{"seed": 3, "n_reps": 20000, "generators": [{"kind": "counterexample", "m": 2, "q": 0.1}],
            "procedures": ["bh", "by"], "q": [0.25]}"#,
    );
    let out = dir.path().join("sweep");
    assert!(run(&["sweep", &cfg, "--out", out.to_str().unwrap()]).status.success());
    let exp = dir.path().join("exp");
    let o = run(&["experiment", "counterexample", "--reps", "20000", "--seed", "3", "--out", exp.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));

    let sweep_csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let exp_csv = fs::read_to_string(exp.join("counterexample_fdr.csv")).unwrap();
    // drop the leading cell key; the rest of each row must match
    let sweep_rows: Vec<&str> = sweep_csv.lines().skip(1).map(|l| l.split_once(',').unwrap().1).collect();
    let exp_rows: Vec<&str> = exp_csv.lines().skip(1).collect();
    assert_eq!(sweep_rows, exp_rows);
}

#[test]
fn sweep_rejects_malformed_config() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    for text in [
        "{",
        r#"{"seed": 1, "n_reps": 10, "generators": [], "procedures": ["bh"], "q": [0.1]}"#,
        r#"{"seed": 1, "n_reps": 10, "generators": [{"kind": "classical_iid", "m": 5, "m0": 5}], "procedures": ["xx"], "q": [0.1]}"#,
        r#"{"seed": 1, "n_reps": 10, "generators": [{"kind": "classical_iid", "m": 5, "m0": 5}], "procedures": ["bh"], "q": [0.1], "extra": 1}"#,
    ] {
        let cfg = write(dir.path(), "bad.json", text);
        assert_eq!(run(&["sweep", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(1), "{text}");
    }
}
