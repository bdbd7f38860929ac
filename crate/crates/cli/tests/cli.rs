use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use offload_core::sim::validate_csv;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_offload"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn offload")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn files(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = match fs::read_dir(dir) {
        Ok(rd) => rd.map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect(),
        Err(_) => Vec::new(),
    };
    v.sort();
    v
}

fn assert_csvs_validate(dir: &Path) -> usize {
    let mut n = 0;
    for f in files(dir) {
        if (f.starts_with("trace-") || f.starts_with("exec-")) && f.ends_with(".csv") {
            let text = fs::read_to_string(dir.join(&f)).unwrap();
            validate_csv(&text).unwrap_or_else(|e| panic!("{f}: {e}"));
            n += 1;
        }
    }
    n
}

const COMPARE: &str = r#"{
    "profile": "h100-node",
    "workload": {"total_params": 5000000000, "subgroup_size": 100000000},
    "approaches": [
        {"kind": "zero3"},
        {"kind": "twin_flow", "static_ratio": 0.2},
        {"kind": "interleaved"}
    ],
    "iteration": {"fwd_ns": 100000000, "bwd_ns": 200000000}
}"#;

const EXECUTE: &str = r#"{
    "profile": "v100-node",
    "workload": {"total_params": 120000, "subgroup_size": 10000},
    "approaches": [
        {"kind": "zero3"},
        {"kind": "twin_flow", "static_ratio": 0.25},
        {"kind": "interleaved", "k": 2, "static_ratio": 0.25, "placement": "static_first"},
        {"kind": "interleaved"}
    ],
    "seed": 1234
}"#;

#[test]
fn plan_v100_prints_balance_and_k() {
    let o = run(&["plan", "--profile", "v100-node"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("k_real=2.29"), "{out}");
    assert!(out.lines().any(|l| l == "k=2"), "{out}");
    assert!(out.contains("gpu_fraction=0.3333"));
    assert!(out.contains("estimate_s="));
}

#[test]
fn plan_h100_prints_unit_caveat() {
    let o = run(&["plan", "--profile", "h100-node"]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert!(out.contains("caveat:"), "{out}");
    assert!(out.contains("k_real=1.49"), "{out}");
}

#[test]
fn plan_fast_host_prints_all_cpu() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = offload_core::SystemProfile::v100_node();
    p.cpu_update_params_per_s = 1e15;
    p.host_downscale_params_per_s = 1e15;
    let path = write(dir.path(), "p.json", &serde_json::to_string(&p).unwrap());
    let o = run(&["plan", "--profile", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("k=ALL_CPU"), "{}", stdout(&o));
}

#[test]
fn plan_emits_actions() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "s.json", COMPARE);
    let out = dir.path().join("o");
    let o = run(&["plan", "--scenario", sc.to_str().unwrap(), "--emit-actions", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let plan: offload_core::UpdatePlan =
        serde_json::from_str(&fs::read_to_string(out.join("actions.json")).unwrap()).unwrap();
    plan.validate().unwrap();
    assert_eq!(plan.num_subgroups, 50);
    let summary: Value = serde_json::from_str(&fs::read_to_string(out.join("plan.json")).unwrap()).unwrap();
    assert_eq!(summary["num_subgroups"], 50);
}

#[test]
fn validation_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.json", "{ not json");
    let o = run(&["simulate", "--scenario", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("malformed scenario"), "{}", stderr(&o));

    let unknown = write(dir.path(), "u.json", &COMPARE.replace("h100-node", "tpu-pod"));
    assert_eq!(run(&["compare", "--scenario", unknown.to_str().unwrap()]).status.code(), Some(2));

    assert_eq!(run(&["plan", "--profile", "tpu-pod"]).status.code(), Some(2));
    // usage error from the argument parser
    assert_eq!(run(&["sweep", "--scenario", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn execute_requires_seed_and_small_rank() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let unseeded = write(dir.path(), "a.json", &EXECUTE.replace(",\n    \"seed\": 1234", ""));
    let o = run(&["execute", "--scenario", unseeded.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"));

    let huge = write(dir.path(), "b.json", &EXECUTE.replace("120000", "100000000000"));
    let o = run(&["execute", "--scenario", huge.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(files(&out).is_empty());
}

#[test]
fn infeasible_exits_three_without_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut p = offload_core::SystemProfile::v100_node();
    p.fast_capacity_bytes = 1000;
    let text = COMPARE.replace("\"h100-node\"", &serde_json::to_string(&p).unwrap());
    let sc = write(dir.path(), "s.json", &text);
    let out = dir.path().join("o");
    let o = run(&["simulate", "--scenario", sc.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(files(&out).is_empty(), "{:?}", files(&out));
}

#[test]
fn io_failure_leaves_no_partial_files() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "s.json", COMPARE);
    let blocker = write(dir.path(), "blocker", "");
    let o = run(&["simulate", "--scenario", sc.to_str().unwrap(), "--out", blocker.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(files(dir.path()), vec!["blocker".to_string(), "s.json".to_string()]);

    let missing = dir.path().join("nope.json");
    assert_eq!(run(&["compare", "--scenario", missing.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn stride_sweep_orders_two_through_five() {
    let dir = tempfile::tempdir().unwrap();
    let text = r#"{
        "profile": "v100-node",
        "workload": {"total_params": 6000000000, "subgroup_size": 100000000},
        "approaches": [{"kind": "interleaved"}],
        "sweep": {"k": [5, 3, 2, 4]}
    }"#;
    let sc = write(dir.path(), "s.json", text);
    let out = dir.path().join("o");
    let o = run(&["sweep", "--scenario", sc.to_str().unwrap(), "--axis", "stride", "--jobs", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&fs::read_to_string(out.join("sweep-stride.json")).unwrap()).unwrap();
    let pts = v["points"].as_array().unwrap();
    let ks: Vec<u64> = pts.iter().map(|p| p["k"].as_u64().unwrap()).collect();
    assert_eq!(ks, vec![2, 3, 4, 5]);
    let ms: Vec<u64> = pts.iter().map(|p| p["makespan_ns"].as_u64().unwrap()).collect();
    assert!(ms.windows(2).all(|w| w[0] < w[1]), "{ms:?}");
    assert_eq!(v["best_k"], 2);
    assert!(out.join("sweep-stride.csv").exists());
    assert!(stdout(&o).contains("ALL_CPU"));
}

#[test]
fn sweep_results_do_not_depend_on_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "s.json", COMPARE);
    let mut outs = Vec::new();
    for (axis, jobs) in [("ratio", "1"), ("ratio", "4"), ("microbatch", "1"), ("microbatch", "3")] {
        let out = dir.path().join(format!("{axis}-{jobs}"));
        let o = run(&["sweep", "--scenario", sc.to_str().unwrap(), "--axis", axis, "--jobs", jobs, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        outs.push(fs::read(out.join(format!("sweep-{axis}.json"))).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    assert_eq!(outs[2], outs[3]);
    let rows: Value = serde_json::from_slice(&outs[0]).unwrap();
    let tf: Vec<f64> = rows.as_array().unwrap().iter().map(|r| r["twin_flow_update_s"].as_f64().unwrap()).collect();
    assert!(tf.windows(2).all(|w| w[1] < w[0]), "{tf:?}");
    assert_eq!(run(&["sweep", "--scenario", sc.to_str().unwrap(), "--axis", "ratio", "--jobs", "0"]).status.code(), Some(2));
}

#[test]
fn compare_prints_three_rows_interleaved_fastest() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "s.json", COMPARE);
    let out = dir.path().join("o");
    let o = run(&["compare", "--scenario", sc.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    let rows: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with("zero3") || l.starts_with("twin_flow") || l.starts_with("interleaved"))
        .collect();
    assert_eq!(rows.len(), 3, "{text}");
    assert!(rows[0].contains("ALL_CPU"));
    let v: Value = serde_json::from_str(&fs::read_to_string(out.join("compare.json")).unwrap()).unwrap();
    let upd: Vec<f64> = v["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["phases"]["update_s"].as_f64().unwrap())
        .collect();
    assert!(upd[2] < upd[1] && upd[2] < upd[0], "{upd:?}");
    let csv = fs::read_to_string(out.join("compare.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn simulate_writes_valid_traces_in_both_formats() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "s.json", COMPARE);
    let csv_out = dir.path().join("csv");
    let o = run(&["simulate", "--scenario", sc.to_str().unwrap(), "--out", csv_out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(assert_csvs_validate(&csv_out), 3);
    let summary: Value = serde_json::from_str(&fs::read_to_string(csv_out.join("summary.json")).unwrap()).unwrap();
    for run in summary.as_array().unwrap() {
        for key in ["makespan_ns", "phases", "peak_fast_bytes", "spillover_ns"] {
            assert!(run.get(key).is_some(), "missing {key}");
        }
    }

    let json_out = dir.path().join("json");
    let o = run(&["simulate", "--scenario", sc.to_str().unwrap(), "--out", json_out.to_str().unwrap(), "--format", "json"]);
    assert!(o.status.success());
    let events: Vec<offload_core::sim::Event> =
        serde_json::from_str(&fs::read_to_string(json_out.join("trace-2-interleaved-k-auto-ratio-0.json")).unwrap())
            .unwrap();
    assert!(!events.is_empty());
}

#[test]
fn execute_is_deterministic_and_traces_validate() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write(dir.path(), "s.json", EXECUTE);
    let mut summaries = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let o = run(&["execute", "--scenario", sc.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(assert_csvs_validate(&out), 4);
        summaries.push(fs::read(out.join("exec-summary.json")).unwrap());
    }
    assert_eq!(summaries[0], summaries[1]);
    let v: Value = serde_json::from_slice(&summaries[0]).unwrap();
    let digests: Vec<&str> = v.as_array().unwrap().iter().map(|r| r["state_digest"].as_str().unwrap()).collect();
    assert!(digests.iter().all(|d| *d == digests[0]));
    assert!(v.as_array().unwrap().iter().all(|r| r["matches_oracle"] == true && r["model16_coherent"] == true));

    let out = dir.path().join("t");
    let o = run(&["execute", "--scenario", sc.to_str().unwrap(), "--out", out.to_str().unwrap(), "--mode", "throttled", "--time-scale", "0"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let t: Value = serde_json::from_str(&fs::read_to_string(out.join("exec-summary.json")).unwrap()).unwrap();
    assert_eq!(t[0]["state_digest"], v[0]["state_digest"]);
}

#[test]
fn shipped_scenarios_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut n = 0;
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "json") {
            offload_cli::Scenario::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 3);
}
