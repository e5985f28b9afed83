//! End-to-end runs of the `abft-guard` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use abft_guard::campaign::CampaignReport;
use abft_guard::cli::CheckReport;
use abft_guard::io::{AnalysisDocument, PlanDocument};
use abft_guard::{fixtures, Scheme};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_abft-guard"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn analyze_dlrm_bottom_padded() {
    let (model, device) = (fixture("dlrm_mlp_bottom.json"), fixture("t4.json"));
    let o = run(&["analyze", "--model", path_str(&model), "--device", path_str(&device), "--pad", "eight"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc: AnalysisDocument = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((doc.aggregate.intensity - 7.4).abs() < 0.1, "{}", doc.aggregate.intensity);
    assert_eq!(doc.layers.len(), 3);
    assert!((doc.cmr - 203.125).abs() < 1e-9);
}

#[test]
fn analyze_resnet_conv1_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (csv, json) = (dir.path().join("ai.csv"), dir.path().join("ai.json"));
    let o = run(&[
        "analyze",
        "--model",
        path_str(&fixture("resnet50_conv1.json")),
        "--device",
        path_str(&fixture("t4.json")),
        "--pad",
        "none",
        "--csv",
        path_str(&csv),
        "--out",
        path_str(&json),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
    let doc: AnalysisDocument = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert!((doc.layers[0].intensity - 44.58).abs() < 0.005);
    let csv = std::fs::read_to_string(&csv).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("layer_index,ai,bound"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(row[0], "0");
    assert!((row[1].parse::<f64>().unwrap() - 44.58).abs() < 0.005);
    assert_eq!(row[2], "bandwidth");
}

#[test]
fn analyze_batch_override() {
    let o = run(&[
        "analyze",
        "--model",
        path_str(&fixture("dlrm_mlp_top.json")),
        "--device",
        path_str(&fixture("t4.json")),
        "--pad",
        "eight",
        "--batch",
        "2048",
    ]);
    let doc: AnalysisDocument = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((doc.aggregate.intensity - 175.8).abs() < 0.1);
}

#[test]
fn analyze_empty_model_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("empty.json");
    std::fs::write(&model, r#"{"schema_version":1,"name":"e","batch":1,"input":{"h":1,"w":1,"c":4},"layers":[]}"#)
        .unwrap();
    let o = run(&["analyze", "--model", path_str(&model), "--device", path_str(&fixture("t4.json"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no linear layers"), "{}", stderr(&o));
}

#[test]
fn schema_errors_report_field_paths() {
    let dir = tempfile::tempdir().unwrap();
    let device = dir.path().join("d.json");
    std::fs::write(&device, r#"{"schema_version":1,"name":"d","tensor_tflops":"fast","mem_bw_gbs":1}"#).unwrap();
    let o = run(&["analyze", "--model", path_str(&fixture("dlrm_mlp_top.json")), "--device", path_str(&device)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("tensor_tflops"), "{}", stderr(&o));

    let o = run(&["analyze", "--model", "/nonexistent/model.json", "--device", path_str(&device)]);
    assert_eq!(o.status.code(), Some(2));
}

fn select(model: &Path, extra: &[&str]) -> Output {
    let device = fixture("t4.json");
    let mut args = vec!["select", "--model", path_str(model), "--device", path_str(&device)];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn select_dlrm_batch_one_is_all_thread_level() {
    let o = select(&fixture("dlrm_mlp_bottom.json"), &["--pad", "eight"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc: PlanDocument = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(doc.plan.layers.iter().all(|l| l.chosen == Scheme::ThreadOneSided));
    assert!(doc.alu_throughput_defaulted);
    let err = stderr(&o);
    assert!(err.contains("aggregate overhead"), "{err}");
    assert!(err.contains("alu_tflops"), "{err}");
}

#[test]
fn select_square_2048_is_global() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("sq.json");
    std::fs::write(&model, abft_guard::io::model_to_json(&fixtures::square_gemm_model(2048))).unwrap();
    let out = dir.path().join("plan.json");
    let o = select(&model, &["--out", path_str(&out)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc: PlanDocument = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc.plan.layers[0].chosen, Scheme::GlobalAbft);
    assert!((doc.plan.layers[0].intensity - 682.67).abs() < 0.01);
}

#[test]
fn select_honours_measured_timings() {
    let dir = tempfile::tempdir().unwrap();
    let timings = dir.path().join("t.csv");
    std::fs::write(&timings, "layer_index,scheme,time_us\n1,unprotected,10\n1,global-abft,10.5\n1,thread-one-sided,12\n")
        .unwrap();
    let o = select(&fixture("dlrm_mlp_bottom.json"), &["--timings", path_str(&timings)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let doc: PlanDocument = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(doc.measured_entries, 3);
    assert_eq!(doc.plan.layers[0].chosen, Scheme::ThreadOneSided);
    assert_eq!(doc.plan.layers[1].chosen, Scheme::GlobalAbft);
    assert!((doc.plan.layers[1].chosen_estimate().overhead_pct - 5.0).abs() < 1e-9);

    std::fs::write(&timings, "layer_index,scheme,time_us\n7,global-abft,1\n").unwrap();
    let o = select(&fixture("dlrm_mlp_bottom.json"), &["--timings", path_str(&timings)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown layer 7"), "{}", stderr(&o));
}

#[test]
fn plan_round_trips() {
    let o = select(&fixture("dlrm_mlp_top.json"), &["--pad", "eight", "--batch", "2048"]);
    let text = stdout(&o);
    let doc: PlanDocument = serde_json::from_str(&text).unwrap();
    assert_eq!(abft_guard::io::to_json(&doc), text);
}

#[test]
fn check_contract() {
    let base = ["check", "--m", "64", "--n", "64", "--k", "64"];
    let code = |extra: &[&str]| {
        let mut v = base.to_vec();
        v.extend_from_slice(extra);
        run(&v).status.code()
    };
    assert_eq!(code(&["--scheme", "one-sided", "--inject", "1", "--expect-detect"]), Some(0));
    assert_eq!(code(&["--scheme", "one-sided", "--expect-clean"]), Some(0));
    assert_eq!(code(&["--scheme", "one-sided", "--expect-detect"]), Some(1));
    assert_eq!(code(&["--scheme", "one-sided", "--fault-at", "100,3"]), Some(2));
    assert_eq!(
        code(&["--scheme", "global", "--dtype", "binary16", "--inject", "1", "--delta", "64", "--expect-detect"]),
        Some(0)
    );
    assert_eq!(code(&["--scheme", "two-sided", "--dtype", "binary32", "--expect-clean"]), Some(0));
}

#[test]
fn check_json_localizes_fault() {
    let o = run(&[
        "check", "--m", "40", "--n", "40", "--k", "17", "--scheme", "two-sided", "--fault-at", "33,9", "--delta", "3",
        "--json",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let r: CheckReport = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(r.detected);
    assert_eq!(r.firing.len(), 1);
    assert!(r.firing[0].domain.contains(33, 9));
}

#[test]
fn simulate_is_deterministic_and_respects_thread_cap() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    std::fs::write(
        &config,
        r#"{"schema_version":1,"trials":300,"seed":11,"m":{"min":1,"max":20},"n":{"min":1,"max":20},
            "k":{"min":1,"max":20},"dtype":"exact-int","delta":{"kind":"integer","min_abs":1,"max_abs":50}}"#,
    )
    .unwrap();
    let runs: Vec<(String, String)> = ["1", "3"]
        .iter()
        .map(|threads| {
            let csv = dir.path().join(format!("r{threads}.csv"));
            let o = bin()
                .args(["simulate", "--config", path_str(&config), "--csv", path_str(&csv)])
                .env("ABFT_GUARD_THREADS", threads)
                .output()
                .unwrap();
            assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
            (stdout(&o), std::fs::read_to_string(&csv).unwrap())
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    let report: CampaignReport = serde_json::from_str(&runs[0].0).unwrap();
    assert_eq!(abft_guard::io::to_json(&report), runs[0].0);
    assert_eq!(report.schemes.len(), 5);
    for s in &report.schemes {
        assert_eq!((s.detected, s.false_positives, s.detection_rate), (300, 0, 1.0), "{s:?}");
    }
    assert!(runs[0].1.starts_with("scheme,trials,detected,missed,masked,detection_rate"));
}

#[test]
fn simulate_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.json");
    std::fs::write(
        &config,
        r#"{"schema_version":1,"trials":0,"seed":1,"m":{"min":1,"max":2},"n":{"min":1,"max":2},
            "k":{"min":1,"max":2},"dtype":"exact-int","delta":{"kind":"integer","min_abs":1,"max_abs":2}}"#,
    )
    .unwrap();
    assert_eq!(run(&["simulate", "--config", path_str(&config)]).status.code(), Some(2));
    std::fs::write(&config, r#"{"schema_version":1,"trials":"many"}"#).unwrap();
    let o = run(&["simulate", "--config", path_str(&config)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("trials"));
}
