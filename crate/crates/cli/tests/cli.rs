use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn qmix(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qmix"))
        .args(args)
        .output()
        .expect("spawn qmix")
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("json output")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn analyze_final_plan_on_nano() {
    let v = stdout_json(&qmix(&["analyze", "--preset", "n", "--plan", "6,8"]));
    assert_eq!(v["totals"]["params"], 2_395_966);
    let red = v["comparison"]["param_reduction_pct"].as_f64().unwrap();
    assert!((red - 20.2).abs() <= 0.3, "{red}");
    let gflops = v["totals"]["gflops"].as_f64().unwrap();
    assert!((gflops - 7.1).abs() <= 0.05 * 7.1, "{gflops}");
}

#[test]
fn unknown_preset_is_a_usage_error_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.json");
    let res = qmix(&["analyze", "--preset", "q", "--out", path_str(&out)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn domain_errors_exit_one_and_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("graph.json");
    let res = qmix(&["surgery", "--plan", "5", "--out", path_str(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(!out.exists());

    let missing = dir.path().join("absent.arch");
    let res = qmix(&["build", "--config", path_str(&missing), "--out", path_str(&out)]);
    assert_eq!(res.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(qmix(&["analyze", "--bogus-flag"]).status.code(), Some(2));
    assert_eq!(qmix(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(qmix(&[]).status.code(), Some(2));
    assert_eq!(qmix(&["analyze", "--format", "xml"]).status.code(), Some(2));
    assert_eq!(qmix(&["surgery", "--plan", "6,x"]).status.code(), Some(2));
    assert_eq!(qmix(&["surgery", "--variant", "QMixBogus"]).status.code(), Some(2));
}

#[test]
fn gradcheck_rows_are_below_tolerance() {
    let v = stdout_json(&qmix(&["gradcheck", "--seed", "1", "--format", "json"]));
    let kinds = v["kinds"].as_array().unwrap();
    assert_eq!(kinds.len(), 11);
    for k in kinds {
        assert!(k["max_rel_error"].as_f64().unwrap() < 1e-4, "{k}");
        assert!(k["coords_checked"].as_u64().unwrap() >= 100, "{k}");
    }
}

#[test]
fn repeated_invocations_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    for p in [&a, &b] {
        let res = qmix(&[
            "analyze",
            "--preset",
            "s",
            "--plan",
            "v0",
            "--format",
            "csv",
            "--out",
            path_str(p),
        ]);
        assert!(res.status.success());
        assert!(res.stdout.is_empty());
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn surgery_dump_records_the_plan() {
    let v = stdout_json(&qmix(&["surgery", "--plan", "final", "--variant", "full"]));
    let nodes = v["nodes"].as_array().unwrap();
    assert_eq!(nodes[6]["kind"], "QMixFull");
    assert_eq!(nodes[8]["kind"], "QMixFull");
    assert_eq!(v["provenance"]["surgery"]["targets"], serde_json::json!([6, 8]));
}

#[test]
fn parse_output_parses_to_itself() {
    let dir = tempfile::tempdir().unwrap();
    let first = qmix(&["parse", "--preset", "s"]);
    assert!(first.status.success());
    let file = dir.path().join("s.arch");
    std::fs::write(&file, &first.stdout).unwrap();
    let second = qmix(&["parse", "--config", path_str(&file)]);
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn compare_lists_four_models() {
    let v = stdout_json(&qmix(&["compare", "--format", "json"]));
    let models = v["models"].as_array().unwrap();
    assert_eq!(models.len(), 4);
    assert_eq!(models[0]["params"], 3_012_798);
    assert_eq!(models[2]["params"], 11_139_470);
}

#[test]
fn train_writes_a_loss_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("loss.csv");
    let res = qmix(&["train", "--epochs", "2", "--samples", "16", "--out", path_str(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,lr,mean_loss");
    assert_eq!(lines.len(), 3);
}

#[test]
fn ablate_selected_variants() {
    let res = qmix(&[
        "ablate",
        "--epochs",
        "1",
        "--samples",
        "8",
        "--variants",
        "sin,full",
        "--format",
        "csv",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = String::from_utf8(res.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("QMixSin,"));
    assert!(lines[2].starts_with("QMixFull,"));
}
