use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn centraprune(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_centraprune"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn error_code(out: &Output) -> String {
    let line = String::from_utf8_lossy(&out.stderr);
    let v: Value = serde_json::from_str(line.lines().last().unwrap()).expect("json error line");
    v["error"].as_str().unwrap().to_string()
}

fn init_model(dir: &Path, seed: &str) {
    let out = centraprune(&[
        "init",
        "--input",
        "6",
        "--hidden",
        "12",
        "--classes",
        "3",
        "--seed",
        seed,
        "--out",
        p(dir),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn analyze_emits_graph_and_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("model");
    init_model(&model, "1");
    let out = centraprune(&[
        "analyze",
        "--weights",
        p(&model.join("hidden0")),
        "--tau",
        "0.1",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["n"], 12);
    assert_eq!(v["tau"], 0.1);
    assert_eq!(v["centrality"].as_array().unwrap().len(), 12);
    assert_eq!(v["converged"], true);
    for e in v["edges"].as_array().unwrap() {
        let e = e.as_array().unwrap();
        assert!(e[0].as_u64().unwrap() < e[1].as_u64().unwrap());
        assert!(e[2].as_f64().unwrap() > 0.1);
    }
}

#[test]
fn analyze_reports_non_convergence_with_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("model");
    init_model(&model, "2");
    let out_file = tmp.path().join("analysis.json");
    let out = centraprune(&[
        "analyze",
        "--weights",
        p(&model.join("hidden0")),
        "--tau",
        "0.0",
        "--max-iter",
        "1",
        "--out",
        p(&out_file),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_code(&out), "NotConverged");
    let v: Value = serde_json::from_str(&std::fs::read_to_string(out_file).unwrap()).unwrap();
    assert_eq!(v["converged"], false);
}

#[test]
fn prune_rejects_out_of_range_ratio() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("model");
    init_model(&model, "3");
    let out = centraprune(&[
        "prune",
        "--weights",
        p(&model.join("hidden0")),
        "--ratio",
        "1.5",
        "--tau",
        "0.2",
        "--next",
        p(&model.join("head")),
        "--out",
        p(&tmp.path().join("pruned")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_code(&out), "InvalidRatio");
}

#[test]
fn prune_writes_layer_and_plan_idempotently() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("model");
    init_model(&model, "4");
    let run = |dir: &str| {
        let out_dir = tmp.path().join(dir);
        let out = centraprune(&[
            "prune",
            "--weights",
            p(&model.join("hidden0")),
            "--ratio",
            "0.25",
            "--tau",
            "0.1",
            "--next",
            p(&model.join("head")),
            "--out",
            p(&out_dir),
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        out_dir
    };
    let a = run("a");
    let b = run("b");
    let mut names: Vec<_> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        ["bias", "meta", "next_weights", "plan.json", "weights"]
    );
    for name in &names {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    let plan: Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan["n"], 12);
    assert_eq!(plan["k"], 3);
    assert_eq!(plan["pruned"].as_array().unwrap().len(), 3);
    assert_eq!(plan["kept"].as_array().unwrap().len(), 9);
    let meta: Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("meta")).unwrap()).unwrap();
    assert_eq!(meta["n"], 9);
}

#[test]
fn prune_requires_a_consumer_or_head_only() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("model");
    init_model(&model, "5");
    let layer = model.join("hidden0");
    let base = [
        "prune",
        "--weights",
        p(&layer),
        "--ratio",
        "0.5",
        "--baseline",
        "magnitude",
    ];
    let out_dir = tmp.path().join("pruned");
    let missing = centraprune(&[&base[..], &["--out", p(&out_dir)]].concat());
    assert_eq!(missing.status.code(), Some(1));
    assert_eq!(error_code(&missing), "MissingConsumer");
    let ok = centraprune(&[&base[..], &["--head-only", "--out", p(&out_dir)]].concat());
    assert!(
        ok.status.success(),
        "{}",
        String::from_utf8_lossy(&ok.stderr)
    );
    let plan: Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("plan.json")).unwrap()).unwrap();
    assert_eq!(plan["method"], "magnitude");
    assert!(plan["tau"].is_null());
}

#[test]
fn train_writes_model_and_history() {
    let tmp = tempfile::tempdir().unwrap();
    let model = tmp.path().join("model");
    let data = tmp.path().join("data");
    init_model(&model, "6");
    let synth = centraprune(&[
        "synth",
        "--task",
        "blobs",
        "--samples-per-class",
        "20",
        "--classes",
        "3",
        "--features",
        "6",
        "--seed",
        "9",
        "--out",
        p(&data),
    ]);
    assert!(
        synth.status.success(),
        "{}",
        String::from_utf8_lossy(&synth.stderr)
    );
    let trained = tmp.path().join("trained");
    let out = centraprune(&[
        "train",
        "--model",
        p(&model),
        "--data",
        p(&data),
        "--epochs",
        "5",
        "--lr",
        "0.1",
        "--batch",
        "8",
        "--seed",
        "0",
        "--out",
        p(&trained),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(trained.join("train.json")).unwrap())
            .unwrap();
    let history = summary["loss_history"].as_array().unwrap();
    assert_eq!(history.len(), 5);
    assert!(history[4].as_f64().unwrap() < history[0].as_f64().unwrap());
    assert!(trained.join("model.json").exists());
    assert!(trained.join("hidden0").join("weights").exists());
}

#[test]
fn sweep_missing_spec_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let out = centraprune(&[
        "sweep",
        "--spec",
        p(&tmp.path().join("nope.json")),
        "--out",
        p(&tmp.path().join("r.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_code(&out), "MissingFile");
}

#[test]
fn sweep_and_report_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = serde_json::json!({
        "task": {"kind": "blobs", "samples_per_class": 15, "num_classes": 3, "features": 4,
                 "separation": 2.0, "spread": 0.5},
        "data_seed": 1,
        "hidden": [8],
        "prune_layer": "hidden0",
        "ratios": [0.25, 0.5],
        "thresholds": [0.2],
        "methods": ["centrality", "magnitude", "none"],
        "seeds": [0, 1],
        "pretrain": {"epochs": 3, "batch_size": 8, "learning_rate": 0.1},
        "finetune": {"epochs": 2, "batch_size": 8, "learning_rate": 0.1}
    });
    let spec_path = tmp.path().join("spec.json");
    std::fs::write(&spec_path, spec.to_string()).unwrap();
    let run = |name: &str, jobs: &str| {
        let report = tmp.path().join(name);
        let out = centraprune(&[
            "sweep",
            "--spec",
            p(&spec_path),
            "--out",
            p(&report),
            "--jobs",
            jobs,
        ]);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        report
    };
    let a = run("a.json", "1");
    let b = run("b.json", "3");
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());

    let v: Value = serde_json::from_str(&std::fs::read_to_string(&a).unwrap()).unwrap();
    assert_eq!(v["cells"].as_array().unwrap().len(), 12);

    let md = centraprune(&["report", "--in", p(&a), "--fmt", "md"]);
    assert!(md.status.success());
    let md = String::from_utf8(md.stdout).unwrap();
    assert!(
        md.contains("| ratio | tau | centrality | magnitude | none |"),
        "{md}"
    );

    let json_out = tmp.path().join("again.json");
    let json = centraprune(&[
        "report",
        "--in",
        p(&a),
        "--fmt",
        "json",
        "--out",
        p(&json_out),
    ]);
    assert!(json.status.success());
    assert_eq!(
        std::fs::read(&a).unwrap(),
        std::fs::read(&json_out).unwrap()
    );

    let csv = centraprune(&["report", "--in", p(&a), "--fmt", "csv"]);
    assert!(csv.status.success());
    let csv = String::from_utf8(csv.stdout).unwrap();
    assert_eq!(csv.lines().count(), 13);
    assert!(csv.starts_with("method,"));
}

#[test]
fn unknown_flag_fails_with_invalid_arguments() {
    let out = centraprune(&["analyze", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_code(&out), "InvalidArguments");
}
