use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use clap::Parser;
use serde_json::Value;
use survkit_cli::{run, Cli};

fn survkit(out: &Path, args: &[&str]) -> Result<String, survkit_cli::CliError> {
    let mut argv = vec!["survkit", "--out", out.to_str().unwrap()];
    argv.extend_from_slice(args);
    let mut buf = Vec::new();
    run(&Cli::parse_from(argv), &mut buf)?;
    Ok(String::from_utf8(buf).unwrap())
}

fn ok(out: &Path, args: &[&str]) -> String {
    survkit(out, args).unwrap_or_else(|e| panic!("{args:?}: {}", e.to_json()))
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path.as_ref()).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// sparse-linear synth (n=300, p=10) and preprocess into `<root>/raw`, `<root>/prep`.
fn small_prepared(root: &Path) -> PathBuf {
    let raw = root.join("raw");
    let prep = root.join("prep");
    ok(&raw, &["--seed", "5", "synth", "--preset", "sparse-linear", "--n", "300", "--p", "10"]);
    ok(&prep, &["--seed", "5", "preprocess", "--input", s(&raw.join("cohort.csv"))]);
    prep
}

#[test]
fn synth_default_preset_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&a, &["--seed", "3", "synth"]);
    ok(&b, &["--seed", "3", "synth"]);
    for f in ["cohort.csv", "truth.json", "schema.json", "spec.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = std::fs::read_to_string(a.join("cohort.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 123 + 2);
    assert_eq!(lines.count(), 554);
    let rc = json(a.join("run_config.synth.json"));
    assert_eq!(rc["seed"], 3);
    assert_eq!(rc["command"], "synth");
}

#[test]
fn zero_censoring_gives_all_events() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--preset", "sparse-linear", "--n", "200", "--p", "5", "--censoring", "0"]);
    let csv = std::fs::read_to_string(dir.path().join("cohort.csv")).unwrap();
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let ev = header.iter().position(|h| *h == "event").unwrap();
    assert!(csv.lines().skip(1).all(|l| l.split(',').nth(ev) == Some("1")));
}

#[test]
fn default_preset_rejects_p() {
    let dir = tempfile::tempdir().unwrap();
    let e = survkit(dir.path(), &["synth", "--p", "20"]).unwrap_err();
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn preprocess_default_cohort() {
    let dir = tempfile::tempdir().unwrap();
    let (raw, prep, again) = (dir.path().join("raw"), dir.path().join("prep"), dir.path().join("again"));
    ok(&raw, &["--seed", "7", "synth"]);
    ok(&prep, &["--seed", "7", "preprocess", "--input", s(&raw.join("cohort.csv"))]);
    let r = json(prep.join("preprocess_report.json"));
    let dropped: Vec<&str> = r["sparse"]["dropped"].as_array().unwrap().iter().map(|d| d["name"].as_str().unwrap()).collect();
    assert_eq!(dropped, ["planted_sparse"]);
    let (n_train, n_test) = (r["n_train"].as_u64().unwrap() as f64, r["n_test"].as_u64().unwrap() as f64);
    assert!((n_train - 0.8 * (n_train + n_test)).abs() <= 1.0);
    let gap = r["event_fraction_train"].as_f64().unwrap() - r["event_fraction_test"].as_f64().unwrap();
    assert!(gap.abs() < 0.01, "{gap}");
    let split = json(prep.join("split.json"));
    assert_eq!(split["train_row_ids"].as_array().unwrap().len() as f64, n_train);

    ok(&again, &["--seed", "7", "preprocess", "--input", s(&prep.join("clean.csv"))]);
    let r2 = json(again.join("preprocess_report.json"));
    assert!(r2["sparse"]["dropped"].as_array().unwrap().is_empty());
    assert_eq!(r2["n_clean"], r["n_clean"]);
    assert_eq!(std::fs::read(prep.join("clean.csv")).unwrap(), std::fs::read(again.join("clean.csv")).unwrap());
}

#[test]
fn unknown_prior_exits_2_and_names_it() {
    let dir = tempfile::tempdir().unwrap();
    let prep = small_prepared(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_survkit"))
        .args(["--out", s(&dir.path().join("sel")), "select", "--data", s(&prep), "--priors", "not_a_feature"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert!(err["message"].as_str().unwrap().contains("not_a_feature"), "{err}");
}

#[test]
fn zero_threads_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let e = survkit(dir.path(), &["--threads", "0", "synth"]).unwrap_err();
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let prep = small_prepared(dir.path());
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.path().join(format!("t{threads}"));
        ok(&out, &["--threads", threads, "--seed", "2", "tune", "--data", s(&prep), "--trials", "6", "--folds", "3"]);
        ok(&out, &["--threads", threads, "--seed", "2", "train", "--data", s(&prep), "--tune", s(&out.join("tune_est.json"))]);
        outputs.push(
            ["tune_est.json", "trials_est.jsonl", "model_est.json"].map(|f| std::fs::read(out.join(f)).unwrap()),
        );
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn select_tune_train_explain_chain() {
    let dir = tempfile::tempdir().unwrap();
    let prep = small_prepared(dir.path());
    let out = dir.path().join("run");
    ok(&out, &["select", "--data", s(&prep), "--subset-tuning", "fixed", "--fixed-trees", "20", "--folds", "3"]);
    let sel = json(out.join("selection.json"));
    assert!(!sel["models"][0]["forward"]["selected"].as_array().unwrap().is_empty(), "{sel}");
    ok(&out, &["tune", "--data", s(&prep), "--selection", s(&out.join("selection.json")), "--trials", "4", "--folds", "3"]);
    ok(&out, &["train", "--data", s(&prep), "--tune", s(&out.join("tune_est.json"))]);
    let art = out.join("model_est.json");
    ok(&out, &["train", "--data", s(&prep), "--model", "cox", "--horizon", "500"]);
    ok(&out, &["evaluate", "--data", s(&prep), "--model", &format!("{},{}", s(&art), s(&out.join("model_cox.json")))]);
    let table = std::fs::read_to_string(out.join("table1.csv")).unwrap();
    assert!(table.starts_with("model,n_features,c_cv,c_train,c_test,auc_5y,auc_10y,auc_15y,"));
    assert_eq!(table.lines().count(), 3);
    assert!(table.lines().nth(1).unwrap().starts_with("EST,"), "rows with a CV score sort first");

    let test_ids = json(prep.join("split.json"))["test_row_ids"].clone();
    let row = test_ids[0].as_u64().unwrap().to_string();
    let ex = dir.path().join("explain");
    ok(&ex, &["explain", "--data", s(&prep), "--model", s(&art), "--row", &row]);
    let waterfalls: Vec<_> = std::fs::read_dir(ex.join("waterfalls")).unwrap().collect();
    assert_eq!(waterfalls.len(), 1);
    let w = json(ex.join(format!("waterfalls/row_{row}.json")));
    let sum: f64 = w["phi"].as_array().unwrap().iter().map(|p| p["phi"].as_f64().unwrap()).sum();
    assert!((w["base"].as_f64().unwrap() + sum - w["prediction"].as_f64().unwrap()).abs() < 1e-6);

    let e = survkit(&ex, &["explain", "--data", s(&prep), "--model", s(&art), "--row", "100000"]).unwrap_err();
    assert_eq!(e.exit_code(), 2);
}

#[test]
fn oracle_row_matches_direct_cindex() {
    let dir = tempfile::tempdir().unwrap();
    let prep = small_prepared(dir.path());
    let out = dir.path().join("eval");
    ok(&out, &["train", "--data", s(&prep), "--model", "cox"]);
    let truth_path = dir.path().join("raw/truth.json");
    ok(&out, &["evaluate", "--data", s(&prep), "--model", s(&out.join("model_cox.json")), "--truth", s(&truth_path)]);
    let report = json(out.join("report.json"));
    let oracle = &report["evaluations"]["Oracle"]["report"];

    let truth: survkit::synth::OracleTruth = serde_json::from_value(json(&truth_path)).unwrap();
    let test: survkit::dataset::Cohort = serde_json::from_value(json(prep.join("test.json"))).unwrap();
    let eta: Vec<f64> = test.row_ids.iter().map(|&i| truth.eta[i]).collect();
    let c = survkit::metrics::harrell_cindex(&eta, &test.outcomes).unwrap().c_index;
    assert_eq!(oracle["c_test"].as_f64().unwrap(), c);
    assert!(out.join("km_groups_train_oracle.csv").exists());
}

#[test]
fn default_horizon_follows_follow_up() {
    let dir = tempfile::tempdir().unwrap();
    let (raw, prep, out) = (dir.path().join("raw"), dir.path().join("prep"), dir.path().join("out"));
    ok(&raw, &["--seed", "7", "synth"]);
    ok(&prep, &["--seed", "7", "preprocess", "--input", s(&raw.join("cohort.csv"))]);
    ok(&out, &["train", "--data", s(&prep), "--model", "cox", "--features", "age,sex,hba1c"]);
    let art = json(out.join("model_cox.json"));
    assert_eq!(art["horizon_days"], 6142.0);

    // a short-follow-up cohort falls back to its last training event
    let short = dir.path().join("short");
    ok(&short, &["--seed", "7", "preprocess", "--input", s(&raw.join("cohort.csv")), "--train-frac", "0.5"]);
    let mut train: survkit::dataset::Cohort = serde_json::from_value(json(short.join("train.json"))).unwrap();
    for o in train.outcomes.iter_mut() {
        o.time = o.time.min(3000.0);
    }
    std::fs::write(short.join("train.json"), serde_json::to_string(&train).unwrap()).unwrap();
    ok(&out, &["train", "--data", s(&short), "--model", "cox", "--features", "age"]);
    let last_event = train.outcomes.iter().filter(|o| o.event).map(|o| o.time).fold(0.0, f64::max);
    assert!(last_event < 3000.0 + 1e-9);
    assert_eq!(json(out.join("model_cox.json"))["horizon_days"].as_f64().unwrap(), last_event);
}

#[test]
fn predict_via_stdin_and_rejection_codes() {
    let dir = tempfile::tempdir().unwrap();
    let prep = small_prepared(dir.path());
    let out = dir.path().join("m");
    ok(&out, &["train", "--data", s(&prep), "--model", "cox"]);
    let model = out.join("model_cox.json");
    let predict = |input: &str| {
        let mut child = Command::new(env!("CARGO_BIN_EXE_survkit"))
            .args(["predict", "--model", s(&model), "--input", "-"])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        use std::io::Write;
        child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
        child.wait_with_output().unwrap()
    };
    let good = predict(r#"{"x000": 0.5, "x001": -1.0}"#);
    assert!(good.status.success(), "{}", String::from_utf8_lossy(&good.stderr));
    let v: Value = serde_json::from_slice(&good.stdout).unwrap();
    assert!((0.0..=1.0).contains(&v["probability"].as_f64().unwrap()));
    assert_eq!(v["imputed"].as_array().unwrap().len(), 8);

    let bad = predict(r#"{"x000": "high"}"#);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("x000"));
}
