use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use blindsight_cli::{render_json, render_text, run, Analysis, InputFormat, RunConfig};
use serde_json::Value;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

fn blindsight(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_blindsight"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("BLINDSIGHT_THREADS", t),
        None => cmd.env_remove("BLINDSIGHT_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn run_two_visit(extra: &[&str], threads: Option<&str>) -> Output {
    let input = data("two_visit.csv");
    let mut args = vec!["run", "--input", input.to_str().unwrap()];
    args.extend_from_slice(extra);
    blindsight(&args, threads)
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("valid JSON")
}

fn num(v: &Value) -> f64 {
    v.as_f64().expect("number")
}

#[test]
fn two_visit_all_analyses() {
    let r = json(&run_two_visit(&["--analyses", "all", "--seed", "42"], None));
    let a = &r["analyses"];

    let step = &a["mcnemar"]["steps"][0];
    assert!((num(&step["row_homogeneity"]["p_value"]) - 0.849).abs() <= 0.005);
    assert_eq!(step["outcome"]["mode"], "merged");
    assert!((num(&step["outcome"]["result"]["z0"]) - 9.1333).abs() <= 1e-3);

    let params = a["wls"][0]["fit"]["parameters"].as_array().unwrap();
    let time_t = params.iter().find(|p| p["label"] == "time(arm=T)").unwrap();
    assert!((num(&time_t["p_value"]) - 0.0096).abs() <= 5e-4);

    assert!((num(&a["bi"][0]["bi"]) - 0.7501).abs() <= 5e-5);
    assert!((num(&a["bi"][1]["bi"]) - 0.6917).abs() <= 5e-5);
    assert!((num(&a["apportion"]["primary_extent"]) - 0.49).abs() <= 1e-12);

    assert_eq!(r["dataset"]["subjects"], 100);
    assert_eq!(r["dataset"]["arm_sizes"]["T"], 50);
    assert_eq!(r["tool"]["version"], env!("CARGO_PKG_VERSION"));
    let tests = r["verdict"]["progressive_unblinding"].as_array().unwrap();
    assert!(tests
        .iter()
        .any(|t| t["analysis"] == "mcnemar" && t["rejected"] == true));
    assert_eq!(r["verdict"]["bi_trajectory"].as_array().unwrap().len(), 2);
    for w in r["warnings"].as_array().unwrap() {
        assert!(w["code"].as_str().is_some_and(|c| !c.is_empty()));
    }
}

#[test]
fn every_analysis_appears_once() {
    let r = json(&run_two_visit(
        &["--analyses", "all", "--seed", "1", "--replicates", "50"],
        None,
    ));
    let keys: Vec<&String> = r["analyses"].as_object().unwrap().keys().collect();
    assert_eq!(
        keys,
        [
            "bi",
            "trend",
            "mcnemar",
            "wls",
            "logit",
            "simulate",
            "apportion"
        ]
    );
}

#[test]
fn single_timepoint_mcnemar_exits_2() {
    let input = data("single_timepoint.json");
    let out = blindsight(
        &[
            "run",
            "--input",
            input.to_str().unwrap(),
            "--format",
            "counts-json",
            "--analyses",
            "mcnemar",
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("mcnemar requires at least 2 timepoints"),
        "{err}"
    );
}

#[test]
fn single_timepoint_all_skips_paired_analyses() {
    let input = data("single_timepoint.json");
    let out = blindsight(
        &[
            "run",
            "--input",
            input.to_str().unwrap(),
            "--format",
            "counts-json",
            "--seed",
            "3",
            "--replicates",
            "20",
        ],
        None,
    );
    let r = json(&out);
    assert!(r["analyses"].get("mcnemar").is_none());
    assert!(r["warnings"]
        .as_array()
        .unwrap()
        .iter()
        .any(|w| w["code"] == "analysis_skipped"));
    assert!((num(&r["analyses"]["bi"][0]["bi"]) - 0.7501).abs() <= 5e-5);
}

#[test]
fn separation_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sep.json");
    std::fs::write(
        &path,
        r#"{"arms": {"T": {"T|T": 10, "DK|T": 5, "DK|DK": 5}, "P": {"P|P": 8, "T|DK": 4, "DK|P": 6}}, "timepoints": 2}"#,
    )
    .unwrap();
    let out = blindsight(
        &[
            "run",
            "--input",
            path.to_str().unwrap(),
            "--format",
            "counts-json",
            "--analyses",
            "logit",
        ],
        None,
    );
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn identical_seed_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<_> = (0..3)
        .map(|i| dir.path().join(format!("r{i}.json")))
        .collect();
    for (p, threads) in paths.iter().zip([None, Some("1"), Some("4")]) {
        let out = run_two_visit(
            &[
                "--analyses",
                "all",
                "--seed",
                "42",
                "--replicates",
                "200",
                "--out",
                p.to_str().unwrap(),
            ],
            threads,
        );
        assert!(out.status.success());
        assert!(out.stdout.is_empty());
    }
    let first = std::fs::read(&paths[0]).unwrap();
    for p in &paths[1..] {
        assert_eq!(first, std::fs::read(p).unwrap());
    }
    let other = run_two_visit(
        &[
            "--analyses",
            "simulate",
            "--seed",
            "43",
            "--replicates",
            "200",
        ],
        None,
    );
    let a = json(&run_two_visit(
        &[
            "--analyses",
            "simulate",
            "--seed",
            "42",
            "--replicates",
            "200",
        ],
        None,
    ));
    assert_ne!(a["analyses"], json(&other)["analyses"]);
}

#[test]
fn json_round_trips_byte_identical() {
    let out = run_two_visit(
        &["--analyses", "all", "--seed", "7", "--replicates", "100"],
        None,
    );
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let parsed: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(render_json(&parsed), text);
}

fn numbers(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Number(n) => out.push(n.to_string()),
        Value::Array(a) => a.iter().for_each(|x| numbers(x, out)),
        Value::Object(m) => m.values().for_each(|x| numbers(x, out)),
        _ => {}
    }
}

#[test]
fn text_report_carries_json_numbers() {
    let mut j = json(&run_two_visit(
        &["--analyses", "all", "--seed", "5", "--replicates", "60"],
        None,
    ));
    j["config"]["emit"] = "text".into();
    let t = run_two_visit(
        &[
            "--analyses",
            "all",
            "--seed",
            "5",
            "--replicates",
            "60",
            "--emit",
            "text",
        ],
        None,
    );
    assert!(t.status.success());
    let text = String::from_utf8(t.stdout).unwrap();
    assert_eq!(text, render_text(&j));
    let mut nums = Vec::new();
    numbers(&j, &mut nums);
    assert!(nums.len() > 100);
    for n in nums {
        assert!(text.contains(&n), "{n} missing from text report");
    }
}

#[test]
fn analysis_order_does_not_matter() {
    let a = json(&run_two_visit(
        &["--analyses", "wls,bi,mcnemar,trend"],
        None,
    ));
    let b = json(&run_two_visit(
        &["--analyses", "trend,mcnemar,bi,wls"],
        None,
    ));
    assert_eq!(a["analyses"], b["analyses"]);
    assert_eq!(a["verdict"], b["verdict"]);
}

#[test]
fn counts_json_matches_subject_csv() {
    let csv = RunConfig {
        analyses: vec![
            Analysis::Bi,
            Analysis::Mcnemar,
            Analysis::Wls,
            Analysis::Logit,
        ],
        ..RunConfig::new(data("two_visit.csv"), InputFormat::SubjectsCsv)
    };
    let from_csv = run(&csv).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t5.json");
    let dataset = blindsight_cli::load_dataset(&csv.input, csv.format).unwrap();
    blindsight_core::tables::write_count_json(&dataset, std::fs::File::create(&path).unwrap())
        .unwrap();
    let counts = RunConfig {
        input: path,
        format: InputFormat::CountsJson,
        ..csv.clone()
    };
    let from_counts = run(&counts).unwrap();
    assert_eq!(from_csv.analyses, from_counts.analyses);
}

#[test]
fn validate_reports_problems() {
    let ok = blindsight(
        &[
            "validate",
            "--input",
            data("two_visit.csv").to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(ok.status.code(), Some(2));
    assert_eq!(String::from_utf8_lossy(&ok.stdout).trim(), "seed required");

    let ok = blindsight(
        &[
            "validate",
            "--input",
            data("two_visit.csv").to_str().unwrap(),
            "--seed",
            "1",
        ],
        None,
    );
    assert!(ok.status.success());
    assert!(ok.stdout.is_empty());

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    let text = std::fs::read_to_string(data("two_visit.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    lines[4] = lines[4].replacen(",T,", ",X,", 1);
    lines[9] = lines[9].replacen(",T,", ",Y,", 1);
    std::fs::write(&bad, lines.join("\n")).unwrap();
    let out = blindsight(
        &[
            "validate",
            "--input",
            bad.to_str().unwrap(),
            "--analyses",
            "bi",
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
    let report = String::from_utf8_lossy(&out.stdout);
    assert!(report.contains("row 5"), "{report}");
    assert!(report.contains("row 10"), "{report}");
}

#[test]
fn validate_library_call() {
    let mut cfg = RunConfig::new(data("two_visit.csv"), InputFormat::SubjectsCsv);
    cfg.analyses = vec![Analysis::Simulate];
    assert_eq!(
        blindsight_cli::validate(&cfg),
        vec!["seed required".to_string()]
    );
    cfg.seed = Some(1);
    assert!(blindsight_cli::validate(&cfg).is_empty());
    cfg.alpha = 2.0;
    cfg.baseline = 3;
    cfg.analyses = vec![Analysis::Apportion];
    assert_eq!(blindsight_cli::validate(&cfg).len(), 2);
    cfg.input = data("missing.csv");
    assert!(blindsight_cli::validate(&cfg)
        .iter()
        .any(|p| p.contains("cannot read")));
}
