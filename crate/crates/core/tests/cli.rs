use std::path::Path;
use std::process::{Command, Output};

use scenconf_core::engine::{self, AffineRow, Family, LinearScenarioProgram, ScenarioSolution, ScoreDistribution};

fn scenconf(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scenconf"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn files_in(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(dir)
        .map(|rd| rd.map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect())
        .unwrap_or_default();
    names.sort();
    names
}

#[test]
fn validate_vanilla_passes_and_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("v.json"),
        r#"{"family": {"name": "order"}, "m": 19, "delta": 0.1, "trials": 5000, "root_seed": 11}"#,
    )
    .unwrap();
    let o = scenconf(&["validate", "vanilla", "--config", "v.json", "--out-dir", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).contains("PASS miscoverage_rate"), "{}", stdout(&o));
    assert_eq!(
        files_in(&tmp.path().join("out")),
        vec!["vanilla_coverage_19_1_11.csv", "vanilla_coverage_19_1_11.json"]
    );
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/vanilla_coverage_19_1_11.json")).unwrap())
            .unwrap();
    assert_eq!(json["checks"][0]["exact"], 0.1);
    assert_eq!(json["config"]["delta"], 0.1);
    assert_eq!(json["pass"], true);
}

#[test]
fn seed_flag_overrides_config_and_names_files() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("c.json"),
        r#"{"family": {"name": "order"}, "m": 10, "epsilon": 0.5, "trials": 500, "out_dir": "from_file"}"#,
    )
    .unwrap();
    let o = scenconf(&["validate", "ccc", "--config", "c.json", "--seed", "42"], tmp.path());
    assert!(matches!(o.status.code(), Some(0) | Some(1)), "{}", stderr(&o));
    assert_eq!(
        files_in(&tmp.path().join("from_file")),
        vec!["ccc_coverage_10_4_42.csv", "ccc_coverage_10_4_42.json"]
    );
}

#[test]
fn malformed_config_exits_2_naming_the_field_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    for (body, field) in [
        (r#"{"family": {"name": "order"}, "m": 19, "delta": 0.1, "tirals": 10}"#, "tirals"),
        (r#"{"family": {"name": "order"}, "m": 19, "delta": 1.5}"#, "delta"),
        (r#"{"family": {"name": "order"}, "delta": 0.1}"#, "m"),
        (r#"{"family": {"name": "random_lp", "dimension": 2}, "m": 19, "delta": 0.1}"#, "family"),
    ] {
        std::fs::write(tmp.path().join("bad.json"), body).unwrap();
        let o = scenconf(&["validate", "vanilla", "--config", "bad.json", "--out-dir", "out"], tmp.path());
        assert_eq!(o.status.code(), Some(2), "{body}");
        assert!(stderr(&o).contains(field), "{body}: {}", stderr(&o));
        assert!(stdout(&o).is_empty());
        assert!(!tmp.path().join("out").exists(), "partial output for {body}");
    }
    let o = scenconf(&["validate", "vanilla", "--config", "missing.json"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let o = scenconf(&["validate", "nonsense", "--config", "bad.json"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn injected_wrong_prediction_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("f.json"),
        r#"{"family": {"name": "order"}, "m": 19, "delta": 0.1, "trials": 2000, "exact_offset": 0.05}"#,
    )
    .unwrap();
    let o = scenconf(&["validate", "vanilla", "--config", "f.json", "--out-dir", "out"], tmp.path());
    assert_eq!(o.status.code(), Some(1), "{}", stdout(&o));
    assert!(stdout(&o).contains("FAIL miscoverage_rate"));
    assert!(stdout(&o).contains("attempt=2"));
}

#[test]
fn calc_prints_values_and_rejects_bad_domains() {
    let tmp = tempfile::tempdir().unwrap();
    let o = scenconf(&["calc", "sample-size-vanilla", "--r", "0", "--delta", "0.05"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).lines().next(), Some("19"));
    let o = scenconf(&["calc", "expected-violation", "--m", "99", "--r", "0", "--d", "1"], tmp.path());
    assert_eq!(stdout(&o).lines().next(), Some("0.01 (= 1/100)"));
    let o = scenconf(&["calc", "binomial-tail", "--m", "10", "--k", "1", "--eps", "0"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stdout(&o).is_empty());
}

#[test]
fn generate_is_deterministic_and_round_trips_through_solve() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["a.json", "b.json"] {
        let o = scenconf(
            &["instance", "generate", "--family", "order", "--m", "5", "--seed", "7", "--output", name],
            tmp.path(),
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    let a = std::fs::read(tmp.path().join("a.json")).unwrap();
    assert_eq!(a, std::fs::read(tmp.path().join("b.json")).unwrap());

    for (family, flag) in [
        (Family::IntervalCover { dist: ScoreDistribution::default() }, "interval-cover"),
        (Family::RandomLp { dimension: 3 }, "random-lp"),
    ] {
        let o = scenconf(
            &["instance", "generate", "--family", flag, "--m", "25", "--seed", "99", "--output", "p.json"],
            tmp.path(),
        );
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let o = scenconf(&["instance", "solve", "p.json"], tmp.path());
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let from_file: ScenarioSolution = serde_json::from_str(&stdout(&o)).unwrap();
        let in_memory = engine::solve(&family.generate(25, 99).program).unwrap();
        assert_eq!(from_file, in_memory, "{flag}");
    }
}

#[test]
fn solve_three_point_interval() {
    let tmp = tempfile::tempdir().unwrap();
    let program = LinearScenarioProgram::from_json(
        r#"{
            "dimension": 2,
            "cost": [0.0, 1.0],
            "constraints": [
                [[1.0, -1.0], 0.2], [[-1.0, -1.0], -0.2],
                [[1.0, -1.0], 0.9], [[-1.0, -1.0], -0.9],
                [[1.0, -1.0], 0.4], [[-1.0, -1.0], -0.4]
            ],
            "box": [[0.0, 1.0], [0.0, 1.0]],
            "samples": [0, 0, 1, 1, 2, 2]
        }"#,
    )
    .unwrap();
    std::fs::write(tmp.path().join("three.json"), program.to_json()).unwrap();
    let o = scenconf(&["instance", "solve", "three.json"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let sol: ScenarioSolution = serde_json::from_str(&stdout(&o)).unwrap();
    assert!((sol.x_star[0] - 0.55).abs() < 1e-12 && (sol.x_star[1] - 0.35).abs() < 1e-12);
    assert_eq!(sol.support_indices, vec![0, 1]);

    // a fourth point allows one cascade stage: {0.2, 0.9} go, {0.4, 0.5} remain
    let groups = [0.2, 0.9, 0.4, 0.5]
        .iter()
        .map(|&w| vec![AffineRow::new(vec![1.0, -1.0], w), AffineRow::new(vec![-1.0, -1.0], -w)])
        .collect();
    let four = LinearScenarioProgram::grouped(vec![0.0, 1.0], groups, vec![[0.0, 1.0]; 2]).unwrap();
    std::fs::write(tmp.path().join("four.json"), four.to_json()).unwrap();
    let o = scenconf(&["instance", "solve", "four.json", "--discard", "2"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let sol: ScenarioSolution = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(sol.discarded_indices, vec![0, 1]);
    assert!((sol.x_star[0] - 0.45).abs() < 1e-12 && (sol.x_star[1] - 0.05).abs() < 1e-12);
    let o = scenconf(&["instance", "solve", "three.json", "--discard", "2"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn support_audit_on_random_lp() {
    let tmp = tempfile::tempdir().unwrap();
    let o = scenconf(
        &["instance", "generate", "--family", "random-lp", "--dim", "3", "--m", "40", "--seed", "5", "--output", "lp.json"],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    let o = scenconf(&["instance", "support", "lp.json"], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let audit: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let removal = audit["support_removal_test"].as_array().unwrap();
    assert_eq!(removal.len(), 3);
    assert_eq!(audit["support_fast_path"], audit["support_removal_test"]);
    assert_eq!(audit["agree"], true);
    let active = audit["active_indices"].as_array().unwrap();
    assert!(removal.iter().all(|i| active.contains(i)));
}

#[test]
fn schema_violation_exits_2_and_infeasible_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("bad.json"),
        r#"{"dimension": 1, "cost": [1.0], "constraints": [], "box": [[0, 1]], "extra": true}"#,
    )
    .unwrap();
    let o = scenconf(&["instance", "solve", "bad.json"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("extra"), "{}", stderr(&o));
    std::fs::write(
        tmp.path().join("dim.json"),
        r#"{"dimension": 2, "cost": [1.0], "constraints": [], "box": [[0, 1]]}"#,
    )
    .unwrap();
    assert_eq!(scenconf(&["instance", "solve", "dim.json"], tmp.path()).status.code(), Some(2));
    // x >= 2 inside [0, 1]
    std::fs::write(
        tmp.path().join("inf.json"),
        r#"{"dimension": 1, "cost": [1.0], "constraints": [[[-1.0], -2.0]], "box": [[0, 1]]}"#,
    )
    .unwrap();
    let o = scenconf(&["instance", "solve", "inf.json"], tmp.path());
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert_eq!(scenconf(&["instance", "support", "inf.json"], tmp.path()).status.code(), Some(3));
}

#[test]
fn byte_identical_reports_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("e.json"),
        r#"{"family": {"name": "interval_cover"}, "m": 19, "trials": 200, "test_points": 5, "root_seed": 3}"#,
    )
    .unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "4"] {
        let dir = format!("t{threads}");
        let o = scenconf(
            &["validate", "equivalence", "--config", "e.json", "--threads", threads, "--out-dir", &dir],
            tmp.path(),
        );
        assert!(matches!(o.status.code(), Some(0) | Some(1)));
        let stem = tmp.path().join(&dir).join("set_equivalence_19_0_3");
        outputs.push((
            std::fs::read(stem.with_extension("csv")).unwrap(),
            std::fs::read(stem.with_extension("json")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}
