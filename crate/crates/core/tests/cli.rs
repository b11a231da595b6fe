//! End-to-end checks of the `greennet` binary: exit codes, artifact shapes,
//! and cross-command consistency.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_greennet")
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn solve_emits_the_energy_saving_plan() {
    let out = tempfile::tempdir().unwrap();
    let output = run(&[
        "solve",
        "--topology",
        &path_str(&data("two_link.json")),
        "--demand",
        &path_str(&data("two_streams.json")),
        "--config",
        &path_str(&data("config_energy_priority.json")),
        "--solver",
        "oracle",
        "--out",
        &path_str(out.path()),
    ]);
    assert!(output.status.success(), "{output:?}");
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(stdout.starts_with("solve ok:"), "{stdout}");

    let plan: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("plan.json")).unwrap())
            .unwrap();
    assert_eq!(plan["active_links"].as_array().unwrap().len(), 1);
    assert_eq!(plan["rates"]["s1"], 0.5);
    assert_eq!(plan["rates"]["s2"], 0.5);

    let validation: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out.path().join("validation.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(validation["ok"], true);
    assert_eq!(validation["violations"].as_array().unwrap().len(), 0);
}

#[test]
fn malformed_input_exits_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("broken.json");
    std::fs::write(&bad, "{ not json").unwrap();
    let output = run(&[
        "solve",
        "--topology",
        &path_str(&bad),
        "--demand",
        &path_str(&data("two_streams.json")),
        "--config",
        &path_str(&data("config_balanced.json")),
        "--out",
        &path_str(&dir.path().join("out")),
    ]);
    assert_eq!(output.status.code(), Some(1));
    let stderr = String::from_utf8(output.stderr).unwrap();
    assert!(stderr.contains("error:"), "{stderr}");
}

#[test]
fn unreachable_floor_exits_with_code_two() {
    for solver in ["oracle", "lagrangian"] {
        let out = tempfile::tempdir().unwrap();
        let output = run(&[
            "solve",
            "--topology",
            &path_str(&data("two_link.json")),
            "--demand",
            &path_str(&data("two_streams.json")),
            "--config",
            &path_str(&data("config_floor.json")),
            "--solver",
            solver,
            "--out",
            &path_str(out.path()),
        ]);
        assert_eq!(output.status.code(), Some(2), "{solver}");
    }
}

#[test]
fn unknown_flags_exit_with_code_one() {
    let output = run(&["solve", "--bogus"]);
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn compare_single_trial_reports_zero_gap() {
    let out = tempfile::tempdir().unwrap();
    let output = run(&[
        "compare",
        "--topology",
        &path_str(&data("two_link.json")),
        "--demand",
        &path_str(&data("two_streams.json")),
        "--config",
        &path_str(&data("config_balanced.json")),
        "--trials",
        "1",
        "--out",
        &path_str(out.path()),
    ]);
    assert!(output.status.success(), "{output:?}");
    let csv = std::fs::read_to_string(out.path().join("compare.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 2);
    let fields: Vec<&str> = rows[1].split(',').collect();
    assert_eq!(fields[0], "0");
    assert_eq!(fields[1], "0", "exact optimum on the base instance");
    assert_eq!(fields[2], "0", "heuristic matches it");
    assert_eq!(fields[3], "0", "gap");
}

#[test]
fn compare_zero_trials_writes_only_the_header() {
    let out = tempfile::tempdir().unwrap();
    let output = run(&[
        "compare",
        "--topology",
        &path_str(&data("two_link.json")),
        "--demand",
        &path_str(&data("two_streams.json")),
        "--config",
        &path_str(&data("config_balanced.json")),
        "--trials",
        "0",
        "--out",
        &path_str(out.path()),
    ]);
    assert!(output.status.success());
    let csv = std::fs::read_to_string(out.path().join("compare.csv")).unwrap();
    assert_eq!(
        csv.trim(),
        "instance,oracle_value,lagrangian_value,gap,oracle_ms,lagrangian_ms"
    );
}

#[test]
fn compare_gaps_stay_non_negative_across_perturbations() {
    let out = tempfile::tempdir().unwrap();
    let output = run(&[
        "compare",
        "--topology",
        &path_str(&data("two_link.json")),
        "--demand",
        &path_str(&data("two_streams.json")),
        "--config",
        &path_str(&data("config_balanced.json")),
        "--trials",
        "20",
        "--seed",
        "5",
        "--out",
        &path_str(out.path()),
    ]);
    assert!(output.status.success(), "{output:?}");
    let csv = std::fs::read_to_string(out.path().join("compare.csv")).unwrap();
    let mut rows = 0;
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        if !fields[3].is_empty() {
            let gap: f64 = fields[3].parse().unwrap();
            assert!(gap >= -1e-6, "{line}");
        }
        rows += 1;
    }
    assert_eq!(rows, 20);
}

#[test]
fn simulate_single_epoch_matches_solve_totals() {
    let solve_out = tempfile::tempdir().unwrap();
    let output = run(&[
        "solve",
        "--topology",
        &path_str(&data("two_link.json")),
        "--demand",
        &path_str(&data("two_streams.json")),
        "--config",
        &path_str(&data("config_energy_priority.json")),
        "--solver",
        "oracle",
        "--out",
        &path_str(solve_out.path()),
    ]);
    assert!(output.status.success());
    let plan: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(solve_out.path().join("plan.json")).unwrap(),
    )
    .unwrap();
    let energy = plan["objective"]["energy_sum"].as_f64().unwrap();
    let utility = plan["objective"]["utility_sum"].as_f64().unwrap();

    let sim_out = tempfile::tempdir().unwrap();
    let output = run(&[
        "simulate",
        "--topology",
        &path_str(&data("two_link.json")),
        "--config",
        &path_str(&data("config_energy_priority.json")),
        "--solver",
        "oracle",
        "--trace",
        &path_str(&data("single_epoch_trace.json")),
        "--out",
        &path_str(sim_out.path()),
    ]);
    assert!(output.status.success(), "{output:?}");
    let csv = std::fs::read_to_string(sim_out.path().join("telemetry.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 3, "one epoch, two session rows");
    let fields: Vec<&str> = rows[1].split(',').collect();
    // duration 1.0, so the totals equal the plan's breakdown.
    assert_eq!(fields[2].parse::<f64>().unwrap(), energy);
    assert_eq!(fields[3].parse::<f64>().unwrap(), utility);
}

#[test]
fn simulate_requires_a_trace_source() {
    let out = tempfile::tempdir().unwrap();
    let output = run(&[
        "simulate",
        "--topology",
        &path_str(&data("two_link.json")),
        "--config",
        &path_str(&data("config_balanced.json")),
        "--out",
        &path_str(out.path()),
    ]);
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn lagrangian_solve_writes_the_iteration_trace() {
    let out = tempfile::tempdir().unwrap();
    let output = run(&[
        "solve",
        "--topology",
        &path_str(&data("two_link.json")),
        "--demand",
        &path_str(&data("two_streams.json")),
        "--config",
        &path_str(&data("config_balanced.json")),
        "--solver",
        "lagrangian",
        "--iter-trace",
        "--out",
        &path_str(out.path()),
    ]);
    assert!(output.status.success(), "{output:?}");
    let csv = std::fs::read_to_string(out.path().join("iterations.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("t,dual_estimate,best_primal,subgradient_norm")
    );
    assert!(lines.count() >= 1);
}
