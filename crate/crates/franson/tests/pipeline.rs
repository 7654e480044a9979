//! End-to-end persistence and CLI behavior: a saved run must re-analyze
//! to the same report from either its raw tag files or its fringe CSVs,
//! and the command-line front end must expose the same pipeline.

use std::process::Command;

use franson::medium::parse_media_toml;
use franson::runner::{
    analyze_run_dir, builtin_media, builtin_scenario, load_scenario, report_run_dir, run_scenario,
    Overrides, ReportFormat, RunStatus,
};

fn reduced_overrides() -> Overrides {
    Overrides {
        seed: None,
        steps: Some(24),
        scans: Some(2),
        integration_s: Some(0.5),
        save_tags: true,
        feasibility_floor: None,
    }
}

fn franson(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_franson"))
        .args(args)
        .output()
        .expect("binary should spawn")
}

fn stdout_of(out: &std::process::Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}, stderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Both re-analysis paths (tag files and fringe CSVs) reconstruct the
/// live run exactly.
#[test]
fn saved_artifacts_reanalyze_to_the_same_result() {
    let media = parse_media_toml(builtin_media()).unwrap();
    let mut cfg = load_scenario(builtin_scenario("no_sample").unwrap())
        .unwrap()
        .resolve(&media)
        .unwrap();
    cfg.apply_overrides(&reduced_overrides());
    let dir = tempfile::tempdir().unwrap();
    let live = run_scenario(&cfg, Some(dir.path()), ReportFormat::Csv).unwrap();
    assert_eq!(live.status, RunStatus::Completed);

    let (scans, from_tags) = analyze_run_dir(dir.path()).unwrap();
    assert_eq!(scans, live.scans, "tag replay changed the fringe scans");
    assert_eq!(from_tags.row, live.row, "tag replay changed the report row");

    let (from_csv, text) = report_run_dir(dir.path()).unwrap();
    assert_eq!(from_csv.row, live.row, "CSV replay changed the report row");
    let saved = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(text, saved, "re-rendered report differs from the saved one");
}

/// `run --save-tags` writes a report that `analyze` (from tags) and
/// `report` (from CSVs) both reproduce byte for byte on stdout.
#[test]
fn cli_run_analyze_report_agree() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out_str = out_dir.to_str().unwrap();
    let run_stdout = stdout_of(&franson(&[
        "run",
        "no_sample",
        "--steps",
        "24",
        "--scans",
        "2",
        "--integration",
        "0.5",
        "--save-tags",
        "--out",
        out_str,
    ]));
    let saved = std::fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert_eq!(run_stdout, saved);
    assert!(saved.contains("no sample"));

    let analyze_stdout = stdout_of(&franson(&["analyze", out_str]));
    assert_eq!(analyze_stdout, saved, "analyze (tag replay) diverged");

    let report_stdout = stdout_of(&franson(&["report", out_str]));
    assert_eq!(report_stdout, saved, "report (CSV replay) diverged");
}

/// A scenario given as a TOML file path behaves exactly like the
/// built-in preset it copies.
#[test]
fn cli_runs_scenario_files() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bench.toml");
    std::fs::write(&file, builtin_scenario("no_sample").unwrap()).unwrap();
    let args = ["--steps", "12", "--scans", "1", "--integration", "0.5"];

    let mut from_file = vec!["run", file.to_str().unwrap()];
    from_file.extend_from_slice(&args);
    let mut from_name = vec!["run", "no_sample"];
    from_name.extend_from_slice(&args);

    assert_eq!(
        stdout_of(&franson(&from_file)),
        stdout_of(&franson(&from_name)),
        "file-based scenario diverged from the built-in"
    );
}

/// A thickness sweep emits one row per depth in a single aggregate
/// report, carrying feasible and infeasible entries side by side.
#[test]
fn cli_sweep_reports_feasible_and_infeasible_depths() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("sweep");
    let stdout = stdout_of(&franson(&[
        "sweep",
        "skim_milk_134um",
        "--thicknesses",
        "0,200,1556",
        "--steps",
        "24",
        "--scans",
        "1",
        "--integration",
        "0.5",
        "--out",
        out_dir.to_str().unwrap(),
    ]));
    let saved = std::fs::read_to_string(out_dir.join("report.csv")).unwrap();
    assert_eq!(stdout, saved);
    let lines: Vec<&str> = saved.lines().collect();
    assert_eq!(lines.len(), 4, "header plus one row per thickness:\n{saved}");
    assert!(lines[1].contains(",ok") && lines[2].contains(",ok"));
    assert!(
        lines[3].contains("infeasible"),
        "1556 um of skim at 0.5 s/step should be under the count floor:\n{saved}"
    );
    // Each depth also keeps its own artifact subdirectory.
    assert!(out_dir.join("t0um").join("report.csv").exists());
    assert!(out_dir.join("t1556um").join("report.csv").exists());
}

#[test]
fn cli_rejects_unknown_scenarios() {
    let out = franson(&["run", "definitely_not_a_preset"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("error:") && stderr.contains("built-ins"),
        "unexpected stderr:\n{stderr}"
    );
}

#[test]
fn cli_list_names_every_preset() {
    let stdout = stdout_of(&franson(&["list"]));
    for name in [
        "no_sample",
        "skim_milk_134um",
        "skim_milk_794um",
        "skim_milk_1556um",
        "two_percent_159um",
        "two_percent_235um",
        "two_percent_286um",
        "chicken_210um",
        "chicken_235um",
        "whole_milk_1mm",
    ] {
        assert!(stdout.contains(name), "list output missing {name}:\n{stdout}");
    }
}

/// Tag saving is refused without an output directory, rather than
/// silently dropping data.
#[test]
fn save_tags_without_out_dir_is_an_error() {
    let media = parse_media_toml(builtin_media()).unwrap();
    let mut cfg = load_scenario(builtin_scenario("no_sample").unwrap())
        .unwrap()
        .resolve(&media)
        .unwrap();
    cfg.apply_overrides(&reduced_overrides());
    let err = run_scenario(&cfg, None, ReportFormat::Csv);
    assert!(err.is_err(), "save_tags with no out dir must be rejected");
}
