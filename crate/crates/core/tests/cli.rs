use std::path::Path;
use std::process::{Command, Output};

fn partel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_partel"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn generated_scenario_solves_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("s.json");
    let gen = partel(&[
        "gen",
        "--seed",
        "9",
        "--workers",
        "4",
        "--subcarriers",
        "6",
        "--out",
        path(&file),
    ]);
    assert_eq!(gen.status.code(), Some(0));
    let again = partel(&["gen", "--seed", "9", "--workers", "4", "--subcarriers", "6"]);
    assert_eq!(
        stdout(&again).trim_end(),
        std::fs::read_to_string(&file).unwrap().trim_end()
    );

    let out = partel(&["solve", "--scenario", path(&file), "--model-size", "500000"]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("scheme,seed,workers"));
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..5], ["support", "9", "4", "6", "500000"]);
    assert_eq!(row[7], "true");
}

#[test]
fn compare_fills_in_reductions() {
    let out = partel(&[
        "compare",
        "--seed",
        "2",
        "--workers",
        "6",
        "--subcarriers",
        "10",
    ]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    let rows: Vec<Vec<&str>> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[0][8], "");
    for row in &rows[1..] {
        assert!(row[8].parse::<f64>().unwrap() >= 0.0);
    }
}

#[test]
fn json_sidecar_holds_full_plans() {
    let dir = tempfile::tempdir().unwrap();
    let json = dir.path().join("plans.json");
    let out = partel(&[
        "solve",
        "--workers",
        "3",
        "--subcarriers",
        "4",
        "--json",
        path(&json),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(
        v[0]["plan"]["plan"]["assignment"].as_array().unwrap().len(),
        3
    );
    assert!(v[0]["solve_seconds"].is_null());
}

#[test]
fn sweep_simulate_and_cnn_planning_produce_tables() {
    let sweep = partel(&[
        "sweep",
        "--axis",
        "subcarriers",
        "--values",
        "8",
        "--seeds",
        "1",
        "--workers",
        "4",
    ]);
    assert_eq!(sweep.status.code(), Some(0));
    assert_eq!(stdout(&sweep).lines().count(), 3);

    let sim = partel(&[
        "simulate",
        "--workers",
        "4",
        "--subcarriers",
        "6",
        "--rounds",
        "3",
        "--samples",
        "100",
        "--model-size",
        "300",
        "--l1",
    ]);
    assert_eq!(sim.status.code(), Some(0));
    let text = stdout(&sim);
    assert_eq!(
        text.lines().next().unwrap(),
        "round,T,cumulative_T,loss,scheme,seed"
    );
    assert_eq!(text.lines().count(), 4);

    let cnn = partel(&["plan-cnn", "--workers", "6", "--subcarriers", "10"]);
    assert_eq!(cnn.status.code(), Some(0));
    let text = stdout(&cnn);
    assert!(text.lines().nth(1).unwrap().starts_with("W,266,60000,"));
    assert!(text.lines().nth(2).unwrap().starts_with("Z,226,11300,"));
}

#[test]
fn exit_codes() {
    // More workers than subcarriers leaves greedy FEEL workers without a channel.
    let infeasible = partel(&[
        "solve",
        "--scheme",
        "greedy-feel",
        "--workers",
        "5",
        "--subcarriers",
        "2",
    ]);
    assert_eq!(infeasible.status.code(), Some(2));

    let missing = partel(&["solve", "--scenario", "/nonexistent/scenario.json"]);
    assert_eq!(missing.status.code(), Some(1));
    let bad_tol = partel(&[
        "solve",
        "--workers",
        "2",
        "--subcarriers",
        "2",
        "--tol",
        "-1",
    ]);
    assert_eq!(bad_tol.status.code(), Some(1));
    let bad_flag = partel(&["solve", "--no-such-flag"]);
    assert_eq!(bad_flag.status.code(), Some(1));
}

#[test]
fn timing_is_opt_in() {
    let plain = partel(&["solve", "--workers", "3", "--subcarriers", "4"]);
    assert!(!stdout(&plain)
        .lines()
        .next()
        .unwrap()
        .contains("solve_seconds"));
    let timed = partel(&["solve", "--workers", "3", "--subcarriers", "4", "--timing"]);
    assert!(stdout(&timed)
        .lines()
        .next()
        .unwrap()
        .ends_with("solve_seconds"));
}
