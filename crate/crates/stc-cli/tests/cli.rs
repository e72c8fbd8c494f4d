//! End-to-end tests of the `stc` binary: exit codes, emitted files, and
//! determinism of the full command pipeline.

use std::path::Path;
use std::process::{Command, Output};

fn stc(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_stc"));
    cmd.args(args);
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("failed to spawn stc")
}

fn tiny_config_json(out_dir: &Path, k_max: usize, x0: Option<&str>) -> String {
    let initial = x0.unwrap_or("null");
    format!(
        r#"{{
  "network": {{
    "subsystemCount": 2,
    "regionSideLength": 10.0,
    "decayRatePerLength": 1.0,
    "seed": 3
  }},
  "run": {{
    "alphaLossBudget": 1.15,
    "gammaGainPenalty": 0.001,
    "etaInputPenalty": 0.001,
    "iterationCount": {k_max},
    "initialState": {initial},
    "gridStepSeconds": 0.02,
    "gridHorizonSeconds": 2.0
  }},
  "output": {{ "directory": "{}" }}
}}"#,
        out_dir.display()
    )
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path
}

fn count_data_rows(path: &Path) -> usize {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines().filter(|l| !l.trim().is_empty()).count() - 1
}

#[test]
fn run_writes_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results");
    let config = write_config(dir.path(), &tiny_config_json(&out, 2, None));
    let result = stc(&["run", "--config", config.to_str().unwrap()], &[]);
    assert!(
        result.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    for file in [
        "config.json",
        "system.json",
        "network_layout.csv",
        "records.csv",
        "trajectory.csv",
        "benchmark_trajectory.csv",
        "metrics.json",
    ] {
        assert!(out.join(file).is_file(), "missing {file}");
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["schemaVersion"], 1);
    assert!(metrics["metrics"]["nu"].as_f64().unwrap() <= 0.15 + 1e-9);
    // Config echo round-trips.
    let echoed = std::fs::read_to_string(out.join("config.json")).unwrap();
    let parsed = stc_cli::ExperimentConfig::from_json_str(&echoed).unwrap();
    assert_eq!(parsed.network.seed, 3);
}

#[test]
fn single_iteration_yields_single_record() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results");
    let config = write_config(dir.path(), &tiny_config_json(&out, 1, None));
    let result = stc(&["run", "--config", config.to_str().unwrap()], &[]);
    assert!(result.status.success());
    assert_eq!(count_data_rows(&out.join("records.csv")), 1);
}

#[test]
fn origin_start_zeroes_costs_and_mu() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results");
    let config = write_config(
        dir.path(),
        &tiny_config_json(&out, 2, Some("[0.0, 0.0, 0.0, 0.0]")),
    );
    let result = stc(&["run", "--config", config.to_str().unwrap()], &[]);
    assert!(result.status.success());
    let metrics: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    for mu in metrics["metrics"]["muPercent"].as_array().unwrap() {
        assert_eq!(mu.as_f64().unwrap(), 0.0);
    }
    let (_, rows) = {
        let text = std::fs::read_to_string(out.join("records.csv")).unwrap();
        let mut lines = text.lines().map(|l| l.trim_end_matches('\r'));
        let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
        let rows: Vec<Vec<String>> = lines
            .filter(|l| !l.is_empty())
            .map(|l| l.split(',').map(String::from).collect())
            .collect();
        (header, rows)
    };
    for row in rows {
        assert_eq!(row[5].parse::<f64>().unwrap(), 0.0);
    }
}

#[test]
fn invalid_config_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "{\n  \"network\": {\n");
    let result = stc(&["run", "--config", config.to_str().unwrap()], &[]);
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("line"), "no line info in: {stderr}");
}

#[test]
fn semantic_config_error_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results");
    let bad = tiny_config_json(&out, 2, None).replace("1.15", "0.9");
    let config = write_config(dir.path(), &bad);
    let result = stc(&["run", "--config", config.to_str().unwrap()], &[]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn coarse_grid_exits_with_code_three() {
    // Pick a seed whose single node is the unstable kind; a multi-second
    // hold can never satisfy the performance inequality there.
    let unstable_seed = (0..50)
        .find(|&seed| {
            let spec = stc_core::plant::NetworkSpec::new(1, 10.0, 1.0, seed);
            let net = stc_core::plant::generate_network(&spec).unwrap();
            net.kinds[0] == stc_core::plant::NodeKind::Square
        })
        .expect("some seed draws a square node");

    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results");
    let coarse = tiny_config_json(&out, 2, None)
        .replace("\"subsystemCount\": 2", "\"subsystemCount\": 1")
        .replace("\"seed\": 3", &format!("\"seed\": {unstable_seed}"))
        .replace("\"gridStepSeconds\": 0.02", "\"gridStepSeconds\": 3.0")
        .replace("\"gridHorizonSeconds\": 2.0", "\"gridHorizonSeconds\": 6.0");
    let config = write_config(dir.path(), &coarse);
    let result = stc(&["run", "--config", config.to_str().unwrap()], &[]);
    assert_eq!(
        result.status.code(),
        Some(3),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
}

#[test]
fn sweep_writes_aggregate_and_raw_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results");
    let mut config_text = tiny_config_json(&out, 1, None);
    config_text = config_text.replace(
        "\"output\"",
        "\"sweep\": { \"parameter\": \"alpha\", \"values\": [1.1, 1.3], \"seedsPerPoint\": 2 },\n  \"output\"",
    );
    let config = write_config(dir.path(), &config_text);
    let result = stc(
        &["sweep", "--config", config.to_str().unwrap(), "--raw"],
        &[("STC_THREADS", "2")],
    );
    assert!(
        result.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    assert_eq!(count_data_rows(&out.join("sweep.csv")), 2);
    assert_eq!(count_data_rows(&out.join("sweep_raw.csv")), 4);

    // Deterministic: a second pass bit-matches the aggregate table.
    let first = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let result = stc(
        &["sweep", "--config", config.to_str().unwrap()],
        &[("STC_THREADS", "1")],
    );
    assert!(result.status.success());
    let second = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn sweep_without_section_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results");
    let config = write_config(dir.path(), &tiny_config_json(&out, 1, None));
    let result = stc(&["sweep", "--config", config.to_str().unwrap()], &[]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn plotdata_on_empty_directory_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let result = stc(&["plotdata", "--out", empty.to_str().unwrap()], &[]);
    assert_eq!(result.status.code(), Some(2));
    assert_eq!(std::fs::read_dir(&empty).unwrap().count(), 0);
}

#[test]
fn plotdata_converts_run_results() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results");
    let config = write_config(dir.path(), &tiny_config_json(&out, 2, None));
    assert!(stc(&["run", "--config", config.to_str().unwrap()], &[])
        .status
        .success());
    let result = stc(&["plotdata", "--out", out.to_str().unwrap()], &[]);
    assert!(
        result.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&result.stderr)
    );
    for fig in ["fig1.csv", "fig2.csv", "fig3.csv", "fig4a.csv", "fig4b.csv", "fig5.csv"] {
        assert!(out.join(fig).is_file(), "missing {fig}");
    }
    // fig5 carries (delta, t_k, delta_k) rows.
    let text = std::fs::read_to_string(out.join("fig5.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap().trim_end(), "series,x,y");
    assert!(lines.next().unwrap().starts_with("delta,"));
}

#[test]
fn plotdata_converts_alpha_sweep_to_table1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results");
    let mut config_text = tiny_config_json(&out, 1, None);
    config_text = config_text.replace(
        "\"output\"",
        "\"sweep\": { \"parameter\": \"alpha\", \"values\": [1.1, 1.3], \"seedsPerPoint\": 1 },\n  \"output\"",
    );
    let config = write_config(dir.path(), &config_text);
    assert!(stc(&["sweep", "--config", config.to_str().unwrap()], &[])
        .status
        .success());
    let result = stc(&["plotdata", "--out", out.to_str().unwrap()], &[]);
    assert!(result.status.success());
    assert!(out.join("table1.csv").is_file());
    assert_eq!(
        std::fs::read_to_string(out.join("table1.csv")).unwrap(),
        std::fs::read_to_string(out.join("sweep.csv")).unwrap()
    );
}

#[test]
fn gen_network_writes_instance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("net");
    let config = write_config(dir.path(), &tiny_config_json(&out, 1, None));
    let result = stc(
        &["gen-network", "--config", config.to_str().unwrap(), "--seed", "9"],
        &[],
    );
    assert!(result.status.success());
    let system = std::fs::read_to_string(out.join("system.json")).unwrap();
    let sys = stc_core::plant::LtiSystem::from_json_str(&system).unwrap();
    assert_eq!(sys.state_dim(), 4);
    assert_eq!(sys.input_dim(), 2);
    // The pinned spec reloads to the same system.
    let spec_text = std::fs::read_to_string(out.join("network.json")).unwrap();
    let spec = stc_core::plant::NetworkSpec::from_json_str(&spec_text).unwrap();
    let regenerated = stc_core::plant::generate_network(&spec).unwrap();
    assert_eq!(regenerated.system, sys);
}

#[test]
fn bad_thread_count_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results");
    let mut config_text = tiny_config_json(&out, 1, None);
    config_text = config_text.replace(
        "\"output\"",
        "\"sweep\": { \"parameter\": \"alpha\", \"values\": [1.1], \"seedsPerPoint\": 1 },\n  \"output\"",
    );
    let config = write_config(dir.path(), &config_text);
    let result = stc(
        &["sweep", "--config", config.to_str().unwrap()],
        &[("STC_THREADS", "zero")],
    );
    assert_eq!(result.status.code(), Some(2));
}
