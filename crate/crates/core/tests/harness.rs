use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use qualia_core::harness::config::ExperimentConfig;
use qualia_core::harness::experiment::run_experiment;
use qualia_core::harness::output::{write_tables, HISTOGRAMS_CSV, LEARNING_CURVE_CSV, OBJECTIVES_CSV, SIGNAL_STATS_CSV};

fn small(env: &str, threads: usize) -> ExperimentConfig {
    ExperimentConfig::from_toml(&format!(
        "environment = \"{env}\"\ntrials = 6\ni_max = 20\nmaster_seed = 42\nthreads = {threads}\nmemory = \"full\"\nreturn_windows = [[10, 20]]\n\
         [[objectives]]\nkind = \"reinf_recent_sum\"\n[[objectives]]\nkind = \"entropy_perception\"\ngamma_q = 0.9\n"
    ))
    .unwrap()
}

fn read_tables(dir: &Path) -> Vec<(String, String)> {
    [LEARNING_CURVE_CSV, SIGNAL_STATS_CSV, HISTOGRAMS_CSV, OBJECTIVES_CSV]
        .iter()
        .map(|name| (name.to_string(), fs::read_to_string(dir.join(name)).unwrap()))
        .collect()
}

#[test]
fn tables_do_not_depend_on_thread_count() {
    for env in ["gridworld", "chain"] {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        write_tables(&run_experiment(&small(env, 1)).unwrap(), a.path()).unwrap();
        write_tables(&run_experiment(&small(env, 3)).unwrap(), b.path()).unwrap();
        assert_eq!(read_tables(a.path()), read_tables(b.path()), "{env}");
    }
}

#[test]
fn default_sweep_table_shapes() {
    let cfg = ExperimentConfig { trials: 2, ..ExperimentConfig::default() };
    let dir = tempfile::tempdir().unwrap();
    write_tables(&run_experiment(&cfg).unwrap(), dir.path()).unwrap();

    let mut curve = csv::Reader::from_path(dir.path().join(LEARNING_CURVE_CSV)).unwrap();
    assert_eq!(
        curve.headers().unwrap(),
        vec!["env", "baseline_c", "episode", "mean_return", "std_return", "stderr_return", "n_trials"]
    );
    let rows: Vec<csv::StringRecord> = curve.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 3 * 500);
    for row in &rows {
        let mean: f64 = row[3].parse().unwrap();
        assert!(mean.is_finite() && mean <= -8.0, "{row:?}");
        assert_eq!(&row[6], "2");
    }

    let mut totals = std::collections::BTreeMap::<(String, String, String), f64>::new();
    for row in csv::Reader::from_path(dir.path().join(HISTOGRAMS_CSV)).unwrap().records() {
        let row = row.unwrap();
        *totals.entry((row[1].to_string(), row[2].to_string(), row[3].to_string())).or_default() +=
            row[5].parse::<f64>().unwrap();
    }
    assert_eq!(totals.len(), 3 * 500 * 2);
    assert!(totals.values().all(|t| (t - 1.0).abs() < 1e-6));
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = small("chain", 2);
    assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    assert!(ExperimentConfig::from_toml("environment = \"chain\"\nbogus = 1\n").is_err());
    let one_trial = ExperimentConfig { trials: 1, ..ExperimentConfig::default() };
    assert!(one_trial.validate().is_err());
}

fn qualia(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_qualia"));
    cmd.args(args).env_remove("QUALIA_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stdout)))
}

#[test]
fn cli_run_writes_tables_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results");
    let config = dir.path().join("chain.toml");
    fs::write(
        &config,
        format!(
            "environment = \"chain\"\ntrials = 3\ni_max = 5\nwrite_traces = true\nbaseline_values = [0.0, -1.0]\noutput_dir = {:?}\n",
            out.display().to_string()
        ),
    )
    .unwrap();
    let result = qualia(&["run", "--config", config.to_str().unwrap()], &[("QUALIA_THREADS", "2")]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let report = stdout_json(&result);
    assert_eq!(report["threads"], 2);
    assert_eq!(report["trials"], 3);
    for name in [LEARNING_CURVE_CSV, SIGNAL_STATS_CSV, HISTOGRAMS_CSV, OBJECTIVES_CSV, "manifest.json", "traces_c0.csv", "traces_c1.csv"] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    let traces = fs::read_to_string(out.join("traces_c0.csv")).unwrap();
    let trials: std::collections::BTreeSet<&str> =
        traces.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(trials.len(), 3);

    let override_seed = qualia(
        &["run", "--config", config.to_str().unwrap(), "--seed", "9", "--episodes", "2", "--threads", "1"],
        &[],
    );
    assert!(override_seed.status.success());
    assert_eq!(stdout_json(&override_seed)["i_max"], 2);
}

#[test]
fn cli_error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "environment = \"maze\"\n").unwrap();
    assert_eq!(qualia(&["run", "--config", bad.to_str().unwrap()], &[]).status.code(), Some(2));

    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let good = dir.path().join("good.toml");
    fs::write(&good, "environment = \"chain\"\ntrials = 2\ni_max = 2\n").unwrap();
    let out = blocker.join("results");
    let result = qualia(&["run", "--config", good.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(result.status.code(), Some(3), "{}", String::from_utf8_lossy(&result.stderr));

    assert_eq!(qualia(&["accept", "--suite", "nonsense"], &[]).status.code(), Some(2));
    assert_eq!(qualia(&["oracle", "--env", "maze"], &[]).status.code(), Some(2));
}

#[test]
fn cli_checks() {
    let oracle = qualia(&["oracle", "--env", "gridworld"], &[]);
    assert!(oracle.status.success());
    assert_eq!(stdout_json(&oracle)["optimal_return"], -8.0);

    let accept = qualia(&["accept", "--suite", "gradient-checks"], &[]);
    assert!(accept.status.success());
    let text = String::from_utf8_lossy(&accept.stdout);
    assert!(text.contains("[PASS] criterion  6"), "{text}");

    let inv = qualia(&["check-invariance", "--measure", "mi", "--trials", "50"], &[]);
    assert!(inv.status.success());
    let report = stdout_json(&inv);
    assert_eq!(report["passed"], true);
    assert!(report["max_deviation"].as_f64().unwrap() <= 1e-12);
    assert!(report["check"].is_string());

    let demo = qualia(&["exploit-demo", "--env", "chain", "--c", "-2", "--episodes", "5", "--trials", "4"], &[]);
    assert!(demo.status.success(), "{}", String::from_utf8_lossy(&demo.stderr));
    let checks = stdout_json(&demo);
    assert!(checks.as_array().unwrap().iter().all(|c| c["passed"] == true));
}
