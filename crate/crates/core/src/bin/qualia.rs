use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use qualia_core::environments::{optimal_return_oracle, EnvironmentModel};
use qualia_core::harness::acceptance::{run_suite, CriterionResult};
use qualia_core::harness::config::{default_agent, ExperimentConfig};
use qualia_core::harness::experiment::run_experiment_with;
use qualia_core::harness::output::write_outputs;
use qualia_core::process::{write_trace_csv, TRACE_CSV_HEADER};
use qualia_core::robustness::{check_invariance, exploitability_demo, td_bonus_inversion_demo, Measure};
use qualia_core::{Error, Result};

const ACCEPTANCE_FAILURE: u8 = 4;

#[derive(Parser)]
#[command(name = "qualia", version, about = "Agent-environment process simulator and experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a baseline sweep described by a TOML config and write CSV results.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; 0 uses every core.
        #[arg(long, env = "QUALIA_THREADS")]
        threads: Option<usize>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Run an acceptance suite and print one verdict per criterion.
    Accept {
        #[arg(long, default_value = "all")]
        suite: String,
        /// Also write the results as JSON to this path.
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long, env = "QUALIA_THREADS")]
        threads: Option<usize>,
    },
    /// Print the optimal expected undiscounted return of an environment.
    Oracle {
        #[arg(long)]
        env: String,
    },
    /// Check that an information measure is unchanged by random re-encodings.
    CheckInvariance {
        /// entropy, mi or kl
        #[arg(long, default_value = "entropy")]
        measure: Measure,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Seed-coupled demonstrations that reward and TD-error bonuses can be undone.
    ExploitDemo {
        #[arg(long, default_value = "gridworld")]
        env: String,
        /// Reward bonus per non-terminal step.
        #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
        c: f64,
        #[arg(long, default_value_t = 0.5)]
        gamma_q: f64,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Serialize)]
struct RunReport<'a> {
    environment: &'a str,
    baseline_values: &'a [f64],
    trials: usize,
    i_max: usize,
    wall_seconds: f64,
    threads: usize,
    files: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Run { config, trials, seed, out, threads, episodes } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(v) = trials {
                cfg.trials = v;
            }
            if let Some(v) = seed {
                cfg.master_seed = v;
            }
            if let Some(v) = out {
                cfg.output_dir = v;
            }
            if let Some(v) = threads {
                cfg.threads = v;
            }
            if let Some(v) = episodes {
                cfg.i_max = v;
            }
            run(&cfg)
        }
        Command::Accept { suite, json, threads } => {
            if let Some(n) = threads {
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global()
                    .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            }
            let results = run_suite(&suite)?;
            for r in &results {
                println!("{r}");
            }
            if let Some(path) = json {
                write_json(&path, &results.iter().map(criterion_json).collect::<Vec<_>>())?;
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            println!("{} of {} criteria passed", results.len() - failed, results.len());
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(ACCEPTANCE_FAILURE) })
        }
        Command::Oracle { env } => {
            let model = EnvironmentModel::from_name(&env)?;
            let value = optimal_return_oracle(&model)?;
            println!("{}", serde_json::json!({ "environment": env, "optimal_return": value }));
            Ok(ExitCode::SUCCESS)
        }
        Command::CheckInvariance { measure, n, trials, seed } => {
            let check = check_invariance(measure, n, trials, seed)?;
            eprintln!(
                "[{}] {}: max deviation {:e}",
                if check.passed { "PASS" } else { "FAIL" },
                check.check,
                check.max_deviation
            );
            println!("{}", serde_json::to_string(&check).expect("report serialises"));
            Ok(verdict(check.passed))
        }
        Command::ExploitDemo { env, c, gamma_q, episodes, trials, seed } => {
            let model = EnvironmentModel::from_name(&env)?;
            let agent = default_agent(&env);
            let reward = exploitability_demo(&model, &agent, c, gamma_q, episodes, trials, seed)?;
            let td = td_bonus_inversion_demo(&model, &agent, c, episodes, trials, seed)?;
            let mut checks = Vec::new();
            for (prefix, report) in [("reward_bonus", &reward), ("td_bonus", &td)] {
                for check in &report.checks {
                    eprintln!(
                        "[{}] {prefix}/{}: max deviation {:e}",
                        if check.passed { "PASS" } else { "FAIL" },
                        check.check,
                        check.max_deviation
                    );
                    let mut check = check.clone();
                    check.check = format!("{prefix}/{}", check.check);
                    checks.push(check);
                }
            }
            println!("{}", serde_json::to_string(&checks).expect("report serialises"));
            Ok(verdict(reward.passed() && td.passed()))
        }
    }
}

fn verdict(passed: bool) -> ExitCode {
    if passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(ACCEPTANCE_FAILURE)
    }
}

fn run(cfg: &ExperimentConfig) -> Result<ExitCode> {
    cfg.validate()?;
    let dir = cfg.output_dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut dumps = Vec::new();
    if cfg.write_traces {
        for idx in 0..cfg.baseline_values.len() {
            let path = dir.join(format!("traces_c{idx}.csv"));
            let mut w = BufWriter::new(File::create(&path).map_err(|e| Error::io(&path, e))?);
            writeln!(w, "{TRACE_CSV_HEADER}").map_err(|e| Error::io(&path, e))?;
            dumps.push((path, w));
        }
    }
    let result = run_experiment_with(cfg, |group, trial, trace| match dumps.get_mut(group) {
        Some((path, w)) => write_trace_csv(w, trial, trace).map_err(|e| Error::io(path.as_path(), e)),
        None => Ok(()),
    })?;
    let mut extra = Vec::new();
    for (path, mut w) in dumps {
        w.flush().map_err(|e| Error::io(&path, e))?;
        extra.push(path);
    }
    let files = write_outputs(&result, &dir, &extra)?;
    let report = RunReport {
        environment: &cfg.environment,
        baseline_values: &cfg.baseline_values,
        trials: cfg.trials,
        i_max: cfg.i_max,
        wall_seconds: result.wall_seconds,
        threads: result.threads,
        files: files.iter().map(|p| p.display().to_string()).collect(),
    };
    println!("{}", serde_json::to_string_pretty(&report).expect("report serialises"));
    Ok(ExitCode::SUCCESS)
}

fn criterion_json(r: &CriterionResult) -> serde_json::Value {
    serde_json::json!({
        "id": r.id,
        "name": r.name,
        "measured": r.measured,
        "tolerance": r.tolerance,
        "passed": r.passed,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("report serialises");
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
